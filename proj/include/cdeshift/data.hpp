#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cdeshift {

using Index = Eigen::Index;

struct ColumnStats
{
  double mean = 0.0;
  double sd = 1.0;
};

struct ResponseRange
{
  double min = 0.0;
  double max = 1.0;
};

//! A table of observations: covariates plus an optional response in [0,1].
//!
//! Values are immutable once constructed; the constructor enforces the
//! invariants (finite covariates, response length and range, positive
//! standardization scales).
class Sample
{
public:
  Sample() = default;
  Sample(Eigen::MatrixXd covariates,
         std::vector<std::string> covariate_names,
         std::optional<Eigen::VectorXd> response = std::nullopt,
         std::optional<std::vector<ColumnStats>> standardization = std::nullopt,
         std::optional<ResponseRange> response_range = std::nullopt);

  Index rows() const { return covariates_.rows(); }
  Index cols() const { return covariates_.cols(); }
  bool labeled() const { return response_.has_value(); }

  const Eigen::MatrixXd& covariates() const { return covariates_; }
  //! Throws ValidationError for an unlabeled sample.
  const Eigen::VectorXd& response() const;
  const std::vector<std::string>& covariate_names() const { return names_; }
  const std::optional<std::vector<ColumnStats>>& standardization() const
  {
    return standardization_;
  }
  const std::optional<ResponseRange>& response_range() const
  {
    return response_range_;
  }

  Eigen::VectorXd row(Index i) const { return covariates_.row(i).transpose(); }

  //! Rows in the given order (metadata carried over).
  Sample select_rows(const std::vector<Index>& rows) const;
  //! Same rows without the response column.
  Sample without_response() const;
  //! Same covariates with a new response.
  Sample with_response(Eigen::VectorXd response,
                       std::optional<ResponseRange> range = std::nullopt) const;
  //! Row-wise concatenation; column names must agree.
  static Sample concat(const Sample& top, const Sample& bottom);

  //! Column index for a name, or nullopt.
  std::optional<Index> column_index(const std::string& name) const;

private:
  Eigen::MatrixXd covariates_;
  std::vector<std::string> names_;
  std::optional<Eigen::VectorXd> response_;
  std::optional<std::vector<ColumnStats>> standardization_;
  std::optional<ResponseRange> response_range_;
};

//! Header row plus numeric body. When `has_response` the last column is the
//! response and must already lie in [0,1].
Sample load_table(const std::string& path, bool has_response);
Sample read_table(std::istream& in, bool has_response);

//! Writes covariates, then any extra named columns, then `z` if labeled.
void write_table(std::ostream& out,
                 const Sample& sample,
                 const std::vector<std::pair<std::string, Eigen::VectorXd>>&
                   extra_columns = {});
void save_table(const std::string& path,
                const Sample& sample,
                const std::vector<std::pair<std::string, Eigen::VectorXd>>&
                  extra_columns = {});

//! Per-column (x - mean) / sd. Without `stats`, the sample mean and sample
//! standard deviation (divisor n - 1) of this sample are used.
Sample standardize(const Sample& sample,
                   const std::optional<std::vector<ColumnStats>>& stats = std::nullopt);

struct RescaledResponse
{
  Eigen::VectorXd z;
  ResponseRange range;
  std::size_t clipped = 0;
};

//! Maps raw responses to [0,1] by (z - min) / (max - min), clipping
//! out-of-range values. Without `range` the observed min and max are used.
RescaledResponse rescale_response(const Eigen::VectorXd& z_raw,
                                  const std::optional<ResponseRange>& range = std::nullopt);
Eigen::VectorXd inverse_rescale(const Eigen::VectorXd& z, const ResponseRange& range);

struct SplitSpec
{
  double train_fraction = 0.5;
  double validation_fraction = 0.25;
  double test_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitIndices
{
  std::vector<Index> train;
  std::vector<Index> validation;
  std::vector<Index> test;
};

struct SplitSample
{
  Sample train;
  Sample validation;
  Sample test;
};

//! Seeded partition with sizes round(f * n) for train and validation and the
//! remainder for test. Each part lists its rows in ascending order.
SplitIndices split_indices(Index n, const SplitSpec& spec);
SplitSample split(const Sample& sample, const SplitSpec& spec);

} // namespace cdeshift
