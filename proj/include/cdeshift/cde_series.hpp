#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/estimator.hpp"
#include "cdeshift/losses.hpp"

#include <string>
#include <vector>

namespace cdeshift {

//! Orthonormal basis for the response on [0,1].
//!
//! cosine:  phi_1 = 1, phi_i(z) = sqrt(2) cos(pi (i-1) z).
//! fourier: phi_1 = 1, phi_2k(z) = sqrt(2) sin(2 pi k z),
//!          phi_2k+1(z) = sqrt(2) cos(2 pi k z).
enum class ResponseBasis
{
  cosine,
  fourier
};

std::string to_string(ResponseBasis b);
ResponseBasis response_basis_from_string(const std::string& s);

//! phi_i(z), i starting at 1.
double basis_value(ResponseBasis basis, Index i, double z);

//! Top eigenpairs of the Gram matrix exp(-|x_i - x_j|^2 / (4 epsilon)),
//! descending, truncated at 1e-10 times the largest eigenvalue. Each
//! eigenvector's first entry of largest magnitude is positive.
struct GramDecomposition
{
  Eigen::MatrixXd eigvecs;
  Eigen::VectorXd eigvals;
  double epsilon = 0.0;

  Index usable_rank() const { return eigvals.size(); }
};

GramDecomposition decompose_gram(const Eigen::MatrixXd& x, double epsilon);

//! Number of Gram decompositions performed by this process.
std::size_t gram_decomposition_count();

class SeriesModel : public ConditionalDensityEstimator
{
public:
  SeriesModel(Eigen::MatrixXd train_x,
              double epsilon,
              Eigen::MatrixXd eigvecs,
              Eigen::VectorXd eigvals,
              Eigen::MatrixXd coeffs,
              std::vector<Index> covariate_subset,
              Index input_dimension,
              ResponseBasis basis = ResponseBasis::cosine,
              std::size_t grid_size = kDefaultGridSize);

  static SeriesModel fit(const Sample& labeled_train,
                         double epsilon,
                         Index I,
                         Index J,
                         std::vector<Index> subset = {},
                         ResponseBasis basis = ResponseBasis::cosine,
                         std::size_t grid_size = kDefaultGridSize);

  //! Reuses a decomposition of the (subset-restricted) training covariates.
  static SeriesModel from_decomposition(const Sample& labeled_train,
                                        const GramDecomposition& gram,
                                        Index I,
                                        Index J,
                                        std::vector<Index> subset,
                                        ResponseBasis basis = ResponseBasis::cosine,
                                        std::size_t grid_size = kDefaultGridSize);

  Index input_dimension() const override { return input_dim_; }
  std::size_t grid_size() const override { return grid_size_; }
  DensityGrid predict(const Eigen::VectorXd& x) const override;
  std::string kind() const override { return "series"; }
  nlohmann::json to_json() const override;
  static SeriesModel from_json(const nlohmann::json& j);

  //! psi_j(x) = sqrt(n) / l_j sum_k v_j(x_k) K(x, x_k) for a full covariate row.
  Eigen::VectorXd nystrom(const Eigen::VectorXd& x) const;

  Index I() const { return coeffs_.rows(); }
  Index J() const { return coeffs_.cols(); }
  double epsilon() const { return epsilon_; }
  ResponseBasis basis() const { return basis_; }
  const Eigen::MatrixXd& eigvecs() const { return eigvecs_; }
  const Eigen::VectorXd& eigvals() const { return eigvals_; }
  const Eigen::MatrixXd& coeffs() const { return coeffs_; }
  const std::vector<Index>& covariate_subset() const { return subset_; }

private:
  Eigen::MatrixXd train_x_;
  double epsilon_;
  Eigen::MatrixXd eigvecs_;
  Eigen::VectorXd eigvals_;
  Eigen::MatrixXd coeffs_;
  std::vector<Index> subset_;
  Index input_dim_;
  ResponseBasis basis_;
  std::size_t grid_size_;
  Eigen::MatrixXd basis_grid_; // G x I
};

//! alpha_ij = (1/n) sum_k phi_i(z_k) sqrt(n) v_j(x_k).
Eigen::MatrixXd series_coefficients(const Eigen::VectorXd& z,
                                    const Eigen::MatrixXd& eigvecs,
                                    Index I,
                                    ResponseBasis basis);

//! Fraction of query rows whose eigenfunction vector is small,
//! |psi(x)| < threshold * sqrt(J); the training rows have mean |psi|^2 = J.
double extrapolation_fraction(const SeriesModel& model,
                              const Eigen::MatrixXd& queries,
                              double threshold = 0.1);

struct SeriesGrid
{
  std::vector<Index> I;
  std::vector<Index> J;
  std::vector<double> epsilons;
};

struct SeriesTuningRow
{
  Index I;
  Index J;
  double epsilon;
  double loss;
};

struct SeriesFit
{
  SeriesModel model;
  std::vector<SeriesTuningRow> loss_table;
  double loss;
};

//! Grid search with one Gram decomposition per epsilon. J values above the
//! usable rank of a decomposition are skipped. Coefficients are always plain
//! labeled-sample averages; the loss variant only drives selection. Ties go
//! to smaller (I, J), then larger epsilon.
SeriesFit tune_series(const Sample& labeled_train,
                      const SeriesGrid& grid,
                      const Sample& labeled_val,
                      const Eigen::VectorXd& val_weights,
                      const Sample& unlabeled_val,
                      LossVariant loss_variant,
                      std::vector<Index> subset = {},
                      ResponseBasis basis = ResponseBasis::cosine,
                      std::size_t grid_size = kDefaultGridSize);

} // namespace cdeshift
