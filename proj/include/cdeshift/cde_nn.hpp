#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/estimator.hpp"
#include "cdeshift/losses.hpp"

#include <span>
#include <string>
#include <vector>

namespace cdeshift {

enum class NnVariant
{
  histogram, //!< weighted nearest-neighbor histogram
  kernel     //!< weighted kernel nearest-neighbor smoother
};

std::string to_string(NnVariant v);

//! Memory-based conditional density estimator built from the N labeled
//! training rows nearest to the query, each weighted by its importance weight
//! (all ones for the uncorrected estimator).
//!
//! histogram: B equal bins on [0,1], half-open except the last; bin mass is
//!   the weight sum of neighbors whose response falls in it.
//! kernel: sum_k w_k exp(-(z - z_k)^2 / (4 epsilon)).
//! Both are sampled on the shared grid and renormalized with the trapezoid
//! rule; a neighborhood with zero total weight yields the flagged uniform
//! density.
class NnCdeModel : public ConditionalDensityEstimator
{
public:
  NnCdeModel(Eigen::MatrixXd train_x,
             Eigen::VectorXd train_z,
             Eigen::VectorXd weights,
             NnVariant variant,
             Index n_neighbors,
             Index bins,
             double epsilon,
             std::vector<Index> covariate_subset,
             Index input_dimension,
             std::size_t grid_size = kDefaultGridSize);

  //! Fits on a labeled sample (covariates restricted to `subset`, empty = all).
  static NnCdeModel fit(const Sample& labeled_train,
                        const Eigen::VectorXd& weights,
                        NnVariant variant,
                        Index n_neighbors,
                        Index bins,
                        double epsilon,
                        std::vector<Index> subset = {},
                        std::size_t grid_size = kDefaultGridSize);

  Index input_dimension() const override { return input_dim_; }
  std::size_t grid_size() const override { return grid_size_; }
  DensityGrid predict(const Eigen::VectorXd& x) const override;
  std::string kind() const override { return variant_ == NnVariant::histogram ? "nn" : "ker-nn"; }
  nlohmann::json to_json() const override;
  static NnCdeModel from_json(const nlohmann::json& j);

  NnVariant variant() const { return variant_; }
  Index n_neighbors() const { return n_neighbors_; }
  Index bins() const { return bins_; }
  double epsilon() const { return epsilon_; }
  const std::vector<Index>& covariate_subset() const { return subset_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::MatrixXd& train_x() const { return train_x_; }
  const Eigen::VectorXd& train_z() const { return train_z_; }

  //! Neighbor rows of a (full-dimension) query, nearest first.
  std::vector<Index> neighbors(const Eigen::VectorXd& x, Index count) const;

  //! Density from an explicit neighbor list, for grid tuning.
  DensityGrid density_from_neighbors(std::span<const Index> rows,
                                     Index bins,
                                     double epsilon) const;

private:
  Eigen::MatrixXd train_x_;
  Eigen::VectorXd train_z_;
  Eigen::VectorXd weights_;
  NnVariant variant_;
  Index n_neighbors_;
  Index bins_;
  double epsilon_;
  std::vector<Index> subset_;
  Index input_dim_;
  std::size_t grid_size_;
};

DensityGrid histogram_density(std::span<const double> z,
                              std::span<const double> w,
                              Index bins,
                              std::size_t grid_size);
DensityGrid kernel_density(std::span<const double> z,
                           std::span<const double> w,
                           double epsilon,
                           std::size_t grid_size);

struct NnGrid
{
  std::vector<Index> n_neighbors;
  std::vector<Index> bins;       //!< histogram only
  std::vector<double> epsilons;  //!< kernel only
};

struct NnTuningRow
{
  Index n_neighbors;
  Index bins;     //!< 0 for the kernel variant
  double epsilon; //!< 0 for the histogram variant
  double loss;
};

struct NnFit
{
  NnCdeModel model;
  std::vector<NnTuningRow> loss_table;
  double loss;
};

//! Grid search over (N, B) or (N, epsilon).
//!
//! shift_corrected: training weights as given, validation loss with the
//!   labeled validation weights and the unlabeled validation sample.
//! labeled_only: training weights replaced by ones, labeled-only loss.
//! Ties go to smaller N, then smaller B / larger epsilon.
NnFit fit_nn_cde(const Sample& labeled_train,
                 const Eigen::VectorXd& train_weights,
                 NnVariant variant,
                 const NnGrid& grid,
                 const Sample& labeled_val,
                 const Eigen::VectorXd& val_weights,
                 const Sample& unlabeled_val,
                 LossVariant loss_variant,
                 std::vector<Index> subset = {},
                 std::size_t grid_size = kDefaultGridSize);

} // namespace cdeshift
