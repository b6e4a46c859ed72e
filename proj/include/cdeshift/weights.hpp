#pragma once

#include "cdeshift/data.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace cdeshift {

//! Nearest-neighbor importance-weight estimator of beta(x) = f_U(x) / f_L(x).
//!
//! beta(x) = (1/M) (n_L/n_U) * #{unlabeled training points within distance r
//! of x}, where r is the distance from x to its M-th nearest labeled training
//! point. Distances are Euclidean over `covariate_subset`; points at exactly
//! distance r count as inside.
struct WeightModel
{
  Eigen::MatrixXd labeled_train;   //!< restricted to covariate_subset
  Eigen::MatrixXd unlabeled_train; //!< restricted to covariate_subset
  Index M = 1;
  std::vector<Index> covariate_subset;
  Index input_dimension = 0;

  Index n_labeled() const { return labeled_train.rows(); }
  Index n_unlabeled() const { return unlabeled_train.rows(); }

  nlohmann::json to_json() const;
  static WeightModel from_json(const nlohmann::json& j);
};

//! `subset` empty means all columns.
WeightModel fit_weight_model(const Sample& labeled_train,
                             const Sample& unlabeled_train,
                             Index M,
                             std::vector<Index> subset = {});

double predict_beta(const WeightModel& model, const Eigen::VectorXd& x);
Eigen::VectorXd predict_beta(const WeightModel& model, const Eigen::MatrixXd& x);

//! mean(beta_L^2) - 2 mean(beta_U), the weighted loss up to a constant.
double beta_loss(const Eigen::VectorXd& beta_labeled, const Eigen::VectorXd& beta_unlabeled);
double beta_loss(const WeightModel& model, const Sample& labeled_val, const Sample& unlabeled_val);

struct MSelection
{
  WeightModel model;
  std::vector<std::pair<Index, double>> loss_table; //!< (M, validation loss) in grid order
  double loss = 0.0;
};

//! Fits one model per M and keeps the smallest validation loss; ties go to
//! the smaller M.
MSelection select_M(const Sample& labeled_train,
                    const Sample& unlabeled_train,
                    const Sample& labeled_val,
                    const Sample& unlabeled_val,
                    const std::vector<Index>& m_grid,
                    std::vector<Index> subset = {});

struct CleaningResult
{
  Sample sample;                //!< target_size pool rows with nonzero weight
  std::vector<Index> pool_rows; //!< their rows in the pool, ascending
  double zero_weight_fraction = 0.0; //!< over the whole pool
  Index M = 0;                  //!< neighbor count of the preliminary model
  std::vector<std::pair<Index, double>> loss_table;
};

//! Replaces labeled data in regions without unlabeled support: a preliminary
//! estimator (labeled_current vs unlabeled, M chosen on a seeded 70/30 split)
//! scores every pool row, and the first `target_size` rows of a seeded shuffle
//! with nonzero weight are returned.
CleaningResult clean_zero_weights(const Sample& labeled_pool,
                                  const Sample& labeled_current,
                                  const Sample& unlabeled,
                                  Index target_size,
                                  const std::vector<Index>& prelim_m_grid,
                                  std::uint64_t seed);

//! (sum w)^2 / sum w^2.
double effective_sample_size(std::span<const double> weights);
double effective_sample_size(const Eigen::VectorXd& weights);

} // namespace cdeshift
