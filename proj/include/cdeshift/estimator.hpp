#pragma once

#include "cdeshift/density_grid.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace cdeshift {

//! A fitted conditional density estimator f(z | x).
//!
//! `predict` takes a full covariate row; estimators restricted to a covariate
//! subset select their columns internally.
class ConditionalDensityEstimator
{
public:
  virtual ~ConditionalDensityEstimator() = default;

  virtual Eigen::Index input_dimension() const = 0;
  virtual std::size_t grid_size() const = 0;
  virtual DensityGrid predict(const Eigen::VectorXd& x) const = 0;
  //! Short identifier, e.g. "ker-nn".
  virtual std::string kind() const = 0;
  //! Hyperparameters and everything needed to rebuild the model.
  virtual nlohmann::json to_json() const = 0;

  //! One density per row of `x`.
  std::vector<DensityGrid> predict_all(const Eigen::MatrixXd& x) const;
};

using EstimatorPtr = std::shared_ptr<const ConditionalDensityEstimator>;

} // namespace cdeshift
