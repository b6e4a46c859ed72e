#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/estimator.hpp"
#include "cdeshift/weights.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace cdeshift {

//! How raw input tables map onto a model's covariate space.
struct Preprocessing
{
  std::vector<std::string> covariate_names;
  std::optional<std::vector<ColumnStats>> standardization;
  std::optional<ResponseRange> response_range;

  static Preprocessing of(const Sample& standardized_train);

  //! Reorders columns by name and standardizes. A response already in [0,1]
  //! is carried over unchanged.
  Sample apply(const Sample& raw) const;
  //! Same, attaching raw responses rescaled (and clipped) with `response_range`.
  Sample apply(const Sample& raw, const Eigen::VectorXd& raw_z) const;

  nlohmann::json to_json() const;
  static Preprocessing from_json(const nlohmann::json& j);
};

//! Rebuilds an estimator from its to_json() form.
EstimatorPtr estimator_from_json(const nlohmann::json& j);

//! A saved model: estimator, preprocessing, and optionally its weight model.
struct ModelBundle
{
  EstimatorPtr model;
  Preprocessing preprocessing;
  std::optional<WeightModel> weights;

  nlohmann::json to_json() const;
  static ModelBundle from_json(const nlohmann::json& j);
};

void save_bundle(const std::string& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& path);

} // namespace cdeshift
