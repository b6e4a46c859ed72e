#include "cdeshift/model_io.hpp"

#include "cdeshift/cde_nn.hpp"
#include "cdeshift/cde_series.hpp"
#include "cdeshift/error.hpp"
#include "cdeshift/stack_select.hpp"
#include "json_util.hpp"

#include <fstream>

namespace cdeshift {

Preprocessing Preprocessing::of(const Sample& train)
{
  return { train.covariate_names(), train.standardization(), train.response_range() };
}

Sample Preprocessing::apply(const Sample& raw) const
{
  if (raw.cols() != static_cast<Index>(covariate_names.size()))
    throw ValidationError("input has " + std::to_string(raw.cols()) + " covariates, model expects " +
                          std::to_string(covariate_names.size()));
  Eigen::MatrixXd x(raw.rows(), raw.cols());
  for (std::size_t k = 0; k < covariate_names.size(); ++k) {
    const auto col = raw.column_index(covariate_names[k]);
    if (!col)
      throw ValidationError("input is missing covariate '" + covariate_names[k] + "'");
    x.col(static_cast<Index>(k)) = raw.covariates().col(*col);
  }
  std::optional<Eigen::VectorXd> z;
  if (raw.labeled())
    z = raw.response();
  Sample ordered(std::move(x), covariate_names, std::move(z), std::nullopt, response_range);
  return standardization ? standardize(ordered, standardization) : ordered;
}

Sample Preprocessing::apply(const Sample& raw, const Eigen::VectorXd& raw_z) const
{
  if (raw_z.size() != raw.rows())
    throw ValidationError("response length does not match the covariate rows");
  // Responses in original units; rescale with the training range.
  const Eigen::VectorXd z = response_range ? rescale_response(raw_z, response_range).z : raw_z;
  return apply(raw.with_response(z));
}

nlohmann::json Preprocessing::to_json() const
{
  nlohmann::json j = { { "covariate_names", covariate_names } };
  if (standardization) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& c : *standardization)
      s.push_back({ { "mean", c.mean }, { "sd", c.sd } });
    j["standardization"] = std::move(s);
  } else {
    j["standardization"] = nullptr;
  }
  j["response_range"] = response_range ? nlohmann::json{ { "min", response_range->min },
                                                         { "max", response_range->max } }
                                       : nlohmann::json(nullptr);
  return j;
}

Preprocessing Preprocessing::from_json(const nlohmann::json& j)
{
  Preprocessing p;
  p.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
  if (j.contains("standardization") && !j["standardization"].is_null()) {
    std::vector<ColumnStats> s;
    for (const auto& c : j["standardization"])
      s.push_back({ c.at("mean").get<double>(), c.at("sd").get<double>() });
    p.standardization = std::move(s);
  }
  if (j.contains("response_range") && !j["response_range"].is_null())
    p.response_range = ResponseRange{ j["response_range"].at("min").get<double>(),
                                      j["response_range"].at("max").get<double>() };
  return p;
}

EstimatorPtr estimator_from_json(const nlohmann::json& j)
{
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "nn" || kind == "ker-nn")
    return std::make_shared<NnCdeModel>(NnCdeModel::from_json(j));
  if (kind == "series")
    return std::make_shared<SeriesModel>(SeriesModel::from_json(j));
  if (kind == "stacked") {
    std::vector<EstimatorPtr> comps;
    for (const auto& c : j.at("components"))
      comps.push_back(estimator_from_json(c));
    const auto alpha = detail::vector_from_json(j.at("alpha"));
    const auto p = alpha.size();
    return std::make_shared<StackedModel>(std::move(comps), alpha,
                                          detail::matrix_from_json(j.at("B"), p),
                                          detail::vector_from_json(j.at("b")),
                                          j.at("objective").get<double>());
  }
  throw ValidationError("unknown model kind '" + kind + "'");
}

nlohmann::json ModelBundle::to_json() const
{
  nlohmann::json j = { { "format", "cdeshift-model" },
                       { "version", 1 },
                       { "model", model->to_json() },
                       { "preprocessing", preprocessing.to_json() } };
  j["weights"] = weights ? weights->to_json() : nlohmann::json(nullptr);
  return j;
}

ModelBundle ModelBundle::from_json(const nlohmann::json& j)
{
  if (j.value("format", std::string()) != "cdeshift-model")
    throw ValidationError("not a model file");
  ModelBundle b;
  b.model = estimator_from_json(j.at("model"));
  b.preprocessing = Preprocessing::from_json(j.at("preprocessing"));
  if (j.contains("weights") && !j["weights"].is_null())
    b.weights = WeightModel::from_json(j["weights"]);
  return b;
}

void save_bundle(const std::string& path, const ModelBundle& bundle)
{
  std::ofstream out(path);
  if (!out)
    throw ValidationError("cannot write '" + path + "'");
  out << bundle.to_json().dump(1) << '\n';
}

ModelBundle load_bundle(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot read '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model file '" + path + "' is not valid JSON: " + e.what(), 0);
  }
  try {
    return ModelBundle::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("model file '" + path + "' is malformed: " + e.what());
  }
}

} // namespace cdeshift
