#include "cdeshift/pipeline.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/neighbors.hpp"

#include <algorithm>
#include <limits>

namespace cdeshift {

namespace {

template <typename F>
auto stage(const char* name, F&& body)
{
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<Index> usable(const std::vector<Index>& grid, Index limit)
{
  std::vector<Index> out;
  for (Index v : grid)
    if (v >= 1 && v <= limit)
      out.push_back(v);
  if (out.empty())
    out.push_back(limit);
  return out;
}

struct SubsetFit
{
  std::shared_ptr<const StackedModel> model;
  std::vector<SeriesTuningRow> series_table;
  std::vector<NnTuningRow> ker_table;
  double loss = 0.0;
  std::map<std::string, double> component_losses;
};

LossTerms terms_for(bool corrected,
                    std::span<const DensityGrid> dl,
                    std::span<const DensityGrid> du,
                    const Sample& labeled,
                    const Eigen::VectorXd& w)
{
  return corrected ? shifted_loss_terms(du, dl, labeled.response(), w)
                   : labeled_loss_terms(dl, labeled.response());
}

} // namespace

std::string to_string(SelectionMode m)
{
  switch (m) {
    case SelectionMode::none: return "none";
    case SelectionMode::stepwise: return "stepwise";
    case SelectionMode::exhaustive: return "exhaustive";
  }
  return "none";
}

SelectionMode selection_mode_from_string(const std::string& s)
{
  if (s == "none" || s == "all")
    return SelectionMode::none;
  if (s == "stepwise")
    return SelectionMode::stepwise;
  if (s == "exhaustive")
    return SelectionMode::exhaustive;
  throw ValidationError("unknown selection mode '" + s + "'");
}

PipelineData prepare_data(const Sample& labeled, const Sample& unlabeled, const SplitSpec& split_spec)
{
  if (labeled.covariate_names() != unlabeled.covariate_names())
    throw ValidationError("labeled and unlabeled tables have different covariate columns");
  SplitSpec uspec = split_spec;
  uspec.seed = split_spec.seed + 1;
  const auto ls = split(labeled, split_spec);
  const auto us = split(unlabeled, uspec);
  const Sample lt = standardize(ls.train);
  const auto& stats = lt.standardization();
  return { lt,
           standardize(ls.validation, stats),
           standardize(ls.test, stats),
           standardize(us.train, stats),
           standardize(us.validation, stats),
           standardize(us.test, stats) };
}

nlohmann::json PipelineResult::to_json() const
{
  nlohmann::json mt = nlohmann::json::array();
  for (const auto& [m, l] : m_table)
    mt.push_back({ { "M", m }, { "loss", l } });
  nlohmann::json st = nlohmann::json::array();
  for (const auto& r : series_table)
    st.push_back({ { "I", r.I }, { "J", r.J }, { "epsilon", r.epsilon }, { "loss", r.loss } });
  nlohmann::json kt = nlohmann::json::array();
  for (const auto& r : ker_table)
    kt.push_back({ { "N", r.n_neighbors }, { "epsilon", r.epsilon }, { "loss", r.loss } });

  nlohmann::json j;
  j["weights"] = { { "M", weight_model.M },
                   { "covariate_subset", weight_model.covariate_subset },
                   { "loss", weight_loss },
                   { "m_table", std::move(mt) } };
  if (weight_trace)
    j["weights"]["selection"] = weight_trace->to_json();
  j["cde"] = { { "covariate_subset", cde_subset },
               { "series_table", std::move(st) },
               { "ker_nn_table", std::move(kt) },
               { "extrapolation_fraction", extrapolation_fraction } };
  if (cde_trace)
    j["cde"]["selection"] = cde_trace->to_json();
  if (model) {
    j["stack"] = { { "alpha", std::vector<double>(model->alpha().data(),
                                                  model->alpha().data() + model->alpha().size()) },
                   { "objective", model->objective() } };
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : model->components()) {
      auto cj = c->to_json();
      nlohmann::json summary = { { "kind", cj.at("kind") } };
      for (const char* key : { "I", "J", "epsilon", "n_neighbors", "basis", "covariate_subset" })
        if (cj.contains(key))
          summary[key] = cj[key];
      if (cj.contains("eigenvalues"))
        summary["eigenvalues"] = cj["eigenvalues"];
      comps.push_back(std::move(summary));
    }
    j["stack"]["components"] = std::move(comps);
  }
  j["validation_loss"] = validation_loss.to_json();
  j["component_validation_losses"] = component_validation_losses;
  j["test_loss"] = test_loss.to_json();
  if (oracle_test_loss) {
    j["oracle_test_loss"] = oracle_test_loss->to_json();
    j["component_oracle_test_losses"] = component_oracle_test_losses;
  }
  return j;
}

PipelineResult run_pipeline(const PipelineData& data, const PipelineOptions& opt)
{
  const Index d = data.labeled_train.cols();
  const bool corrected = opt.corrected;
  const LossVariant variant = corrected ? LossVariant::shift_corrected : LossVariant::labeled_only;
  const std::vector<Index> all = all_columns(d);
  PipelineResult result;

  // Importance weights: M per subset, subset by validation loss.
  const auto m_grid = usable(opt.m_grid, data.labeled_train.rows());
  std::map<std::vector<Index>, MSelection> weight_cache;
  const auto weight_fit = [&](const std::vector<Index>& s) -> const MSelection& {
    auto it = weight_cache.find(s);
    if (it == weight_cache.end())
      it = weight_cache
             .emplace(s, select_M(data.labeled_train, data.unlabeled_train, data.labeled_val,
                                  data.unlabeled_val, m_grid, s))
             .first;
    return it->second;
  };
  stage("weights", [&] {
    std::vector<Index> subset = all;
    if (corrected && opt.weight_selection != SelectionMode::none) {
      const SubsetScore score = [&](const std::vector<Index>& s) { return weight_fit(s).loss; };
      result.weight_trace = opt.weight_selection == SelectionMode::stepwise
                              ? forward_select_forced(score, all)
                              : exhaustive_select(score, all);
      subset = result.weight_trace->subset;
    }
    const auto& sel = weight_fit(subset);
    result.weight_model = sel.model;
    result.m_table = sel.loss_table;
    result.weight_loss = sel.loss;
    return 0;
  });

  const auto ones = [](Index n) { return Eigen::VectorXd::Ones(n); };
  const Eigen::VectorXd w_train = corrected ? predict_beta(result.weight_model, data.labeled_train.covariates())
                                            : ones(data.labeled_train.rows());
  const Eigen::VectorXd w_val = corrected ? predict_beta(result.weight_model, data.labeled_val.covariates())
                                          : ones(data.labeled_val.rows());
  if (corrected && !(w_val.sum() > 0.0))
    throw StageError("weights", "every labeled validation row has zero estimated weight");

  NnGrid ker_grid = opt.ker_grid;
  ker_grid.n_neighbors = usable(ker_grid.n_neighbors, data.labeled_train.rows());

  std::map<std::vector<Index>, SubsetFit> cde_cache;
  const auto cde_fit = [&](const std::vector<Index>& s) -> const SubsetFit& {
    auto it = cde_cache.find(s);
    if (it != cde_cache.end())
      return it->second;
    SubsetFit fit;
    auto series = stage("series", [&] {
      return tune_series(data.labeled_train, opt.series_grid, data.labeled_val, w_val,
                         data.unlabeled_val, variant, s, opt.basis, opt.grid_size);
    });
    auto ker = stage("ker-nn", [&] {
      return fit_nn_cde(data.labeled_train, w_train, NnVariant::kernel, ker_grid, data.labeled_val,
                        w_val, data.unlabeled_val, variant, s, opt.grid_size);
    });
    fit.series_table = std::move(series.loss_table);
    fit.ker_table = std::move(ker.loss_table);
    std::vector<EstimatorPtr> comps{ std::make_shared<SeriesModel>(std::move(series.model)),
                                     std::make_shared<NnCdeModel>(std::move(ker.model)) };
    stage("stack", [&] {
      std::vector<std::vector<DensityGrid>> dl, du;
      for (const auto& c : comps) {
        dl.push_back(c->predict_all(data.labeled_val.covariates()));
        du.push_back(corrected ? c->predict_all(data.unlabeled_val.covariates()) : dl.back());
      }
      const auto sys = stacking_system(du, dl, data.labeled_val.response(), w_val);
      const auto sol = solve_simplex_qp(sys.B, sys.b);
      fit.model = std::make_shared<StackedModel>(comps, sol.alpha, sys.B, sys.b, sol.objective);
      std::vector<DensityGrid> ml, mu;
      for (std::size_t r = 0; r < dl.front().size(); ++r)
        ml.push_back(mix_densities(std::vector<DensityGrid>{ dl[0][r], dl[1][r] }, sol.alpha));
      for (std::size_t r = 0; r < du.front().size(); ++r)
        mu.push_back(mix_densities(std::vector<DensityGrid>{ du[0][r], du[1][r] }, sol.alpha));
      fit.loss = terms_for(corrected, ml, mu, data.labeled_val, w_val).value();
      for (std::size_t k = 0; k < comps.size(); ++k)
        fit.component_losses[comps[k]->kind()] =
          terms_for(corrected, dl[k], du[k], data.labeled_val, w_val).value();
      return 0;
    });
    return cde_cache.emplace(s, std::move(fit)).first->second;
  };

  std::vector<Index> cde_subset = all;
  if (opt.cde_selection != SelectionMode::none) {
    // Baseline: weighted marginal density via kernel-NN over the whole training set.
    const double baseline = stage("cde-baseline", [&] {
      NnGrid marginal{ { data.labeled_train.rows() }, {}, ker_grid.epsilons };
      return fit_nn_cde(data.labeled_train, w_train, NnVariant::kernel, marginal, data.labeled_val,
                        w_val, data.unlabeled_val, variant, all, opt.grid_size)
        .loss;
    });
    const SubsetScore score = [&](const std::vector<Index>& s) { return cde_fit(s).loss; };
    result.cde_trace = opt.cde_selection == SelectionMode::stepwise
                         ? forward_select(score, all, baseline)
                         : exhaustive_select(score, all, baseline);
    if (result.cde_trace->subset.empty())
      throw StageError("cde-selection",
                       "no covariate subset improves on the marginal density; nothing to fit");
    cde_subset = result.cde_trace->subset;
  }
  const SubsetFit& best = cde_fit(cde_subset);
  result.model = best.model;
  result.cde_subset = cde_subset;
  result.series_table = best.series_table;
  result.ker_table = best.ker_table;
  result.component_validation_losses = best.component_losses;
  result.validation_loss.value = best.loss;
  result.validation_loss.variant = variant;
  result.validation_loss.n_labeled_eval = static_cast<std::size_t>(data.labeled_val.rows());
  result.validation_loss.n_unlabeled_eval =
    corrected ? static_cast<std::size_t>(data.unlabeled_val.rows()) : 0;
  result.validation_loss.metadata["model"] = "stacked";
  result.validation_loss.metadata["split"] = "validation";
  result.extrapolation_fraction = extrapolation_fraction(
    static_cast<const SeriesModel&>(*best.model->components()[0]), data.unlabeled_val.covariates());

  stage("evaluate", [&] {
    const Eigen::VectorXd w_test = corrected
                                     ? predict_beta(result.weight_model, data.labeled_test.covariates())
                                     : ones(data.labeled_test.rows());
    const auto dl = result.model->predict_all(data.labeled_test.covariates());
    const auto du = result.model->predict_all(data.unlabeled_test.covariates());
    const LossTerms t = terms_for(corrected, dl, du, data.labeled_test, w_test);
    LossReport r;
    r.value = t.value();
    r.variant = variant;
    r.n_labeled_eval = dl.size();
    r.n_unlabeled_eval = corrected ? du.size() : 0;
    r.metadata["model"] = "stacked";
    r.metadata["split"] = "test";
    result.test_loss = with_bootstrap(r, t, opt.bootstrap_replicates, opt.bootstrap_seed);
    if (data.unlabeled_test.labeled()) {
      const LossTerms o = oracle_loss_terms(du, data.unlabeled_test.response());
      LossReport orr;
      orr.value = o.value();
      orr.variant = LossVariant::oracle;
      orr.n_unlabeled_eval = du.size();
      orr.metadata["model"] = "stacked";
      orr.metadata["split"] = "test";
      result.oracle_test_loss = with_bootstrap(orr, o, opt.bootstrap_replicates, opt.bootstrap_seed);
      for (const auto& c : result.model->components())
        result.component_oracle_test_losses[c->kind()] =
          loss_oracle(*c, data.unlabeled_test).value;
    }
    return 0;
  });
  return result;
}

} // namespace cdeshift
