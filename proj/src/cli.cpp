#include "cdeshift/cli.hpp"

#include "cdeshift/cde_nn.hpp"
#include "cdeshift/cde_series.hpp"
#include "cdeshift/diagnostics.hpp"
#include "cdeshift/error.hpp"
#include "cdeshift/losses.hpp"
#include "cdeshift/model_io.hpp"
#include "cdeshift/neighbors.hpp"
#include "cdeshift/parallel.hpp"
#include "cdeshift/simulate.hpp"
#include "cdeshift/stack_select.hpp"
#include "cdeshift/weights.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace cdeshift::cli {

namespace {

using json = nlohmann::json;

std::string hex64(std::uint64_t v)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j)
{
  std::ofstream out(path);
  if (!out)
    throw ValidationError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path)
{
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what(), 0);
  }
}

void ensure_dir(const fs::path& dir)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw ValidationError("cannot create directory '" + dir.string() + "': " + ec.message());
}

//! Reproducibility record: arguments, seeds, input and output digests.
class Manifest
{
public:
  Manifest(std::string command, json arguments)
    : command_(std::move(command))
    , arguments_(std::move(arguments))
  {}

  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void input(const std::string& path) { inputs_[path] = hex64(fnv1a(read_file(path))); }
  void output(const fs::path& path) { outputs_.push_back(path); }
  void config_text(const std::string& text) { config_hash_ = hex64(fnv1a(text)); }

  void write(const fs::path& path) const
  {
    json outs = json::object();
    for (const auto& p : outputs_)
      outs[p.filename().string()] = hex64(fnv1a(read_file(p.string())));
    const std::string hash = config_hash_.empty() ? hex64(fnv1a(arguments_.dump())) : config_hash_;
    write_json(path, { { "command", command_ },
                       { "version", kVersion },
                       { "arguments", arguments_ },
                       { "config_hash", hash },
                       { "seeds", seeds_ },
                       { "inputs", inputs_ },
                       { "outputs", outs } });
  }

private:
  std::string command_;
  json arguments_;
  json seeds_ = json::object();
  json inputs_ = json::object();
  std::vector<fs::path> outputs_;
  std::string config_hash_;
};

Sample reorder(const Sample& s, const std::vector<std::string>& names)
{
  if (s.covariate_names() == names)
    return s;
  if (s.cols() != static_cast<Index>(names.size()))
    throw ValidationError("tables have different numbers of covariates");
  Eigen::MatrixXd x(s.rows(), s.cols());
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto c = s.column_index(names[k]);
    if (!c)
      throw ValidationError("table is missing covariate '" + names[k] + "'");
    x.col(static_cast<Index>(k)) = s.covariates().col(*c);
  }
  std::optional<Eigen::VectorXd> z;
  if (s.labeled())
    z = s.response();
  return Sample(std::move(x), names, std::move(z), std::nullopt, s.response_range());
}

//! Covariates plus rescaled response.
Sample attach_response(const RawTable& t, const ResponseRange& range)
{
  if (!t.z)
    throw ValidationError("table has no response column 'z'");
  return t.covariates.with_response(rescale_response(*t.z, range).z, range);
}

ResponseRange range_for(const RawTable& labeled, const std::optional<ResponseRange>& given)
{
  if (given)
    return *given;
  if (!labeled.z)
    throw ValidationError("labeled table has no response column 'z'");
  return rescale_response(*labeled.z).range;
}

std::optional<ResponseRange> range_option(const std::vector<double>& v)
{
  if (v.empty())
    return std::nullopt;
  if (v.size() != 2 || !(v[0] < v[1]))
    throw ConfigError("response-range", "expects two values min,max with min < max");
  return ResponseRange{ v[0], v[1] };
}

SplitSpec split_option(const std::vector<double>& f, std::uint64_t seed)
{
  if (f.size() != 3)
    throw ConfigError("split", "expects three fractions train,validation,test");
  SplitSpec s{ f[0], f[1], f[2], seed };
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError("split", e.what());
  }
  return s;
}

struct Prepared
{
  PipelineData data;
  Preprocessing preprocessing;
};

Prepared prepare(const std::string& labeled_path,
                 const std::string& unlabeled_path,
                 const SplitSpec& split_spec,
                 const std::optional<ResponseRange>& given_range)
{
  const RawTable lr = load_raw(labeled_path);
  const RawTable ur = load_raw(unlabeled_path);
  const ResponseRange range = range_for(lr, given_range);
  const Sample labeled = attach_response(lr, range);
  Sample unlabeled = reorder(ur.z ? attach_response(ur, range) : ur.covariates, labeled.covariate_names());
  Prepared p{ prepare_data(labeled, unlabeled, split_spec), {} };
  p.preprocessing = Preprocessing::of(p.data.labeled_train);
  return p;
}

std::vector<Index> default_m_grid()
{
  return { 5, 10, 20, 40 };
}

json weights_document(const WeightModel& w, const Preprocessing& p)
{
  return { { "format", "cdeshift-weights" },
           { "weights", w.to_json() },
           { "preprocessing", p.to_json() } };
}

struct LoadedWeights
{
  WeightModel model;
  std::optional<Preprocessing> preprocessing;
};

//! Accepts a weights document or a model bundle carrying weights.
LoadedWeights load_weights(const std::string& path)
{
  const json j = read_json(path);
  try {
    const auto format = j.value("format", std::string());
    if (format == "cdeshift-weights")
      return { WeightModel::from_json(j.at("weights")), Preprocessing::from_json(j.at("preprocessing")) };
    if (format == "cdeshift-model") {
      if (!j.contains("weights") || j["weights"].is_null())
        throw ValidationError("model file '" + path + "' carries no weight model");
      return { WeightModel::from_json(j["weights"]), Preprocessing::from_json(j.at("preprocessing")) };
    }
  } catch (const json::exception& e) {
    throw ValidationError("weights file '" + path + "' is malformed: " + e.what());
  }
  throw ValidationError("'" + path + "' is neither a weights file nor a model file");
}

std::vector<double> read_g(const std::string& path, std::size_t grid_size)
{
  std::istringstream in(read_file(path));
  std::vector<double> g;
  std::string token;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      // Optional header line.
      if (!line.empty() && (std::isalpha(static_cast<unsigned char>(line[0])) != 0))
        continue;
    }
    std::istringstream ls(line);
    while (std::getline(ls, token, ',')) {
      if (token.find_first_not_of(" \t\r") == std::string::npos)
        continue;
      try {
        g.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw ParseError("g file '" + path + "' has a non-numeric entry '" + token + "'", 0);
      }
    }
  }
  if (g.size() != grid_size)
    throw ValidationError("g file '" + path + "' has " + std::to_string(g.size()) +
                          " values; the model grid has " + std::to_string(grid_size));
  return g;
}

LossReport report_from_terms(const LossTerms& t,
                             LossVariant v,
                             std::size_t nl,
                             std::size_t nu,
                             std::size_t replicates,
                             std::uint64_t seed)
{
  LossReport r;
  r.value = t.value();
  r.variant = v;
  r.n_labeled_eval = nl;
  r.n_unlabeled_eval = nu;
  return replicates > 0 ? with_bootstrap(r, t, replicates, seed) : r;
}

json error_json(const std::exception& e)
{
  json j = { { "message", e.what() } };
  if (const auto* ce = dynamic_cast<const Error*>(&e)) {
    j["kind"] = ce->kind();
    if (const auto* pe = dynamic_cast<const ParseError*>(&e))
      j["row"] = pe->row();
    if (const auto* cf = dynamic_cast<const ConfigError*>(&e))
      j["field"] = cf->field();
    if (const auto* se = dynamic_cast<const StageError*>(&e))
      j["stage"] = se->stage();
  } else {
    j["kind"] = "internal";
  }
  return { { "error", j } };
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SimulateArgs
{
  std::string design = "selection";
  Index n_labeled = 1000;
  Index n_unlabeled = 1000;
  Index dimension = 2;
  double shift = 0.5;
  double noise = 0.1;
  std::string scheme = "scheme3";
  std::string mean = "identity";
  std::uint64_t seed = 0;
  std::string pool;
  std::string bias_column;
  std::vector<double> beta_params;
  std::string out_dir;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out)
{
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  Manifest m("simulate", { { "design", a.design },
                           { "n_labeled", a.n_labeled },
                           { "n_unlabeled", a.n_unlabeled },
                           { "dimension", a.dimension },
                           { "shift", a.shift },
                           { "noise", a.noise },
                           { "scheme", a.scheme },
                           { "mean", a.mean },
                           { "pool", a.pool },
                           { "bias_column", a.bias_column },
                           { "beta_params", a.beta_params } });
  m.seed("seed", a.seed);

  if (!a.pool.empty()) {
    // Rejection-sample an existing pool.
    const RawTable pool = load_raw(a.pool);
    m.input(a.pool);
    auto scheme = SelectionScheme::preset(scheme_from_string(a.scheme), a.bias_column, a.seed);
    if (!a.beta_params.empty()) {
      if (a.beta_params.size() != 2)
        throw ConfigError("beta-params", "expects two values a,b");
      scheme.name = SchemeName::custom;
      scheme.a = a.beta_params[0];
      scheme.b = a.beta_params[1];
    }
    const auto rows = rejection_rows(pool.covariates, scheme);
    const fs::path path = dir / "selected.csv";
    const Sample kept = pool.covariates.select_rows(rows);
    std::vector<std::pair<std::string, Eigen::VectorXd>> extra;
    if (pool.z) {
      Eigen::VectorXd z(static_cast<Index>(rows.size()));
      for (std::size_t k = 0; k < rows.size(); ++k)
        z(static_cast<Index>(k)) = (*pool.z)(rows[k]);
      extra.emplace_back("z", std::move(z));
    }
    save_table(path.string(), kept, extra);
    m.output(path);
    m.write(dir / "manifest.json");
    out << json{ { "pool_rows", pool.covariates.rows() }, { "selected_rows", rows.size() } }.dump() << '\n';
    return 0;
  }

  const MeanFunction mf = a.mean == "logistic"   ? MeanFunction::logistic
                          : a.mean == "identity" ? MeanFunction::identity
                                                 : throw ConfigError("mean", "expects logistic or identity");
  OracleData d;
  if (a.design == "gaussian") {
    d = make_oracle({ a.dimension, a.n_labeled, a.n_unlabeled, a.shift, a.noise, mf, a.seed });
  } else if (a.design == "selection") {
    d = make_selection_oracle(
      { a.dimension, a.n_labeled, a.n_unlabeled, scheme_from_string(a.scheme), a.noise, mf, a.seed });
  } else {
    throw ConfigError("design", "expects gaussian or selection");
  }
  const fs::path lp = dir / "labeled.csv", up = dir / "unlabeled.csv", tp = dir / "unlabeled_truth.csv";
  save_table(lp.string(), d.labeled);
  save_table(up.string(), d.unlabeled.without_response());
  save_table(tp.string(), d.unlabeled);
  m.output(lp);
  m.output(up);
  m.output(tp);
  m.write(dir / "manifest.json");
  out << json{ { "labeled_rows", d.labeled.rows() },
               { "unlabeled_rows", d.unlabeled.rows() },
               { "pool_size", d.pool_size } }
           .dump()
      << '\n';
  return 0;
}

struct CleanArgs
{
  std::string pool, labeled, unlabeled, out_dir;
  Index target = 0;
  std::vector<Index> m_grid = default_m_grid();
  std::uint64_t seed = 0;
};

//! Cleaning on covariates standardized with the current labeled sample.
struct CleanOutcome
{
  std::vector<Index> pool_rows;
  CleaningResult result;
};

CleanOutcome clean_tables(const RawTable& pool,
                          const RawTable& labeled,
                          const RawTable& unlabeled,
                          Index target,
                          const std::vector<Index>& m_grid,
                          std::uint64_t seed)
{
  const auto& names = labeled.covariates.covariate_names();
  const Sample cur = standardize(labeled.covariates);
  const auto& stats = cur.standardization();
  const Sample p = standardize(reorder(pool.covariates, names), stats);
  const Sample u = standardize(reorder(unlabeled.covariates, names), stats);
  auto r = clean_zero_weights(p, cur, u, target > 0 ? target : labeled.covariates.rows(), m_grid, seed);
  auto rows = r.pool_rows;
  return { std::move(rows), std::move(r) };
}

int cmd_clean(const CleanArgs& a, std::ostream& out)
{
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  Manifest m("clean", { { "pool", a.pool },
                        { "labeled", a.labeled },
                        { "unlabeled", a.unlabeled },
                        { "target", a.target },
                        { "m_grid", a.m_grid } });
  m.seed("seed", a.seed);
  m.input(a.pool);
  m.input(a.labeled);
  m.input(a.unlabeled);
  const RawTable pool = load_raw(a.pool);
  const auto c = clean_tables(pool, load_raw(a.labeled), load_raw(a.unlabeled), a.target, a.m_grid, a.seed);
  const Sample kept = pool.covariates.select_rows(c.pool_rows);
  std::vector<std::pair<std::string, Eigen::VectorXd>> extra;
  if (pool.z) {
    Eigen::VectorXd z(static_cast<Index>(c.pool_rows.size()));
    for (std::size_t k = 0; k < c.pool_rows.size(); ++k)
      z(static_cast<Index>(k)) = (*pool.z)(c.pool_rows[k]);
    extra.emplace_back("z", std::move(z));
  }
  const fs::path cp = dir / "cleaned.csv", rp = dir / "cleaning.json";
  save_table(cp.string(), kept, extra);
  json table = json::array();
  for (const auto& [mm, l] : c.result.loss_table)
    table.push_back({ { "M", mm }, { "loss", l } });
  const json report = { { "rows", c.pool_rows.size() },
                        { "zero_weight_fraction", c.result.zero_weight_fraction },
                        { "M", c.result.M },
                        { "m_table", table },
                        { "pool_rows", c.pool_rows } };
  write_json(rp, report);
  m.output(cp);
  m.output(rp);
  m.write(dir / "manifest.json");
  out << json{ { "rows", c.pool_rows.size() }, { "zero_weight_fraction", c.result.zero_weight_fraction } }.dump()
      << '\n';
  return 0;
}

struct DataArgs
{
  std::string labeled, unlabeled;
  std::vector<double> split{ 0.6, 0.2, 0.2 };
  std::uint64_t seed = 0;
  std::vector<double> response_range;
};

struct FitWeightsArgs
{
  DataArgs data;
  std::vector<Index> m_grid = default_m_grid();
  std::string selection = "none";
  std::string out_dir;
};

int cmd_fit_weights(const FitWeightsArgs& a, std::ostream& out)
{
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  Manifest m("fit-weights", { { "labeled", a.data.labeled },
                              { "unlabeled", a.data.unlabeled },
                              { "split", a.data.split },
                              { "response_range", a.data.response_range },
                              { "m_grid", a.m_grid },
                              { "selection", a.selection } });
  m.seed("split", a.data.seed);
  m.input(a.data.labeled);
  m.input(a.data.unlabeled);
  const auto p = prepare(a.data.labeled, a.data.unlabeled, split_option(a.data.split, a.data.seed),
                         range_option(a.data.response_range));
  const auto& d = p.data;
  const SelectionMode mode = selection_mode_from_string(a.selection);
  std::map<std::vector<Index>, MSelection> cache;
  const auto fit = [&](const std::vector<Index>& s) -> const MSelection& {
    auto it = cache.find(s);
    if (it == cache.end())
      it = cache.emplace(s, select_M(d.labeled_train, d.unlabeled_train, d.labeled_val, d.unlabeled_val, a.m_grid, s))
             .first;
    return it->second;
  };
  std::vector<Index> subset = all_columns(d.labeled_train.cols());
  json trace = nullptr;
  if (mode != SelectionMode::none) {
    const SubsetScore score = [&](const std::vector<Index>& s) { return fit(s).loss; };
    const auto t = mode == SelectionMode::stepwise ? forward_select_forced(score, subset)
                                                   : exhaustive_select(score, subset);
    subset = t.subset;
    trace = t.to_json();
  }
  const auto& sel = fit(subset);
  const Eigen::VectorXd bv = predict_beta(sel.model, d.labeled_val.covariates());
  json table = json::array();
  for (const auto& [mm, l] : sel.loss_table)
    table.push_back({ { "M", mm }, { "loss", l } });
  const json report = { { "M", sel.model.M },
                        { "covariate_subset", subset },
                        { "loss", sel.loss },
                        { "m_table", table },
                        { "selection", trace },
                        { "mean_beta_validation", bv.mean() },
                        { "effective_sample_size_validation",
                          bv.sum() > 0.0 ? json(effective_sample_size(bv)) : json(nullptr) } };
  const fs::path wp = dir / "weights.json", rp = dir / "report.json";
  write_json(wp, weights_document(sel.model, p.preprocessing));
  write_json(rp, report);
  m.output(wp);
  m.output(rp);
  m.write(dir / "manifest.json");
  out << json{ { "M", sel.model.M }, { "loss", sel.loss } }.dump() << '\n';
  return 0;
}

struct FitCdeArgs
{
  DataArgs data;
  std::string method = "ker-nn";
  bool corrected = false;
  std::string weights;
  std::vector<Index> m_grid = default_m_grid();
  std::vector<Index> n_grid{ 10, 20, 40, 80 };
  std::vector<Index> bins{ 5, 10, 20 };
  std::vector<double> eps{ 0.0005, 0.002, 0.008 };
  std::vector<Index> series_i{ 5, 10, 20 };
  std::vector<Index> series_j{ 5, 10, 20, 40 };
  std::vector<double> series_eps{ 0.05, 0.2, 1.0 };
  std::string basis = "cosine";
  std::size_t grid_size = kDefaultGridSize;
  std::size_t replicates = kDefaultBootstrapReplicates;
  std::uint64_t bootstrap_seed = 0;
  std::string out_dir;
};

int cmd_fit_cde(const FitCdeArgs& a, std::ostream& out)
{
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  Manifest m("fit-cde", { { "labeled", a.data.labeled },
                          { "unlabeled", a.data.unlabeled },
                          { "split", a.data.split },
                          { "response_range", a.data.response_range },
                          { "method", a.method },
                          { "corrected", a.corrected },
                          { "weights", a.weights },
                          { "m_grid", a.m_grid },
                          { "n_grid", a.n_grid },
                          { "bins", a.bins },
                          { "eps", a.eps },
                          { "series_i", a.series_i },
                          { "series_j", a.series_j },
                          { "series_eps", a.series_eps },
                          { "basis", a.basis },
                          { "grid_size", a.grid_size },
                          { "replicates", a.replicates } });
  m.seed("split", a.data.seed);
  m.seed("bootstrap", a.bootstrap_seed);
  m.input(a.data.labeled);
  m.input(a.data.unlabeled);
  const auto p = prepare(a.data.labeled, a.data.unlabeled, split_option(a.data.split, a.data.seed),
                         range_option(a.data.response_range));
  const auto& d = p.data;

  std::optional<WeightModel> wm;
  if (!a.weights.empty()) {
    m.input(a.weights);
    auto lw = load_weights(a.weights);
    if (lw.preprocessing && lw.preprocessing->to_json() != p.preprocessing.to_json())
      throw ValidationError("weights file was fitted with different preprocessing; refit it on the same split");
    wm = std::move(lw.model);
  } else {
    wm = select_M(d.labeled_train, d.unlabeled_train, d.labeled_val, d.unlabeled_val, a.m_grid).model;
  }
  const LossVariant variant = a.corrected ? LossVariant::shift_corrected : LossVariant::labeled_only;
  const Eigen::VectorXd wt = a.corrected ? predict_beta(*wm, d.labeled_train.covariates())
                                         : Eigen::VectorXd::Ones(d.labeled_train.rows());
  const Eigen::VectorXd wv = a.corrected ? predict_beta(*wm, d.labeled_val.covariates())
                                         : Eigen::VectorXd::Ones(d.labeled_val.rows());

  EstimatorPtr model;
  json table = json::array();
  double val_loss = 0.0;
  if (a.method == "nn" || a.method == "ker-nn") {
    const NnVariant v = a.method == "nn" ? NnVariant::histogram : NnVariant::kernel;
    const auto fit = fit_nn_cde(d.labeled_train, wt, v, { a.n_grid, a.bins, a.eps }, d.labeled_val, wv,
                                d.unlabeled_val, variant, {}, a.grid_size);
    for (const auto& r : fit.loss_table)
      table.push_back({ { "N", r.n_neighbors }, { "B", r.bins }, { "epsilon", r.epsilon }, { "loss", r.loss } });
    val_loss = fit.loss;
    model = std::make_shared<NnCdeModel>(fit.model);
  } else if (a.method == "series") {
    const auto fit = tune_series(d.labeled_train, { a.series_i, a.series_j, a.series_eps }, d.labeled_val, wv,
                                 d.unlabeled_val, variant, {}, response_basis_from_string(a.basis), a.grid_size);
    for (const auto& r : fit.loss_table)
      table.push_back({ { "I", r.I }, { "J", r.J }, { "epsilon", r.epsilon }, { "loss", r.loss } });
    val_loss = fit.loss;
    model = std::make_shared<SeriesModel>(fit.model);
  } else {
    throw ConfigError("method", "expects nn, ker-nn or series");
  }

  const Eigen::VectorXd wtest = a.corrected ? predict_beta(*wm, d.labeled_test.covariates())
                                            : Eigen::VectorXd::Ones(d.labeled_test.rows());
  const auto dl = model->predict_all(d.labeled_test.covariates());
  const auto du = model->predict_all(d.unlabeled_test.covariates());
  const LossTerms t = a.corrected ? shifted_loss_terms(du, dl, d.labeled_test.response(), wtest)
                                  : labeled_loss_terms(dl, d.labeled_test.response());
  json report = { { "method", a.method },
                  { "corrected", a.corrected },
                  { "validation_loss", val_loss },
                  { "tuning", table },
                  { "hyperparameters", model->to_json() } };
  report["hyperparameters"].erase("train_x");
  report["hyperparameters"].erase("train_z");
  report["hyperparameters"].erase("weights");
  report["hyperparameters"].erase("eigenvectors");
  report["hyperparameters"].erase("coefficients");
  report["test_loss"] = report_from_terms(t, variant, dl.size(), a.corrected ? du.size() : 0, a.replicates,
                                          a.bootstrap_seed)
                          .to_json();
  if (d.unlabeled_test.labeled())
    report["oracle_test_loss"] =
      report_from_terms(oracle_loss_terms(du, d.unlabeled_test.response()), LossVariant::oracle, 0, du.size(),
                        a.replicates, a.bootstrap_seed)
        .to_json();
  if (const auto* s = dynamic_cast<const SeriesModel*>(model.get()))
    report["extrapolation_fraction"] = extrapolation_fraction(*s, d.unlabeled_val.covariates());

  const fs::path mp = dir / "model.json", rp = dir / "report.json";
  save_bundle(mp.string(), { model, p.preprocessing, wm });
  write_json(rp, report);
  m.output(mp);
  m.output(rp);
  m.write(dir / "manifest.json");
  out << json{ { "method", a.method }, { "validation_loss", val_loss } }.dump() << '\n';
  return 0;
}

struct StackArgs
{
  std::vector<std::string> models;
  std::string labeled, unlabeled, weights, out_dir;
};

int cmd_stack(const StackArgs& a, std::ostream& out)
{
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  Manifest m("stack", { { "models", a.models },
                        { "labeled", a.labeled },
                        { "unlabeled", a.unlabeled },
                        { "weights", a.weights } });
  if (a.models.size() < 2)
    throw ConfigError("models", "stacking needs at least two models");
  std::vector<EstimatorPtr> comps;
  std::optional<Preprocessing> prep;
  std::optional<WeightModel> wm;
  for (const auto& path : a.models) {
    m.input(path);
    auto b = load_bundle(path);
    if (prep && prep->to_json() != b.preprocessing.to_json())
      throw ValidationError("model '" + path + "' uses different preprocessing from the others");
    prep = b.preprocessing;
    if (!wm && b.weights)
      wm = b.weights;
    comps.push_back(b.model);
  }
  if (!a.weights.empty()) {
    m.input(a.weights);
    wm = load_weights(a.weights).model;
  }
  m.input(a.labeled);
  m.input(a.unlabeled);
  const RawTable lr = load_raw(a.labeled);
  if (!lr.z)
    throw ValidationError("labeled validation table has no response column 'z'");
  const Sample lv = prep->apply(lr.covariates, *lr.z);
  const Sample uv = prep->apply(load_raw(a.unlabeled).covariates);
  const Eigen::VectorXd w = wm ? predict_beta(*wm, lv.covariates()) : Eigen::VectorXd::Ones(lv.rows());
  const StackedModel sm = stack(comps, lv, w, uv);
  const fs::path mp = dir / "model.json", rp = dir / "report.json";
  save_bundle(mp.string(), { std::make_shared<StackedModel>(sm), *prep, wm });
  write_json(rp, { { "alpha", std::vector<double>(sm.alpha().data(), sm.alpha().data() + sm.alpha().size()) },
                   { "objective", sm.objective() },
                   { "weighted", wm.has_value() } });
  m.output(mp);
  m.output(rp);
  m.write(dir / "manifest.json");
  out << json{ { "objective", sm.objective() } }.dump() << '\n';
  return 0;
}

std::pair<RawTable, json> stage_clean(const RawTable& pool,
                                      const RawTable& labeled,
                                      const RawTable& unlabeled,
                                      const PipelineConfig& cfg)
{
  try {
    const auto c = clean_tables(pool, labeled, unlabeled, labeled.covariates.rows(), cfg.cleaning_m_grid,
                                cfg.cleaning_seed);
    RawTable out{ reorder(pool.covariates, labeled.covariates.covariate_names()).select_rows(c.pool_rows),
                  Eigen::VectorXd(static_cast<Index>(c.pool_rows.size())) };
    for (std::size_t k = 0; k < c.pool_rows.size(); ++k)
      (*out.z)(static_cast<Index>(k)) = (*pool.z)(c.pool_rows[k]);
    return { std::move(out),
             json{ { "rows", c.pool_rows.size() },
                   { "zero_weight_fraction", c.result.zero_weight_fraction },
                   { "M", c.result.M } } };
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("cleaning", e.what());
  }
}

struct PipelineArgs
{
  std::string config;
  std::string target = "both"; // select-vars only
  std::string mode = "stepwise";
};

int cmd_pipeline(const PipelineArgs& a, bool select_only, std::ostream& out)
{
  const std::string text = read_file(a.config);
  json cj;
  try {
    cj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("config '" + a.config + "' is not valid JSON: " + e.what(), 0);
  }
  PipelineConfig cfg = parse_pipeline_config(cj, fs::path(a.config).parent_path());
  if (select_only) {
    const SelectionMode mode = selection_mode_from_string(a.mode);
    if (a.target != "weights" && a.target != "cde" && a.target != "both")
      throw ConfigError("target", "expects weights, cde or both");
    if (a.target != "cde")
      cfg.options.weight_selection = mode;
    if (a.target != "weights")
      cfg.options.cde_selection = mode;
  }
  const fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  Manifest m(select_only ? "select-vars" : "pipeline",
             { { "config", a.config }, { "config_document", cj }, { "target", a.target }, { "mode", a.mode } });
  m.config_text(text + (select_only ? "\n" + a.target + "," + a.mode : std::string()));
  m.seed("split", cfg.split.seed);
  m.seed("bootstrap", cfg.options.bootstrap_seed);
  m.input(cfg.labeled);
  m.input(cfg.unlabeled);

  RawTable lr = load_raw(cfg.labeled);
  const RawTable ur = load_raw(cfg.unlabeled);
  json cleaning = nullptr;
  if (cfg.pool) {
    m.input(*cfg.pool);
    m.seed("cleaning", cfg.cleaning_seed);
    const RawTable pool = load_raw(*cfg.pool);
    if (!pool.z)
      throw ConfigError("pool", "pool table has no response column 'z'");
    const auto c = stage_clean(pool, lr, ur, cfg);
    cleaning = c.second;
    lr = c.first;
  }
  const ResponseRange range = range_for(lr, cfg.response_range);
  const Sample labeled = attach_response(lr, range);
  const Sample unlabeled =
    reorder(ur.z ? attach_response(ur, range) : ur.covariates, labeled.covariate_names());
  const PipelineData data = prepare_data(labeled, unlabeled, cfg.split);
  const PipelineResult result = run_pipeline(data, cfg.options);
  const Preprocessing prep = Preprocessing::of(data.labeled_train);

  json report = result.to_json();
  report["cleaning"] = cleaning;
  report["response_range"] = { { "min", range.min }, { "max", range.max } };
  const fs::path mp = dir / "model.json", rp = dir / "report.json", lp = dir / "losses.json",
                 cp = dir / "catalog.csv";
  save_bundle(mp.string(), { result.model, prep, result.weight_model });
  write_json(rp, report);
  json losses = { { "validation", result.validation_loss.to_json() }, { "test", result.test_loss.to_json() } };
  if (result.oracle_test_loss)
    losses["oracle_test"] = result.oracle_test_loss->to_json();
  write_json(lp, losses);
  emit_catalog(*result.model, prep.apply(ur.covariates), cp.string());
  for (const auto& p : { mp, rp, lp, cp })
    m.output(p);
  m.write(dir / "manifest.json");
  out << json{ { "validation_loss", result.validation_loss.value },
               { "test_loss", result.test_loss.value },
               { "alpha", std::vector<double>(result.model->alpha().data(),
                                              result.model->alpha().data() + result.model->alpha().size()) } }
           .dump()
      << '\n';
  return 0;
}

struct EvaluateArgs
{
  std::string model, labeled_catalog, unlabeled_catalog;
  std::string labeled, unlabeled, weights;
  std::string variant = "shift_corrected";
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out)
{
  Manifest m("evaluate", { { "model", a.model },
                           { "labeled_catalog", a.labeled_catalog },
                           { "unlabeled_catalog", a.unlabeled_catalog },
                           { "labeled", a.labeled },
                           { "unlabeled", a.unlabeled },
                           { "weights", a.weights },
                           { "variant", a.variant },
                           { "replicates", a.replicates } });
  m.seed("bootstrap", a.seed);
  const LossVariant variant = loss_variant_from_string(a.variant);
  if (a.model.empty() == a.labeled_catalog.empty() && variant != LossVariant::oracle)
    throw ConfigError("model", "give exactly one of --model or --labeled-catalog");

  std::optional<Preprocessing> prep;
  std::optional<ModelBundle> bundle;
  std::optional<WeightModel> wm;
  if (!a.model.empty()) {
    m.input(a.model);
    bundle = load_bundle(a.model);
    prep = bundle->preprocessing;
    wm = bundle->weights;
  }
  if (!a.weights.empty()) {
    m.input(a.weights);
    auto lw = load_weights(a.weights);
    wm = lw.model;
    if (!prep)
      prep = lw.preprocessing;
  }
  const auto load_eval = [&](const std::string& path, bool need_z) {
    m.input(path);
    const RawTable t = load_raw(path);
    if (need_z && !t.z)
      throw ValidationError("table '" + path + "' has no response column 'z'");
    if (prep)
      return t.z ? prep->apply(t.covariates, *t.z) : prep->apply(t.covariates);
    // Catalog mode without preprocessing: responses must already be in [0,1].
    return t.z ? t.covariates.with_response(*t.z) : t.covariates;
  };
  const auto load_catalog = [&](const std::string& path) {
    m.input(path);
    std::ifstream in(path);
    if (!in)
      throw ValidationError("cannot read '" + path + "'");
    return read_catalog(in);
  };

  LossTerms terms;
  std::size_t nl = 0, nu = 0;
  if (variant == LossVariant::oracle) {
    if (a.unlabeled.empty())
      throw ConfigError("unlabeled", "oracle loss needs --unlabeled with responses");
    const Sample u = load_eval(a.unlabeled, true);
    const auto du = bundle ? bundle->model->predict_all(u.covariates())
                           : load_catalog(a.unlabeled_catalog.empty()
                                            ? throw ConfigError("unlabeled-catalog", "required without --model")
                                            : a.unlabeled_catalog);
    terms = oracle_loss_terms(du, u.response());
    nu = du.size();
  } else {
    if (a.labeled.empty())
      throw ConfigError("labeled", "required");
    const Sample l = load_eval(a.labeled, true);
    const auto dl = bundle ? bundle->model->predict_all(l.covariates()) : load_catalog(a.labeled_catalog);
    nl = dl.size();
    if (variant == LossVariant::labeled_only) {
      terms = labeled_loss_terms(dl, l.response());
    } else {
      if (!wm)
        throw ConfigError("weights", "shift-corrected loss needs a weight model (--weights or a model bundle with weights)");
      std::vector<DensityGrid> du;
      if (bundle) {
        if (a.unlabeled.empty())
          throw ConfigError("unlabeled", "required for the shift-corrected loss");
        du = bundle->model->predict_all(load_eval(a.unlabeled, false).covariates());
      } else {
        if (a.unlabeled_catalog.empty())
          throw ConfigError("unlabeled-catalog", "required for the shift-corrected loss");
        du = load_catalog(a.unlabeled_catalog);
      }
      nu = du.size();
      terms = shifted_loss_terms(du, dl, l.response(), predict_beta(*wm, l.covariates()));
    }
  }
  const LossReport r = report_from_terms(terms, variant, nl, nu, a.replicates, a.seed);
  const std::string text = r.to_json().dump(2);
  if (a.out.empty()) {
    out << text << '\n';
  } else {
    std::ofstream f(a.out);
    if (!f)
      throw ValidationError("cannot write '" + a.out + "'");
    f << text << '\n';
    f.close();
    m.output(a.out);
    m.write(a.out + ".manifest.json");
  }
  return 0;
}

struct DiagnoseArgs
{
  std::string model, labeled, out_dir;
  bool unweighted = false;
  bool per_observation = false;
};

int cmd_diagnose(const DiagnoseArgs& a, std::ostream& out)
{
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  Manifest m("diagnose", { { "model", a.model },
                           { "labeled", a.labeled },
                           { "unweighted", a.unweighted },
                           { "per_observation", a.per_observation } });
  m.input(a.model);
  m.input(a.labeled);
  const ModelBundle b = load_bundle(a.model);
  const RawTable t = load_raw(a.labeled);
  if (!t.z)
    throw ValidationError("diagnostics need a labeled table with a response column 'z'");
  const Sample s = b.preprocessing.apply(t.covariates, *t.z);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(s.rows());
  if (!a.unweighted && b.weights)
    w = predict_beta(*b.weights, s.covariates());
  const auto rep = diagnose(*b.model, s, w,
                            a.per_observation ? WeightScaling::per_observation : WeightScaling::self_normalized);
  const fs::path rp = dir / "diagnostics.json", qp = dir / "qq.csv", cp = dir / "coverage.csv";
  write_json(rp, rep.to_json());
  {
    std::ofstream f(qp);
    f.precision(12);
    rep.write_qq_csv(f);
  }
  {
    std::ofstream f(cp);
    f.precision(12);
    rep.write_coverage_csv(f);
  }
  for (const auto& p : { rp, qp, cp })
    m.output(p);
  m.write(dir / "manifest.json");
  out << json{ { "ks_pvalue", rep.ks.p_value }, { "mean_hpd_size_95", rep.mean_hpd_size_95 } }.dump() << '\n';
  return 0;
}

struct PredictArgs
{
  std::string model, input, out, g;
};

int cmd_predict(const PredictArgs& a, std::ostream& out)
{
  Manifest m("predict", { { "model", a.model }, { "input", a.input } });
  m.input(a.model);
  m.input(a.input);
  const ModelBundle b = load_bundle(a.model);
  const Sample s = b.preprocessing.apply(load_raw(a.input).covariates);
  const std::size_t n = emit_catalog(*b.model, s, a.out);
  m.output(a.out);
  m.write(a.out + ".manifest.json");
  out << json{ { "rows", n } }.dump() << '\n';
  return 0;
}

int cmd_functional(const PredictArgs& a, std::ostream& out)
{
  Manifest m("functional", { { "model", a.model }, { "input", a.input }, { "g", a.g } });
  m.input(a.model);
  m.input(a.input);
  m.input(a.g);
  const ModelBundle b = load_bundle(a.model);
  const Sample s = b.preprocessing.apply(load_raw(a.input).covariates);
  const auto g = read_g(a.g, b.model->grid_size());
  const auto d = b.model->predict_all(s.covariates());
  std::ofstream f(a.out);
  if (!f)
    throw ValidationError("cannot write '" + a.out + "'");
  f.precision(12);
  f << "functional\n";
  for (const auto& row : d)
    f << expected_functional(row, g) << '\n';
  f.close();
  m.output(a.out);
  m.write(a.out + ".manifest.json");
  out << json{ { "rows", d.size() } }.dump() << '\n';
  return 0;
}

} // namespace

std::uint64_t fnv1a(std::string_view bytes)
{
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

RawTable load_raw(const std::string& path)
{
  Sample all = load_table(path, false);
  const auto& names = all.covariate_names();
  if (names.empty() || names.back() != "z")
    return { std::move(all), std::nullopt };
  const Index d = all.cols() - 1;
  if (d < 1)
    throw ValidationError("table '" + path + "' has a response but no covariates");
  Eigen::VectorXd z = all.covariates().col(d);
  std::vector<std::string> cn(names.begin(), names.end() - 1);
  return { Sample(all.covariates().leftCols(d), std::move(cn)), std::move(z) };
}

std::size_t emit_catalog(const ConditionalDensityEstimator& model, const Sample& sample, const std::string& path)
{
  if (sample.rows() > 0 && sample.cols() != model.input_dimension())
    throw ValidationError("input has " + std::to_string(sample.cols()) + " covariates, model expects " +
                          std::to_string(model.input_dimension()));
  const auto rows = model.predict_all(sample.covariates());
  std::ofstream out(path);
  if (!out)
    throw ValidationError("cannot write '" + path + "'");
  write_catalog(out, rows, model.grid_size());
  return rows.size();
}

PipelineConfig parse_pipeline_config(const nlohmann::json& j, const fs::path& base_dir)
{
  if (!j.is_object())
    throw ConfigError("(root)", "config must be a JSON object");
  static const std::vector<std::string> known{ "labeled", "unlabeled", "pool", "response_range", "split",
                                               "weights", "cde", "grid_size", "bootstrap", "cleaning",
                                               "output_dir" };
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(key, "unknown field");

  const auto field = [&](const json& obj, const std::string& path, const std::string& key) -> const json& {
    if (!obj.contains(key))
      throw ConfigError(path.empty() ? key : path + "." + key, "missing required field");
    return obj[key];
  };
  const auto resolve = [&](const std::string& name, const json& v) {
    if (!v.is_string())
      throw ConfigError(name, "expects a path string");
    fs::path p(v.get<std::string>());
    if (p.is_relative())
      p = base_dir / p;
    if (name != "output_dir" && !fs::exists(p))
      throw ConfigError(name, "file '" + p.string() + "' does not exist");
    return p.string();
  };
  const auto index_list = [&](const json& v, const std::string& name) {
    if (!v.is_array() || v.empty())
      throw ConfigError(name, "expects a nonempty array of positive integers");
    std::vector<Index> out;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 1)
        throw ConfigError(name, "expects a nonempty array of positive integers");
      out.push_back(e.get<Index>());
    }
    return out;
  };
  const auto real_list = [&](const json& v, const std::string& name) {
    if (!v.is_array() || v.empty())
      throw ConfigError(name, "expects a nonempty array of positive numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number() || !(e.get<double>() > 0.0))
        throw ConfigError(name, "expects a nonempty array of positive numbers");
      out.push_back(e.get<double>());
    }
    return out;
  };
  const auto seed_of = [&](const json& obj, const std::string& path) {
    const json& s = field(obj, path, "seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      throw ConfigError(path + ".seed", "expects a nonnegative integer");
    return s.get<std::uint64_t>();
  };

  PipelineConfig c;
  c.labeled = resolve("labeled", field(j, "", "labeled"));
  c.unlabeled = resolve("unlabeled", field(j, "", "unlabeled"));
  if (j.contains("pool") && !j["pool"].is_null())
    c.pool = resolve("pool", j["pool"]);
  if (j.contains("response_range") && !j["response_range"].is_null()) {
    const auto& r = j["response_range"];
    if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number() ||
        !(r[0].get<double>() < r[1].get<double>()))
      throw ConfigError("response_range", "expects [min, max] with min < max");
    c.response_range = ResponseRange{ r[0].get<double>(), r[1].get<double>() };
  }

  const json& sp = field(j, "", "split");
  try {
    c.split = { field(sp, "split", "train").get<double>(), field(sp, "split", "validation").get<double>(),
                field(sp, "split", "test").get<double>(), seed_of(sp, "split") };
    c.split.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("split", e.what());
  }

  auto& o = c.options;
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    if (w.contains("m_grid"))
      o.m_grid = index_list(w["m_grid"], "weights.m_grid");
    if (w.contains("selection"))
      try {
        o.weight_selection = selection_mode_from_string(w["selection"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError("weights.selection", e.what());
      }
  }
  if (j.contains("cde")) {
    const auto& cd = j["cde"];
    if (cd.contains("nn_grid"))
      o.ker_grid.n_neighbors = index_list(cd["nn_grid"], "cde.nn_grid");
    if (cd.contains("ker_eps"))
      o.ker_grid.epsilons = real_list(cd["ker_eps"], "cde.ker_eps");
    if (cd.contains("bins"))
      o.ker_grid.bins = index_list(cd["bins"], "cde.bins");
    if (cd.contains("series_i"))
      o.series_grid.I = index_list(cd["series_i"], "cde.series_i");
    if (cd.contains("series_j"))
      o.series_grid.J = index_list(cd["series_j"], "cde.series_j");
    if (cd.contains("series_eps"))
      o.series_grid.epsilons = real_list(cd["series_eps"], "cde.series_eps");
    if (cd.contains("selection"))
      try {
        o.cde_selection = selection_mode_from_string(cd["selection"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError("cde.selection", e.what());
      }
    if (cd.contains("corrected")) {
      if (!cd["corrected"].is_boolean())
        throw ConfigError("cde.corrected", "expects true or false");
      o.corrected = cd["corrected"].get<bool>();
    }
    if (cd.contains("basis"))
      try {
        o.basis = response_basis_from_string(cd["basis"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError("cde.basis", e.what());
      }
  }
  if (j.contains("grid_size")) {
    if (!j["grid_size"].is_number_integer() || j["grid_size"].get<long long>() < 2)
      throw ConfigError("grid_size", "expects an integer >= 2");
    o.grid_size = j["grid_size"].get<std::size_t>();
  }
  const json& bs = field(j, "", "bootstrap");
  o.bootstrap_seed = seed_of(bs, "bootstrap");
  if (bs.contains("replicates")) {
    if (!bs["replicates"].is_number_integer() || bs["replicates"].get<long long>() < 2)
      throw ConfigError("bootstrap.replicates", "expects an integer >= 2");
    o.bootstrap_replicates = bs["replicates"].get<std::size_t>();
  }
  if (c.pool) {
    const json& cl = field(j, "", "cleaning");
    c.cleaning_seed = seed_of(cl, "cleaning");
    c.cleaning_m_grid = cl.contains("m_grid") ? index_list(cl["m_grid"], "cleaning.m_grid") : o.m_grid;
  }
  c.output_dir = resolve("output_dir", field(j, "", "output_dir"));
  return c;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{ "Conditional density estimation under covariate shift", "cdeshift" };
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker thread cap (0 = all cores)");
  app.set_version_flag("--version", kVersion);

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Generate synthetic data or rejection-sample a pool");
  s_sim->add_option("--design", sim.design, "gaussian or selection");
  s_sim->add_option("--n-labeled", sim.n_labeled);
  s_sim->add_option("--n-unlabeled", sim.n_unlabeled);
  s_sim->add_option("--dimension", sim.dimension);
  s_sim->add_option("--shift", sim.shift, "Mean shift of the gaussian design");
  s_sim->add_option("--noise", sim.noise);
  s_sim->add_option("--scheme", sim.scheme, "scheme1, scheme2 or scheme3");
  s_sim->add_option("--mean", sim.mean, "logistic or identity");
  s_sim->add_option("--seed", sim.seed)->required();
  s_sim->add_option("--pool", sim.pool, "Pool table to rejection-sample instead of simulating");
  s_sim->add_option("--bias-column", sim.bias_column);
  s_sim->add_option("--beta-params", sim.beta_params)->delimiter(',');
  s_sim->add_option("--out-dir", sim.out_dir)->required();

  CleanArgs cl;
  auto* s_clean = app.add_subcommand("clean", "Replace labeled rows that have zero estimated weight");
  s_clean->add_option("--pool", cl.pool)->required();
  s_clean->add_option("--labeled", cl.labeled)->required();
  s_clean->add_option("--unlabeled", cl.unlabeled)->required();
  s_clean->add_option("--target", cl.target, "Rows to keep (default: size of --labeled)");
  s_clean->add_option("--m-grid", cl.m_grid)->delimiter(',');
  s_clean->add_option("--seed", cl.seed)->required();
  s_clean->add_option("--out-dir", cl.out_dir)->required();

  const auto add_data = [](CLI::App* sub, DataArgs& d) {
    sub->add_option("--labeled", d.labeled)->required();
    sub->add_option("--unlabeled", d.unlabeled)->required();
    sub->add_option("--split", d.split, "train,validation,test fractions")->delimiter(',');
    sub->add_option("--seed", d.seed, "Split seed")->required();
    sub->add_option("--response-range", d.response_range, "min,max of the raw response")->delimiter(',');
  };

  FitWeightsArgs fw;
  auto* s_fw = app.add_subcommand("fit-weights", "Fit the nearest-neighbor importance weights");
  add_data(s_fw, fw.data);
  s_fw->add_option("--m-grid", fw.m_grid)->delimiter(',');
  s_fw->add_option("--selection", fw.selection, "none, stepwise or exhaustive");
  s_fw->add_option("--out-dir", fw.out_dir)->required();

  FitCdeArgs fc;
  auto* s_fc = app.add_subcommand("fit-cde", "Fit and tune one conditional density estimator");
  add_data(s_fc, fc.data);
  s_fc->add_option("--method", fc.method, "nn, ker-nn or series");
  s_fc->add_flag("--corrected", fc.corrected, "Use importance weights and the shift-corrected loss");
  s_fc->add_option("--weights", fc.weights, "Weights file from fit-weights");
  s_fc->add_option("--m-grid", fc.m_grid)->delimiter(',');
  s_fc->add_option("--n-grid", fc.n_grid)->delimiter(',');
  s_fc->add_option("--bins", fc.bins)->delimiter(',');
  s_fc->add_option("--eps", fc.eps)->delimiter(',');
  s_fc->add_option("--series-i", fc.series_i)->delimiter(',');
  s_fc->add_option("--series-j", fc.series_j)->delimiter(',');
  s_fc->add_option("--series-eps", fc.series_eps)->delimiter(',');
  s_fc->add_option("--basis", fc.basis, "cosine or fourier");
  s_fc->add_option("--grid-size", fc.grid_size);
  s_fc->add_option("--replicates", fc.replicates, "Bootstrap replicates for the test loss");
  s_fc->add_option("--bootstrap-seed", fc.bootstrap_seed);
  s_fc->add_option("--out-dir", fc.out_dir)->required();

  StackArgs st;
  auto* s_st = app.add_subcommand("stack", "Combine fitted models by validation loss");
  s_st->add_option("--models", st.models)->required()->delimiter(',');
  s_st->add_option("--labeled", st.labeled, "Labeled validation table")->required();
  s_st->add_option("--unlabeled", st.unlabeled, "Unlabeled validation table")->required();
  s_st->add_option("--weights", st.weights);
  s_st->add_option("--out-dir", st.out_dir)->required();

  PipelineArgs pl;
  auto* s_pl = app.add_subcommand("pipeline", "Run the full shift-corrected pipeline");
  s_pl->add_option("--config", pl.config)->required();

  PipelineArgs sv;
  auto* s_sv = app.add_subcommand("select-vars", "Run the pipeline with covariate selection");
  s_sv->add_option("--config", sv.config)->required();
  s_sv->add_option("--target", sv.target, "weights, cde or both");
  s_sv->add_option("--mode", sv.mode, "stepwise or exhaustive");

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "Estimate a loss for a model or for catalogs");
  s_ev->add_option("--model", ev.model);
  s_ev->add_option("--labeled-catalog", ev.labeled_catalog);
  s_ev->add_option("--unlabeled-catalog", ev.unlabeled_catalog);
  s_ev->add_option("--labeled", ev.labeled);
  s_ev->add_option("--unlabeled", ev.unlabeled);
  s_ev->add_option("--weights", ev.weights);
  s_ev->add_option("--variant", ev.variant, "labeled_only, shift_corrected or oracle");
  s_ev->add_option("--replicates", ev.replicates, "Bootstrap replicates (0 = no SE)");
  s_ev->add_option("--seed", ev.seed);
  s_ev->add_option("--out", ev.out);

  DiagnoseArgs dg;
  auto* s_dg = app.add_subcommand("diagnose", "Q-Q, PIT/KS, coverage and HPD diagnostics");
  s_dg->add_option("--model", dg.model)->required();
  s_dg->add_option("--labeled", dg.labeled, "Labeled test table")->required();
  s_dg->add_flag("--unweighted", dg.unweighted);
  s_dg->add_flag("--per-observation", dg.per_observation, "Scale weighted averages by 1/n");
  s_dg->add_option("--out-dir", dg.out_dir)->required();

  PredictArgs pr;
  auto* s_pr = app.add_subcommand("predict", "Write a density catalog");
  s_pr->add_option("--model", pr.model)->required();
  s_pr->add_option("--input", pr.input)->required();
  s_pr->add_option("--out", pr.out)->required();

  PredictArgs fn;
  auto* s_fn = app.add_subcommand("functional", "Expected value of g(z) under each predicted density");
  s_fn->add_option("--model", fn.model)->required();
  s_fn->add_option("--input", fn.input)->required();
  s_fn->add_option("--g", fn.g, "G values of g on the grid")->required();
  s_fn->add_option("--out", fn.out)->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::Success&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << app.help() << '\n';
    err << json{ { "error", { { "kind", "usage" }, { "message", e.what() } } } }.dump() << '\n';
    return 2;
  }

  try {
    set_max_threads(threads);
    if (s_sim->parsed())
      return cmd_simulate(sim, out);
    if (s_clean->parsed())
      return cmd_clean(cl, out);
    if (s_fw->parsed())
      return cmd_fit_weights(fw, out);
    if (s_fc->parsed())
      return cmd_fit_cde(fc, out);
    if (s_st->parsed())
      return cmd_stack(st, out);
    if (s_pl->parsed())
      return cmd_pipeline(pl, false, out);
    if (s_sv->parsed())
      return cmd_pipeline(sv, true, out);
    if (s_ev->parsed())
      return cmd_evaluate(ev, out);
    if (s_dg->parsed())
      return cmd_diagnose(dg, out);
    if (s_pr->parsed())
      return cmd_predict(pr, out);
    if (s_fn->parsed())
      return cmd_functional(fn, out);
  } catch (const std::exception& e) {
    err << error_json(e).dump() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

int run(int argc, char** argv)
{
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

} // namespace cdeshift::cli
