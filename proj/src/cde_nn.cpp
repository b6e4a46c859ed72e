#include "cdeshift/cde_nn.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/neighbors.hpp"
#include "cdeshift/parallel.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cdeshift {

namespace {

Index bin_of(double z, Index bins)
{
  const auto b = static_cast<Index>(std::floor(z * static_cast<double>(bins)));
  return std::clamp<Index>(b, 0, bins - 1);
}

void check_params(NnVariant variant, Index bins, double epsilon)
{
  if (variant == NnVariant::histogram && bins < 1)
    throw ValidationError("histogram needs at least one bin");
  if (variant == NnVariant::kernel && !(epsilon > 0.0))
    throw ValidationError("kernel bandwidth epsilon must be positive");
}

// Raw (unnormalized) histogram on the grid from bin masses.
DensityGrid histogram_from_mass(const std::vector<double>& mass, std::size_t grid_size)
{
  const auto bins = static_cast<Index>(mass.size());
  double total = 0.0;
  for (double m : mass)
    total += m;
  if (!(total > 0.0))
    return DensityGrid::uniform(grid_size, true);
  std::vector<double> raw(grid_size);
  for (std::size_t g = 0; g < grid_size; ++g)
    raw[g] = mass[static_cast<std::size_t>(bin_of(grid_knot(g, grid_size), bins))] *
             static_cast<double>(bins) / total;
  return normalize(std::move(raw));
}

void add_kernel(std::vector<double>& raw, double zk, double wk, double epsilon)
{
  const std::size_t G = raw.size();
  const double scale = 1.0 / (4.0 * epsilon);
  for (std::size_t g = 0; g < G; ++g) {
    const double d = grid_knot(g, G) - zk;
    raw[g] += wk * std::exp(-d * d * scale);
  }
}

} // namespace

std::string to_string(NnVariant v)
{
  return v == NnVariant::histogram ? "histogram" : "kernel";
}

DensityGrid histogram_density(std::span<const double> z,
                              std::span<const double> w,
                              Index bins,
                              std::size_t grid_size)
{
  if (bins < 1)
    throw ValidationError("histogram needs at least one bin");
  if (z.size() != w.size())
    throw ValidationError("responses and weights have different lengths");
  std::vector<double> mass(static_cast<std::size_t>(bins), 0.0);
  for (std::size_t k = 0; k < z.size(); ++k)
    mass[static_cast<std::size_t>(bin_of(z[k], bins))] += w[k];
  return histogram_from_mass(mass, grid_size);
}

DensityGrid kernel_density(std::span<const double> z,
                           std::span<const double> w,
                           double epsilon,
                           std::size_t grid_size)
{
  if (!(epsilon > 0.0))
    throw ValidationError("kernel bandwidth epsilon must be positive");
  if (z.size() != w.size())
    throw ValidationError("responses and weights have different lengths");
  std::vector<double> raw(grid_size, 0.0);
  for (std::size_t k = 0; k < z.size(); ++k)
    add_kernel(raw, z[k], w[k], epsilon);
  return normalize(std::move(raw));
}

NnCdeModel::NnCdeModel(Eigen::MatrixXd train_x,
                       Eigen::VectorXd train_z,
                       Eigen::VectorXd weights,
                       NnVariant variant,
                       Index n_neighbors,
                       Index bins,
                       double epsilon,
                       std::vector<Index> covariate_subset,
                       Index input_dimension,
                       std::size_t grid_size)
  : train_x_(std::move(train_x))
  , train_z_(std::move(train_z))
  , weights_(std::move(weights))
  , variant_(variant)
  , n_neighbors_(n_neighbors)
  , bins_(bins)
  , epsilon_(epsilon)
  , subset_(std::move(covariate_subset))
  , input_dim_(input_dimension)
  , grid_size_(grid_size)
{
  if (train_x_.rows() == 0)
    throw ValidationError("nearest-neighbor estimator needs training rows");
  if (train_z_.size() != train_x_.rows() || weights_.size() != train_x_.rows())
    throw ValidationError("training covariates, responses and weights differ in length");
  if ((weights_.array() < 0.0).any() || !weights_.allFinite())
    throw ValidationError("importance weights must be finite and nonnegative");
  if (n_neighbors_ < 1 || n_neighbors_ > train_x_.rows())
    throw ValidationError("neighbor count N must lie in [1, n_train]");
  if (grid_size_ < 2)
    throw ValidationError("grid needs at least two knots");
  check_params(variant_, bins_, epsilon_);
  check_subset(subset_, input_dim_);
  if (static_cast<Index>(subset_.size()) != train_x_.cols())
    throw ValidationError("covariate subset does not match the training matrix");
}

NnCdeModel NnCdeModel::fit(const Sample& labeled_train,
                           const Eigen::VectorXd& weights,
                           NnVariant variant,
                           Index n_neighbors,
                           Index bins,
                           double epsilon,
                           std::vector<Index> subset,
                           std::size_t grid_size)
{
  if (subset.empty())
    subset = all_columns(labeled_train.cols());
  check_subset(subset, labeled_train.cols());
  Eigen::MatrixXd train_x = select_columns(labeled_train.covariates(), subset);
  return NnCdeModel(std::move(train_x), labeled_train.response(),
                    weights, variant, n_neighbors, bins, epsilon, std::move(subset),
                    labeled_train.cols(), grid_size);
}

std::vector<Index> NnCdeModel::neighbors(const Eigen::VectorXd& x, Index count) const
{
  if (x.size() != input_dim_)
    throw ValidationError("query has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(input_dim_));
  return nearest_rows(squared_distances(train_x_, select_entries(x, subset_)), count);
}

DensityGrid NnCdeModel::density_from_neighbors(std::span<const Index> rows,
                                               Index bins,
                                               double epsilon) const
{
  check_params(variant_, bins, epsilon);
  if (variant_ == NnVariant::histogram) {
    std::vector<double> mass(static_cast<std::size_t>(bins), 0.0);
    for (Index r : rows)
      mass[static_cast<std::size_t>(bin_of(train_z_(r), bins))] += weights_(r);
    return histogram_from_mass(mass, grid_size_);
  }
  std::vector<double> raw(grid_size_, 0.0);
  for (Index r : rows)
    add_kernel(raw, train_z_(r), weights_(r), epsilon);
  return normalize(std::move(raw));
}

DensityGrid NnCdeModel::predict(const Eigen::VectorXd& x) const
{
  const auto rows = neighbors(x, n_neighbors_);
  return density_from_neighbors(rows, bins_, epsilon_);
}

nlohmann::json NnCdeModel::to_json() const
{
  return { { "kind", kind() },
           { "variant", to_string(variant_) },
           { "n_neighbors", n_neighbors_ },
           { "bins", bins_ },
           { "epsilon", epsilon_ },
           { "covariate_subset", subset_ },
           { "input_dimension", input_dim_ },
           { "grid_size", grid_size_ },
           { "train_x", detail::matrix_to_json(train_x_) },
           { "train_z", detail::vector_to_json(train_z_) },
           { "weights", detail::vector_to_json(weights_) } };
}

NnCdeModel NnCdeModel::from_json(const nlohmann::json& j)
{
  const auto subset = j.at("covariate_subset").get<std::vector<Index>>();
  const auto variant_name = j.at("variant").get<std::string>();
  if (variant_name != "histogram" && variant_name != "kernel")
    throw ValidationError("unknown nearest-neighbor variant '" + variant_name + "'");
  return NnCdeModel(detail::matrix_from_json(j.at("train_x"), static_cast<Index>(subset.size())),
                    detail::vector_from_json(j.at("train_z")),
                    detail::vector_from_json(j.at("weights")),
                    variant_name == "histogram" ? NnVariant::histogram : NnVariant::kernel,
                    j.at("n_neighbors").get<Index>(), j.at("bins").get<Index>(),
                    j.at("epsilon").get<double>(), subset, j.at("input_dimension").get<Index>(),
                    j.at("grid_size").get<std::size_t>());
}

NnFit fit_nn_cde(const Sample& labeled_train,
                 const Eigen::VectorXd& train_weights,
                 NnVariant variant,
                 const NnGrid& grid,
                 const Sample& labeled_val,
                 const Eigen::VectorXd& val_weights,
                 const Sample& unlabeled_val,
                 LossVariant loss_variant,
                 std::vector<Index> subset,
                 std::size_t grid_size)
{
  auto ns = grid.n_neighbors;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  if (ns.empty())
    throw ValidationError("neighbor grid is empty");
  if (ns.front() < 1 || ns.back() > labeled_train.rows())
    throw ValidationError("neighbor counts must lie in [1, n_train]");
  // Second hyperparameter: ascending bins, or descending epsilon, so the
  // first minimum found matches the tie rule.
  std::vector<double> second;
  if (variant == NnVariant::histogram) {
    for (Index b : grid.bins)
      second.push_back(static_cast<double>(b));
    std::sort(second.begin(), second.end());
  } else {
    second = grid.epsilons;
    std::sort(second.begin(), second.end(), std::greater<>());
  }
  second.erase(std::unique(second.begin(), second.end()), second.end());
  if (second.empty())
    throw ValidationError(variant == NnVariant::histogram ? "bin grid is empty" : "epsilon grid is empty");

  const bool corrected = loss_variant == LossVariant::shift_corrected;
  const Eigen::VectorXd w =
    corrected ? train_weights : Eigen::VectorXd::Ones(labeled_train.rows());
  const NnCdeModel base = NnCdeModel::fit(labeled_train, w, variant, ns.front(),
                                          variant == NnVariant::histogram ? static_cast<Index>(second.front()) : 1,
                                          variant == NnVariant::kernel ? second.front() : 1.0,
                                          std::move(subset), grid_size);

  // Squared-term queries and fit-term queries.
  const Sample* sq_set = nullptr;
  const Sample* fit_set = nullptr;
  switch (loss_variant) {
    case LossVariant::labeled_only: sq_set = fit_set = &labeled_val; break;
    case LossVariant::shift_corrected: sq_set = &unlabeled_val; fit_set = &labeled_val; break;
    case LossVariant::oracle: sq_set = fit_set = &unlabeled_val; break;
  }
  if (!fit_set->labeled())
    throw ValidationError("validation sample for the fit term has no responses");
  if (sq_set->rows() == 0 || fit_set->rows() == 0)
    throw ValidationError("validation sets must be nonempty");
  if (corrected && val_weights.size() != labeled_val.rows())
    throw ValidationError("validation weights do not match the labeled validation sample");
  const bool paired = sq_set == fit_set;

  const std::size_t n_combo = ns.size() * second.size();
  const auto combo = [&](std::size_t in, std::size_t is) { return in * second.size() + is; };
  std::vector<LossTerms> terms(n_combo);
  for (auto& t : terms) {
    t.squared.resize(static_cast<std::size_t>(sq_set->rows()));
    t.fit.resize(static_cast<std::size_t>(fit_set->rows()));
    t.paired = paired;
  }

  // One pass per query: accumulate neighbors nearest-first and snapshot at
  // each N; this reproduces predict() exactly.
  const auto evaluate_queries = [&](const Sample& set, bool want_sq, bool want_fit) {
    parallel_for(static_cast<std::size_t>(set.rows()), [&](std::size_t q) {
      const auto qi = static_cast<Index>(q);
      const auto rows = base.neighbors(set.row(qi), ns.back());
      const double zq = want_fit ? set.response()(qi) : 0.0;
      const double wq = want_fit && corrected ? val_weights(qi) : 1.0;
      for (std::size_t is = 0; is < second.size(); ++is) {
        std::vector<double> mass;
        std::vector<double> raw;
        if (variant == NnVariant::histogram)
          mass.assign(static_cast<std::size_t>(second[is]), 0.0);
        else
          raw.assign(grid_size, 0.0);
        std::size_t next = 0;
        for (std::size_t in = 0; in < ns.size(); ++in) {
          for (; next < static_cast<std::size_t>(ns[in]); ++next) {
            const Index r = rows[next];
            if (variant == NnVariant::histogram)
              mass[static_cast<std::size_t>(bin_of(labeled_train.response()(r), static_cast<Index>(second[is])))] += w(r);
            else
              add_kernel(raw, labeled_train.response()(r), w(r), second[is]);
          }
          const DensityGrid d = variant == NnVariant::histogram ? histogram_from_mass(mass, grid_size)
                                                                : normalize(raw);
          auto& t = terms[combo(in, is)];
          if (want_sq)
            t.squared[q] = squared_integral(d);
          if (want_fit)
            t.fit[q] = evaluate(d, zq) * wq;
        }
      }
    });
  };
  if (paired) {
    evaluate_queries(*sq_set, true, true);
  } else {
    evaluate_queries(*sq_set, true, false);
    evaluate_queries(*fit_set, false, true);
  }

  NnFit out{ base, {}, std::numeric_limits<double>::infinity() };
  std::size_t best_n = 0, best_s = 0;
  for (std::size_t in = 0; in < ns.size(); ++in)
    for (std::size_t is = 0; is < second.size(); ++is) {
      const double loss = terms[combo(in, is)].value();
      const bool hist = variant == NnVariant::histogram;
      out.loss_table.push_back({ ns[in], hist ? static_cast<Index>(second[is]) : 0,
                                 hist ? 0.0 : second[is], loss });
      if (loss < out.loss) {
        out.loss = loss;
        best_n = in;
        best_s = is;
      }
    }
  out.model = NnCdeModel(base.train_x(), base.train_z(), base.weights(), variant, ns[best_n],
                         variant == NnVariant::histogram ? static_cast<Index>(second[best_s]) : 1,
                         variant == NnVariant::kernel ? second[best_s] : 1.0,
                         base.covariate_subset(), base.input_dimension(), grid_size);
  return out;
}

} // namespace cdeshift
