#include "cdeshift/weights.hpp"

#include "cdeshift/error.hpp"
#include "json_util.hpp"
#include "cdeshift/neighbors.hpp"
#include "cdeshift/parallel.hpp"
#include "cdeshift/random.hpp"

#include <algorithm>
#include <limits>

namespace cdeshift {

namespace {

double beta_value(std::size_t count, Index M, Index n_l, Index n_u)
{
  return static_cast<double>(count) * static_cast<double>(n_l) /
         (static_cast<double>(M) * static_cast<double>(n_u));
}

Eigen::VectorXd sorted(Eigen::VectorXd v)
{
  std::sort(v.data(), v.data() + v.size());
  return v;
}

// beta(x_i) for every query row (already restricted) and every M.
Eigen::MatrixXd beta_profile(const Eigen::MatrixXd& labeled,
                             const Eigen::MatrixXd& unlabeled,
                             const Eigen::MatrixXd& queries,
                             const std::vector<Index>& m_grid)
{
  Eigen::MatrixXd out(queries.rows(), static_cast<Index>(m_grid.size()));
  parallel_for(static_cast<std::size_t>(queries.rows()), [&](std::size_t qi) {
    const auto i = static_cast<Index>(qi);
    const Eigen::VectorXd q = queries.row(i).transpose();
    const Eigen::VectorXd dl = sorted(squared_distances(labeled, q));
    const Eigen::VectorXd du = sorted(squared_distances(unlabeled, q));
    for (std::size_t k = 0; k < m_grid.size(); ++k) {
      const double r2 = dl(m_grid[k] - 1);
      const auto count =
        static_cast<std::size_t>(std::upper_bound(du.data(), du.data() + du.size(), r2) - du.data());
      out(i, static_cast<Index>(k)) = beta_value(count, m_grid[k], labeled.rows(), unlabeled.rows());
    }
  });
  return out;
}

void check_model(const WeightModel& m)
{
  if (m.n_labeled() == 0 || m.n_unlabeled() == 0)
    throw ValidationError("weight model needs labeled and unlabeled training rows");
  if (m.M < 1 || m.M > m.n_labeled())
    throw ValidationError("neighbor count M must lie in [1, n_L]");
}

} // namespace

nlohmann::json WeightModel::to_json() const
{
  return { { "kind", "beta-nn" },
           { "M", M },
           { "covariate_subset", covariate_subset },
           { "input_dimension", input_dimension },
           { "n_labeled", n_labeled() },
           { "n_unlabeled", n_unlabeled() },
           { "labeled_train", detail::matrix_to_json(labeled_train) },
           { "unlabeled_train", detail::matrix_to_json(unlabeled_train) } };
}

WeightModel WeightModel::from_json(const nlohmann::json& j)
{
  WeightModel m;
  m.M = j.at("M").get<Index>();
  m.covariate_subset = j.at("covariate_subset").get<std::vector<Index>>();
  m.input_dimension = j.at("input_dimension").get<Index>();
  const auto cols = static_cast<Index>(m.covariate_subset.size());
  m.labeled_train = detail::matrix_from_json(j.at("labeled_train"), cols);
  m.unlabeled_train = detail::matrix_from_json(j.at("unlabeled_train"), cols);
  check_subset(m.covariate_subset, m.input_dimension);
  check_model(m);
  return m;
}

WeightModel fit_weight_model(const Sample& labeled_train,
                             const Sample& unlabeled_train,
                             Index M,
                             std::vector<Index> subset)
{
  if (labeled_train.cols() != unlabeled_train.cols())
    throw ValidationError("labeled and unlabeled samples have different covariates");
  if (subset.empty())
    subset = all_columns(labeled_train.cols());
  check_subset(subset, labeled_train.cols());
  WeightModel m{ select_columns(labeled_train.covariates(), subset),
                 select_columns(unlabeled_train.covariates(), subset),
                 M,
                 std::move(subset),
                 labeled_train.cols() };
  check_model(m);
  return m;
}

double predict_beta(const WeightModel& model, const Eigen::VectorXd& x)
{
  if (x.size() != model.input_dimension)
    throw ValidationError("query has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(model.input_dimension));
  const Eigen::VectorXd q = select_entries(x, model.covariate_subset);
  Eigen::VectorXd dl = squared_distances(model.labeled_train, q);
  std::nth_element(dl.data(), dl.data() + (model.M - 1), dl.data() + dl.size());
  const double r2 = dl(model.M - 1);
  const Eigen::VectorXd du = squared_distances(model.unlabeled_train, q);
  const auto count = static_cast<std::size_t>((du.array() <= r2).count());
  return beta_value(count, model.M, model.n_labeled(), model.n_unlabeled());
}

Eigen::VectorXd predict_beta(const WeightModel& model, const Eigen::MatrixXd& x)
{
  if (x.rows() > 0 && x.cols() != model.input_dimension)
    throw ValidationError("query matrix has the wrong number of covariates");
  Eigen::VectorXd out(x.rows());
  parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t i) {
    const auto r = static_cast<Index>(i);
    out(r) = predict_beta(model, Eigen::VectorXd(x.row(r).transpose()));
  });
  return out;
}

double beta_loss(const Eigen::VectorXd& beta_labeled, const Eigen::VectorXd& beta_unlabeled)
{
  if (beta_labeled.size() == 0 || beta_unlabeled.size() == 0)
    throw ValidationError("weight loss needs nonempty labeled and unlabeled validation sets");
  return beta_labeled.squaredNorm() / static_cast<double>(beta_labeled.size()) -
         2.0 * beta_unlabeled.mean();
}

double beta_loss(const WeightModel& model, const Sample& labeled_val, const Sample& unlabeled_val)
{
  if (labeled_val.rows() == 0 || unlabeled_val.rows() == 0)
    throw ValidationError("weight loss needs nonempty labeled and unlabeled validation sets");
  return beta_loss(predict_beta(model, labeled_val.covariates()),
                   predict_beta(model, unlabeled_val.covariates()));
}

MSelection select_M(const Sample& labeled_train,
                    const Sample& unlabeled_train,
                    const Sample& labeled_val,
                    const Sample& unlabeled_val,
                    const std::vector<Index>& m_grid,
                    std::vector<Index> subset)
{
  if (m_grid.empty())
    throw ValidationError("M grid is empty");
  if (labeled_val.rows() == 0 || unlabeled_val.rows() == 0)
    throw ValidationError("weight loss needs nonempty labeled and unlabeled validation sets");
  for (Index m : m_grid)
    if (m < 1 || m > labeled_train.rows())
      throw ValidationError("M = " + std::to_string(m) + " is outside [1, n_L]");
  WeightModel base = fit_weight_model(labeled_train, unlabeled_train, m_grid.front(), std::move(subset));

  const Eigen::MatrixXd ql = select_columns(labeled_val.covariates(), base.covariate_subset);
  const Eigen::MatrixXd qu = select_columns(unlabeled_val.covariates(), base.covariate_subset);
  const Eigen::MatrixXd bl = beta_profile(base.labeled_train, base.unlabeled_train, ql, m_grid);
  const Eigen::MatrixXd bu = beta_profile(base.labeled_train, base.unlabeled_train, qu, m_grid);

  MSelection out{ base, {}, std::numeric_limits<double>::infinity() };
  for (std::size_t k = 0; k < m_grid.size(); ++k) {
    const double loss = beta_loss(bl.col(static_cast<Index>(k)), bu.col(static_cast<Index>(k)));
    out.loss_table.emplace_back(m_grid[k], loss);
    if (loss < out.loss || (loss == out.loss && m_grid[k] < out.model.M)) {
      out.loss = loss;
      out.model.M = m_grid[k];
    }
  }
  return out;
}

CleaningResult clean_zero_weights(const Sample& labeled_pool,
                                  const Sample& labeled_current,
                                  const Sample& unlabeled,
                                  Index target_size,
                                  const std::vector<Index>& prelim_m_grid,
                                  std::uint64_t seed)
{
  if (labeled_pool.rows() <= labeled_current.rows())
    throw ValidationError("the labeled pool must be strictly larger than the current labeled sample");
  if (target_size < 1)
    throw ValidationError("target size must be positive");

  const auto holdout = [seed](Index n, std::uint64_t stream) {
    Rng rng = make_rng(seed, stream);
    const auto perm = shuffled_indices(static_cast<std::size_t>(n), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
    std::vector<Index> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<Index> val(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return std::pair{ train, val };
  };
  const auto [lt, lv] = holdout(labeled_current.rows(), 1);
  const auto [ut, uv] = holdout(unlabeled.rows(), 2);
  if (lt.empty() || lv.empty() || ut.empty() || uv.empty())
    throw ValidationError("cleaning needs enough labeled and unlabeled rows for a holdout");
  std::vector<Index> grid;
  for (Index m : prelim_m_grid)
    if (m >= 1 && m <= static_cast<Index>(lt.size()))
      grid.push_back(m);
  const auto sel = select_M(labeled_current.select_rows(lt), unlabeled.select_rows(ut),
                            labeled_current.select_rows(lv), unlabeled.select_rows(uv),
                            grid.empty() ? prelim_m_grid : grid);

  const Eigen::VectorXd beta = predict_beta(sel.model, labeled_pool.covariates());
  const auto zeros = (beta.array() == 0.0).count();
  const Index nonzero = beta.size() - zeros;
  if (nonzero < target_size)
    throw ValidationError("only " + std::to_string(nonzero) +
                          " pool rows have nonzero weight; cannot reach target size " +
                          std::to_string(target_size));

  Rng rng = make_rng(seed, 3);
  const auto order = shuffled_indices(static_cast<std::size_t>(labeled_pool.rows()), rng);
  std::vector<Index> chosen;
  for (std::size_t k = 0; k < order.size() && static_cast<Index>(chosen.size()) < target_size; ++k)
    if (beta(static_cast<Index>(order[k])) != 0.0)
      chosen.push_back(static_cast<Index>(order[k]));
  std::sort(chosen.begin(), chosen.end());

  return CleaningResult{ labeled_pool.select_rows(chosen), chosen,
                         static_cast<double>(zeros) / static_cast<double>(beta.size()),
                         sel.model.M, sel.loss_table };
}

double effective_sample_size(std::span<const double> weights)
{
  double sum = 0.0, sq = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0))
      throw ValidationError("weights must be nonnegative");
    sum += w;
    sq += w * w;
  }
  if (!(sum > 0.0))
    throw ValidationError("effective sample size needs at least one positive weight");
  return sum * sum / sq;
}

double effective_sample_size(const Eigen::VectorXd& weights)
{
  return effective_sample_size(std::span<const double>(weights.data(), static_cast<std::size_t>(weights.size())));
}

} // namespace cdeshift
