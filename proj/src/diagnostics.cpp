#include "cdeshift/diagnostics.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/weights.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace cdeshift {

namespace {

void check_weights(const Eigen::VectorXd& w, Index n)
{
  if (w.size() != n)
    throw ValidationError("weights and test rows differ in length");
  if (n == 0)
    throw ValidationError("diagnostics need a nonempty test set");
  if ((w.array() < 0.0).any() || !w.allFinite())
    throw ValidationError("weights must be finite and nonnegative");
  if (!(w.sum() > 0.0))
    throw ValidationError("weights are all zero");
}

void check_alpha(double alpha)
{
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("HPD level alpha must lie in [0, 1]");
}

double weighted_share(const std::vector<char>& hit, const Eigen::VectorXd& w, WeightScaling scaling)
{
  double acc = 0.0;
  for (std::size_t i = 0; i < hit.size(); ++i)
    if (hit[i])
      acc += w(static_cast<Index>(i));
  return scaling == WeightScaling::self_normalized ? acc / w.sum()
                                                   : acc / static_cast<double>(hit.size());
}

struct CellPlan
{
  std::vector<char> full;  // cells entirely inside
  std::ptrdiff_t partial = -1;
  double fraction = 0.0;   // of the partial cell
  bool partial_from_right = false;
};

CellPlan plan_cells(const DensityGrid& d, double alpha)
{
  if (!d.normalized())
    throw ValidationError("HPD regions need a normalized density");
  check_alpha(alpha);
  const std::size_t cells = d.size() - 1;
  const double h = d.spacing();
  std::vector<double> mass(cells);
  for (std::size_t c = 0; c < cells; ++c)
    mass[c] = 0.5 * (d[c] + d[c + 1]) * h;
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });

  CellPlan plan;
  plan.full.assign(cells, 0);
  double acc = 0.0;
  for (std::size_t k = 0; k < cells && acc < alpha; ++k) {
    const std::size_t c = order[k];
    if (mass[c] <= 0.0)
      break;
    if (acc + mass[c] <= alpha) {
      plan.full[c] = 1;
      acc += mass[c];
    } else {
      plan.partial = static_cast<std::ptrdiff_t>(c);
      plan.fraction = (alpha - acc) / mass[c];
      acc = alpha;
    }
  }
  if (plan.partial >= 0) {
    const auto c = static_cast<std::size_t>(plan.partial);
    const bool left = c > 0 && plan.full[c - 1];
    const bool right = c + 1 < cells && plan.full[c + 1];
    plan.partial_from_right = right && !left;
  }
  return plan;
}

} // namespace

std::vector<double> default_c_grid()
{
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k)
    g.push_back(0.05 * k);
  return g;
}

std::vector<double> default_alpha_grid()
{
  std::vector<double> g;
  for (int k = 1; k <= 9; ++k)
    g.push_back(0.1 * k);
  return g;
}

std::vector<Interval> hpd_region(const DensityGrid& d, double alpha)
{
  const CellPlan plan = plan_cells(d, alpha);
  const double h = d.spacing();
  std::vector<Interval> pieces;
  for (std::size_t c = 0; c < plan.full.size(); ++c) {
    double lo = 0.0, hi = 0.0;
    if (plan.full[c]) {
      lo = d.knot(c);
      hi = d.knot(c + 1);
    } else if (static_cast<std::ptrdiff_t>(c) == plan.partial) {
      if (plan.partial_from_right) {
        hi = d.knot(c + 1);
        lo = hi - plan.fraction * h;
      } else {
        lo = d.knot(c);
        hi = lo + plan.fraction * h;
      }
    } else {
      continue;
    }
    if (!pieces.empty() && pieces.back().hi == lo)
      pieces.back().hi = hi;
    else
      pieces.push_back({ lo, hi });
  }
  return pieces;
}

std::size_t hpd_cell_count(const DensityGrid& d, double alpha)
{
  const CellPlan plan = plan_cells(d, alpha);
  return static_cast<std::size_t>(std::count(plan.full.begin(), plan.full.end(), 1)) +
         (plan.partial >= 0 ? 1 : 0);
}

double region_length(std::span<const Interval> region)
{
  double s = 0.0;
  for (const auto& r : region)
    s += r.hi - r.lo;
  return s;
}

bool region_contains(std::span<const Interval> region, double z)
{
  return std::any_of(region.begin(), region.end(),
                     [z](const Interval& r) { return z >= r.lo && z <= r.hi; });
}

std::vector<QqPoint> qq_curve(std::span<const DensityGrid> predicted,
                              const Eigen::VectorXd& z,
                              const Eigen::VectorXd& weights,
                              std::span<const double> c_grid,
                              WeightScaling scaling)
{
  const auto n = static_cast<Index>(predicted.size());
  if (z.size() != n)
    throw ValidationError("densities and responses differ in length");
  check_weights(weights, n);
  std::vector<QqPoint> out;
  std::vector<char> hit(predicted.size());
  for (double c : c_grid) {
    if (!(c > 0.0 && c < 1.0))
      throw ValidationError("Q-Q levels must lie in (0, 1)");
    for (std::size_t i = 0; i < predicted.size(); ++i)
      hit[i] = z(static_cast<Index>(i)) <= quantile(predicted[i], c);
    out.push_back({ c, weighted_share(hit, weights, scaling) });
  }
  return out;
}

std::vector<double> pit_values(std::span<const DensityGrid> predicted, const Eigen::VectorXd& z)
{
  if (z.size() != static_cast<Index>(predicted.size()))
    throw ValidationError("densities and responses differ in length");
  std::vector<double> u(predicted.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = cdf(predicted[i], z(static_cast<Index>(i)));
  return u;
}

double ks_statistic(std::vector<double> u)
{
  if (u.empty())
    throw ValidationError("KS statistic needs at least one value");
  std::sort(u.begin(), u.end());
  const auto n = static_cast<double>(u.size());
  double D = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double k = static_cast<double>(i);
    D = std::max({ D, (k + 1.0) / n - u[i], u[i] - k / n });
  }
  return D;
}

double kolmogorov_pvalue(double D, std::size_t n)
{
  if (n == 0)
    throw ValidationError("KS p-value needs n >= 1");
  const double lambda = static_cast<double>(n) * D * D;
  if (!(lambda > 1e-12))
    return 1.0;
  double sum = 0.0;
  for (long k = 1; k < 100000000L; ++k) {
    const double kk = static_cast<double>(k);
    const double term = std::exp(-2.0 * kk * kk * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-12)
      break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult pit_ks(std::span<const DensityGrid> predicted, const Eigen::VectorXd& z)
{
  if (predicted.empty())
    throw ValidationError("diagnostics need a nonempty test set");
  const double D = ks_statistic(pit_values(predicted, z));
  return { D, kolmogorov_pvalue(D, predicted.size()) };
}

std::vector<CoveragePoint> coverage_curve(std::span<const DensityGrid> predicted,
                                          const Eigen::VectorXd& z,
                                          const Eigen::VectorXd& weights,
                                          std::span<const double> alpha_grid,
                                          WeightScaling scaling)
{
  const auto n = static_cast<Index>(predicted.size());
  if (z.size() != n)
    throw ValidationError("densities and responses differ in length");
  check_weights(weights, n);
  const double n_eff = effective_sample_size(weights);
  std::vector<CoveragePoint> out;
  std::vector<char> hit(predicted.size());
  for (double a : alpha_grid) {
    if (!(a > 0.0 && a < 1.0))
      throw ValidationError("coverage levels must lie in (0, 1)");
    for (std::size_t i = 0; i < predicted.size(); ++i)
      hit[i] = region_contains(hpd_region(predicted[i], a), z(static_cast<Index>(i)));
    const double half = 1.96 * std::sqrt(a * (1.0 - a) / n_eff);
    out.push_back({ a, weighted_share(hit, weights, scaling), std::max(0.0, a - half),
                    std::min(1.0, a + half) });
  }
  return out;
}

double mean_hpd_size(std::span<const DensityGrid> predicted, double alpha)
{
  if (predicted.empty())
    throw ValidationError("mean HPD size needs at least one density");
  double s = 0.0;
  for (const auto& d : predicted)
    s += region_length(hpd_region(d, alpha));
  return s / static_cast<double>(predicted.size());
}

nlohmann::json DiagnosticReport::to_json() const
{
  nlohmann::json qj = nlohmann::json::array();
  for (const auto& p : qq)
    qj.push_back({ { "c", p.c }, { "c_hat", p.c_hat } });
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& p : coverage)
    cj.push_back({ { "alpha", p.alpha },
                   { "alpha_hat", p.alpha_hat },
                   { "ci_low", p.ci_low },
                   { "ci_high", p.ci_high } });
  return { { "qq", std::move(qj) },
           { "coverage", std::move(cj) },
           { "ks_statistic", ks.statistic },
           { "ks_pvalue", ks.p_value },
           { "mean_hpd_size_95", mean_hpd_size_95 },
           { "n", n },
           { "effective_n", effective_n } };
}

void DiagnosticReport::write_qq_csv(std::ostream& out) const
{
  out << "c,c_hat\n";
  for (const auto& p : qq)
    out << p.c << ',' << p.c_hat << '\n';
}

void DiagnosticReport::write_coverage_csv(std::ostream& out) const
{
  out << "alpha,alpha_hat,ci_low,ci_high\n";
  for (const auto& p : coverage)
    out << p.alpha << ',' << p.alpha_hat << ',' << p.ci_low << ',' << p.ci_high << '\n';
}

DiagnosticReport diagnose(const ConditionalDensityEstimator& model,
                          const Sample& labeled_test,
                          const Eigen::VectorXd& weights,
                          WeightScaling scaling)
{
  const auto d = model.predict_all(labeled_test.covariates());
  const auto& z = labeled_test.response();
  const auto cg = default_c_grid();
  const auto ag = default_alpha_grid();
  DiagnosticReport r;
  r.qq = qq_curve(d, z, weights, cg, scaling);
  r.coverage = coverage_curve(d, z, weights, ag, scaling);
  r.ks = pit_ks(d, z);
  r.mean_hpd_size_95 = mean_hpd_size(d, 0.95);
  r.n = d.size();
  r.effective_n = effective_sample_size(weights);
  return r;
}

} // namespace cdeshift
