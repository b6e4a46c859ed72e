#include "cdeshift/simulate.hpp"

#include "cdeshift/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace cdeshift {

std::string to_string(SchemeName name)
{
  switch (name) {
    case SchemeName::scheme1: return "scheme1";
    case SchemeName::scheme2: return "scheme2";
    case SchemeName::scheme3: return "scheme3";
    case SchemeName::custom: return "custom";
  }
  return "custom";
}

SchemeName scheme_from_string(const std::string& name)
{
  if (name == "scheme1")
    return SchemeName::scheme1;
  if (name == "scheme2")
    return SchemeName::scheme2;
  if (name == "scheme3")
    return SchemeName::scheme3;
  if (name == "custom")
    return SchemeName::custom;
  throw ValidationError("unknown selection scheme '" + name + "'");
}

SelectionScheme SelectionScheme::preset(SchemeName name, std::string bias_column, std::uint64_t seed)
{
  SelectionScheme s;
  s.name = name;
  s.bias_column = std::move(bias_column);
  s.seed = seed;
  switch (name) {
    case SchemeName::scheme1: s.a = 1.0; s.b = 1.0; break;
    case SchemeName::scheme2: s.a = 13.0; s.b = 4.0; break;
    case SchemeName::scheme3: s.a = 18.0; s.b = 4.0; break;
    case SchemeName::custom:
      throw ValidationError("custom schemes need explicit beta parameters");
  }
  return s;
}

void SelectionScheme::validate() const
{
  if (!(a > 0.0) || !(b > 0.0))
    throw ValidationError("beta parameters must be positive");
  const auto expect = [&](double ea, double eb) {
    if (a != ea || b != eb)
      throw ValidationError(to_string(name) + " requires Beta(" + std::to_string(ea) + ", " +
                            std::to_string(eb) + ")");
  };
  switch (name) {
    case SchemeName::scheme1: expect(1.0, 1.0); break;
    case SchemeName::scheme2: expect(13.0, 4.0); break;
    case SchemeName::scheme3: expect(18.0, 4.0); break;
    case SchemeName::custom: break;
  }
}

double beta_density(double a, double b, double t)
{
  if (t < 0.0 || t > 1.0)
    return 0.0;
  const double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  double log_val = log_norm;
  if (a != 1.0) {
    if (t == 0.0)
      return a > 1.0 ? 0.0 : INFINITY;
    log_val += (a - 1.0) * std::log(t);
  }
  if (b != 1.0) {
    if (t == 1.0)
      return b > 1.0 ? 0.0 : INFINITY;
    log_val += (b - 1.0) * std::log1p(-t);
  }
  return std::exp(log_val);
}

double beta_density_max(double a, double b)
{
  if (a < 1.0 || b < 1.0)
    throw ValidationError("beta density is unbounded when a parameter is below 1");
  if (a == 1.0 && b == 1.0)
    return 1.0;
  if (a == 1.0)
    return beta_density(a, b, 0.0);
  if (b == 1.0)
    return beta_density(a, b, 1.0);
  return beta_density(a, b, (a - 1.0) / (a + b - 2.0));
}

double acceptance_probability(const SelectionScheme& scheme, double t)
{
  return std::min(1.0, beta_density(scheme.a, scheme.b, t) / beta_density_max(scheme.a, scheme.b));
}

std::vector<Index> rejection_rows(const Sample& pool, const SelectionScheme& scheme)
{
  scheme.validate();
  const auto col = pool.column_index(scheme.bias_column);
  if (!col)
    throw ValidationError("bias column '" + scheme.bias_column + "' not found");
  const auto values = pool.covariates().col(*col);
  for (Index i = 0; i < values.size(); ++i)
    if (values(i) < 0.0 || values(i) > 1.0)
      throw ValidationError("bias column '" + scheme.bias_column +
                            "' must be scaled to [0,1] before selection");

  const double peak = beta_density_max(scheme.a, scheme.b);
  Rng rng = make_rng(scheme.seed);
  std::vector<Index> kept;
  for (Index i = 0; i < values.size(); ++i) {
    const double u = uniform_unit(rng);
    const double p = std::min(1.0, beta_density(scheme.a, scheme.b, values(i)) / peak);
    if (u < p)
      kept.push_back(i);
  }
  return kept;
}

Sample rejection_sample(const Sample& pool, const SelectionScheme& scheme, bool keep_response)
{
  const auto kept = rejection_rows(pool, scheme);
  if (kept.empty())
    throw ValidationError("rejection sampling kept no rows; use a larger pool");
  Sample out = pool.select_rows(kept);
  return keep_response ? out : out.without_response();
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// P(lo <= N(0,1) <= hi) computed on the tail that keeps precision.
double normal_mass(double lo, double hi)
{
  if (lo > 0.0)
    return 0.5 * (std::erfc(lo * kInvSqrt2) - std::erfc(hi * kInvSqrt2));
  if (hi < 0.0)
    return 0.5 * (std::erfc(-hi * kInvSqrt2) - std::erfc(-lo * kInvSqrt2));
  return 1.0 - 0.5 * std::erfc(-lo * kInvSqrt2) - 0.5 * std::erfc(hi * kInvSqrt2);
}

// Truncated normal on [0,1] with mean far below 0: exponential proposal.
double far_tail_sample(double mu, double sigma, Rng& rng)
{
  const double rate = -mu / (sigma * sigma);
  for (;;) {
    const double u = uniform_unit(rng);
    const double z = -std::log1p(-u * -std::expm1(-rate)) / rate;
    if (uniform_unit(rng) < std::exp(-z * z / (2.0 * sigma * sigma)))
      return z;
  }
}

Eigen::MatrixXd normal_matrix(Index rows, Index cols, Rng& rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      x(i, j) = normal(rng);
  return x;
}

Eigen::VectorXd draw_responses(const ConditionalLaw& law, const Eigen::MatrixXd& x, Rng& rng)
{
  Eigen::VectorXd z(x.rows());
  for (Index i = 0; i < x.rows(); ++i)
    z(i) = law.sample(x.row(i).transpose(), rng);
  return z;
}

std::vector<std::string> default_names(Index d)
{
  std::vector<std::string> names;
  for (Index j = 0; j < d; ++j)
    names.push_back("x" + std::to_string(j + 1));
  return names;
}

void check_sizes(Index n_l, Index n_u, Index d, double noise)
{
  if (n_l < 50 || n_u < 50)
    throw ValidationError("oracle samples need at least 50 rows each");
  if (d < 1)
    throw ValidationError("oracle needs at least one covariate");
  if (!(noise > 0.0))
    throw ValidationError("noise scale must be positive");
}

} // namespace

double ConditionalLaw::mean(const Eigen::VectorXd& x) const
{
  const double v = x(driver);
  return mean_function == MeanFunction::logistic ? 1.0 / (1.0 + std::exp(-v)) : v;
}

double ConditionalLaw::pdf(const Eigen::VectorXd& x, double z) const
{
  if (z < 0.0 || z > 1.0)
    return 0.0;
  const double mu = mean(x);
  const double mass = normal_mass(-mu / noise, (1.0 - mu) / noise);
  const double u = (z - mu) / noise;
  return std::exp(-0.5 * u * u) / (noise * std::sqrt(2.0 * M_PI) * mass);
}

DensityGrid ConditionalLaw::density(const Eigen::VectorXd& x, std::size_t grid_size) const
{
  const double mu = mean(x);
  std::vector<double> log_v(grid_size);
  double peak = -INFINITY;
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double u = (grid_knot(i, grid_size) - mu) / noise;
    log_v[i] = -0.5 * u * u;
    peak = std::max(peak, log_v[i]);
  }
  for (auto& v : log_v)
    v = std::exp(v - peak);
  return normalize(std::move(log_v));
}

double ConditionalLaw::sample(const Eigen::VectorXd& x, Rng& rng) const
{
  const double mu = mean(x);
  const double lo = -mu / noise;
  const double hi = (1.0 - mu) / noise;
  const double mass = normal_mass(lo, hi);
  if (mass < 1e-10) {
    if (mu < 0.0)
      return far_tail_sample(mu, noise, rng);
    return 1.0 - far_tail_sample(1.0 - mu, noise, rng);
  }
  const boost::math::normal_distribution<double> std_normal(0.0, 1.0);
  const double u = uniform_unit(rng);
  double t = 0.0;
  if (lo > 0.0) {
    // sample through the upper-tail survival function to keep precision
    const double upper = 0.5 * std::erfc(lo * kInvSqrt2);
    const double q = std::max(upper - u * mass, std::numeric_limits<double>::min());
    t = boost::math::quantile(boost::math::complement(std_normal, q));
  } else {
    const double lower = 0.5 * std::erfc(-lo * kInvSqrt2);
    const double p = std::clamp(lower + u * mass, std::numeric_limits<double>::min(), 1.0 - 1e-16);
    t = boost::math::quantile(std_normal, p);
  }
  return std::clamp(mu + noise * t, 0.0, 1.0);
}

OracleData make_oracle(const OracleSpec& spec)
{
  check_sizes(spec.n_labeled, spec.n_unlabeled, spec.dimension, spec.noise);
  Rng rng = make_rng(spec.seed);
  ConditionalLaw law{ spec.mean_function, spec.noise, 0 };

  Eigen::MatrixXd xl = normal_matrix(spec.n_labeled, spec.dimension, rng);
  Eigen::MatrixXd xu = normal_matrix(spec.n_unlabeled, spec.dimension, rng);
  xu.col(0).array() += spec.shift;
  Eigen::VectorXd zl = draw_responses(law, xl, rng);
  Eigen::VectorXd zu = draw_responses(law, xu, rng);

  const auto names = default_names(spec.dimension);
  const double shift = spec.shift;
  OracleData out{ Sample(std::move(xl), names, std::move(zl)),
                  Sample(std::move(xu), names, std::move(zu)),
                  law,
                  [shift](const Eigen::VectorXd& x) {
                    return std::exp(shift * x(0) - 0.5 * shift * shift);
                  },
                  0 };
  return out;
}

OracleData make_selection_oracle(const SelectionOracleSpec& spec)
{
  check_sizes(spec.n_labeled, spec.n_unlabeled, spec.dimension, spec.noise);
  if (spec.scheme == SchemeName::custom)
    throw ValidationError("selection oracle needs a preset scheme");
  Rng rng = make_rng(spec.seed);
  ConditionalLaw law{ spec.mean_function, spec.noise, 0 };
  auto names = default_names(spec.dimension);
  names[0] = "r";

  const auto draw_pool = [&](Index rows) {
    Eigen::MatrixXd x = normal_matrix(rows, spec.dimension, rng);
    for (Index i = 0; i < rows; ++i)
      x(i, 0) = uniform_unit(rng);
    return x;
  };

  Eigen::MatrixXd xl = draw_pool(spec.n_labeled);
  Eigen::VectorXd zl = draw_responses(law, xl, rng);

  auto scheme = SelectionScheme::preset(spec.scheme, "r", spec.seed);
  const double peak = beta_density_max(scheme.a, scheme.b);
  Index pool_size = 0;
  std::vector<Sample> accepted_parts;
  Index accepted = 0;
  std::uint64_t round = 0;
  while (accepted < spec.n_unlabeled) {
    const auto need = static_cast<double>(spec.n_unlabeled - accepted);
    const auto rows = static_cast<Index>(std::ceil(need * peak * 1.2)) + 100;
    Eigen::MatrixXd xp = draw_pool(rows);
    Eigen::VectorXd zp = draw_responses(law, xp, rng);
    pool_size += rows;
    scheme.seed = spec.seed + 0x9e3779b97f4a7c15ULL * ++round;
    const auto kept = rejection_rows(Sample(xp, names, zp), scheme);
    if (kept.empty())
      continue;
    accepted_parts.push_back(Sample(std::move(xp), names, std::move(zp)).select_rows(kept));
    accepted += static_cast<Index>(kept.size());
  }
  Sample unlabeled = accepted_parts.front();
  for (std::size_t k = 1; k < accepted_parts.size(); ++k)
    unlabeled = Sample::concat(unlabeled, accepted_parts[k]);
  std::vector<Index> first(static_cast<std::size_t>(spec.n_unlabeled));
  for (Index i = 0; i < spec.n_unlabeled; ++i)
    first[static_cast<std::size_t>(i)] = i;
  unlabeled = unlabeled.select_rows(first);

  const double a = scheme.a, b = scheme.b;
  return OracleData{ Sample(std::move(xl), names, std::move(zl)),
                     std::move(unlabeled),
                     law,
                     [a, b](const Eigen::VectorXd& x) { return beta_density(a, b, x(0)); },
                     pool_size };
}

TrueDensityModel::TrueDensityModel(ConditionalLaw law, Index input_dimension, std::size_t grid_size)
  : law_(law)
  , dim_(input_dimension)
  , grid_size_(grid_size)
{
  if (law_.driver < 0 || law_.driver >= dim_)
    throw ValidationError("conditional law driver column out of range");
}

DensityGrid TrueDensityModel::predict(const Eigen::VectorXd& x) const
{
  if (x.size() != dim_)
    throw ValidationError("query dimension mismatch");
  return law_.density(x, grid_size_);
}

nlohmann::json TrueDensityModel::to_json() const
{
  return { { "kind", kind() },
           { "mean_function", law_.mean_function == MeanFunction::logistic ? "logistic" : "identity" },
           { "noise", law_.noise },
           { "driver", law_.driver },
           { "input_dimension", dim_ },
           { "grid_size", grid_size_ } };
}

} // namespace cdeshift
