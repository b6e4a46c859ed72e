#include "cdeshift/density_grid.hpp"

#include "cdeshift/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace cdeshift {

namespace {

void require_grid(std::size_t g)
{
  if (g < 2)
    throw ValidationError("a density grid needs at least two knots");
}

void require_normalized(const DensityGrid& d)
{
  if (!d.normalized())
    throw ValidationError("operation requires a normalized density");
}

} // namespace

DensityGrid::DensityGrid(std::vector<double> values, bool normalized, bool fallback)
  : values_(std::move(values))
  , normalized_(normalized)
  , fallback_(fallback)
{
  require_grid(values_.size());
}

DensityGrid DensityGrid::uniform(std::size_t grid_size, bool fallback)
{
  return DensityGrid(std::vector<double>(grid_size, 1.0), true, fallback);
}

double grid_knot(std::size_t k, std::size_t grid_size)
{
  return static_cast<double>(k) / static_cast<double>(grid_size - 1);
}

double trapezoid(std::span<const double> values)
{
  require_grid(values.size());
  double inner = 0.0;
  for (std::size_t i = 1; i + 1 < values.size(); ++i)
    inner += values[i];
  const double h = 1.0 / static_cast<double>(values.size() - 1);
  return h * (inner + 0.5 * (values.front() + values.back()));
}

DensityGrid normalize(std::vector<double> raw)
{
  require_grid(raw.size());
  for (double& v : raw) {
    if (!std::isfinite(v))
      throw ValidationError("cannot normalize a density with non-finite values");
    v = std::max(v, 0.0);
  }
  const double mass = trapezoid(raw);
  if (mass < 1e-12)
    return DensityGrid::uniform(raw.size(), true);
  for (double& v : raw)
    v /= mass;
  return DensityGrid(std::move(raw), true, false);
}

DensityGrid normalize(const DensityGrid& raw)
{
  auto values = std::vector<double>(raw.values().begin(), raw.values().end());
  auto out = normalize(std::move(values));
  if (raw.fallback() && !out.fallback())
    return DensityGrid(std::vector<double>(out.values().begin(), out.values().end()), true, true);
  return out;
}

std::vector<double> cumulative(const DensityGrid& d)
{
  std::vector<double> c(d.size(), 0.0);
  const double h = d.spacing();
  for (std::size_t i = 1; i < d.size(); ++i)
    c[i] = c[i - 1] + 0.5 * h * (d[i - 1] + d[i]);
  return c;
}

double cdf(const DensityGrid& d, double z)
{
  require_normalized(d);
  if (z <= 0.0)
    return 0.0;
  const auto c = cumulative(d);
  if (z >= 1.0)
    return std::min(c.back(), 1.0);
  const double pos = z / d.spacing();
  const auto i = std::min(static_cast<std::size_t>(pos), d.size() - 2);
  const double t = pos - static_cast<double>(i);
  return std::clamp(c[i] + t * (c[i + 1] - c[i]), 0.0, 1.0);
}

double quantile(const DensityGrid& d, double c)
{
  require_normalized(d);
  const auto cum = cumulative(d);
  if (c <= 0.0) {
    // smallest z with positive mass to its right
    for (std::size_t j = 1; j < cum.size(); ++j)
      if (cum[j] > 0.0)
        return d.knot(j - 1);
    return 0.0;
  }
  const auto it = std::lower_bound(cum.begin() + 1, cum.end(), c);
  if (it == cum.end())
    return 1.0;
  const auto j = static_cast<std::size_t>(it - cum.begin());
  const double lo = cum[j - 1];
  const double hi = cum[j];
  const double t = hi > lo ? (c - lo) / (hi - lo) : 1.0;
  return std::clamp(d.knot(j - 1) + t * d.spacing(), 0.0, 1.0);
}

double evaluate(const DensityGrid& d, double z)
{
  if (z <= 0.0)
    return d[0];
  if (z >= 1.0)
    return d[d.size() - 1];
  const double pos = z / d.spacing();
  const auto i = std::min(static_cast<std::size_t>(pos), d.size() - 2);
  const double t = pos - static_cast<double>(i);
  return d[i] + t * (d[i + 1] - d[i]);
}

double squared_integral(const DensityGrid& d)
{
  return inner_product(d, d);
}

double inner_product(const DensityGrid& a, const DensityGrid& b)
{
  if (a.size() != b.size())
    throw ValidationError("density grids have different sizes");
  const std::size_t g = a.size();
  double inner = 0.0;
  for (std::size_t i = 1; i + 1 < g; ++i)
    inner += a[i] * b[i];
  return a.spacing() * (inner + 0.5 * (a[0] * b[0] + a[g - 1] * b[g - 1]));
}

double expected_functional(const DensityGrid& d, std::span<const double> g)
{
  require_normalized(d);
  if (g.size() != d.size())
    throw ValidationError("functional has " + std::to_string(g.size()) + " values for a " +
                          std::to_string(d.size()) + "-point grid");
  const std::size_t n = d.size();
  double inner = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(g[i]))
      throw ValidationError("functional values must be finite");
    if (i > 0 && i + 1 < n)
      inner += g[i] * d[i];
  }
  return d.spacing() * (inner + 0.5 * (g[0] * d[0] + g[n - 1] * d[n - 1]));
}

void write_catalog(std::ostream& out, std::span<const DensityGrid> rows, std::size_t grid_size)
{
  require_grid(grid_size);
  out << grid_size << ",0,1\n";
  out << std::setprecision(12);
  for (const auto& row : rows) {
    if (row.size() != grid_size)
      throw ValidationError("catalog row has the wrong grid size");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0)
        out << ',';
      out << row[i];
    }
    out << '\n';
  }
}

std::vector<DensityGrid> read_catalog(std::istream& in)
{
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("empty catalog: missing header", 0);
  std::size_t grid_size = 0;
  double lo = 0.0, hi = 0.0;
  char c1 = 0, c2 = 0;
  std::istringstream header(line);
  if (!(header >> grid_size >> c1 >> lo >> c2 >> hi) || c1 != ',' || c2 != ',' || lo != 0.0 ||
      hi != 1.0 || grid_size < 2)
    throw ParseError("catalog header must read 'G,0,1'", 0);

  std::vector<DensityGrid> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    ++row;
    std::vector<double> values;
    values.reserve(grid_size);
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
      } catch (const std::exception&) {
        throw ParseError("catalog row " + std::to_string(row) + ": bad value '" + field + "'", row);
      }
    }
    if (values.size() != grid_size)
      throw ParseError("catalog row " + std::to_string(row) + " has " +
                         std::to_string(values.size()) + " values, expected " +
                         std::to_string(grid_size),
                       row);
    bool nonneg = true;
    for (double v : values)
      nonneg = nonneg && std::isfinite(v) && v >= 0.0;
    const bool normalized = nonneg && std::abs(trapezoid(values) - 1.0) <= 1e-6;
    rows.emplace_back(std::move(values), normalized);
  }
  return rows;
}

} // namespace cdeshift
