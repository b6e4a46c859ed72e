#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace cdeshift {

inline constexpr std::size_t kDefaultGridSize = 200;

//! A conditional density sampled on G uniform knots z_i = i / (G - 1).
//!
//! This is the exchange format between estimators, losses and diagnostics.
//! All integrals over a grid use the trapezoid rule.
class DensityGrid
{
public:
  DensityGrid() = default;
  explicit DensityGrid(std::vector<double> values, bool normalized = false, bool fallback = false);

  static DensityGrid uniform(std::size_t grid_size, bool fallback = false);

  std::size_t size() const { return values_.size(); }
  double spacing() const { return 1.0 / static_cast<double>(values_.size() - 1); }
  double knot(std::size_t i) const { return static_cast<double>(i) * spacing(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }

  bool normalized() const { return normalized_; }
  //! True when normalization fell back to the uniform density.
  bool fallback() const { return fallback_; }

private:
  std::vector<double> values_;
  bool normalized_ = false;
  bool fallback_ = false;
};

//! Knot k of a G-point grid over [0,1].
double grid_knot(std::size_t k, std::size_t grid_size);

//! Trapezoid integral over [0,1] of values on a uniform grid.
double trapezoid(std::span<const double> values);

//! Clip at zero and divide by the trapezoid integral. Falls back to the
//! uniform density when the clipped integral is below 1e-12.
DensityGrid normalize(const DensityGrid& raw);
DensityGrid normalize(std::vector<double> raw);

//! Cumulative trapezoid integral at every knot (first entry 0).
std::vector<double> cumulative(const DensityGrid& d);

//! Piecewise-linear interpolation of the cumulative integral.
double cdf(const DensityGrid& d, double z);

//! Smallest z with cdf(z) >= c.
double quantile(const DensityGrid& d, double c);

//! Linear interpolation of the density at z in [0,1].
double evaluate(const DensityGrid& d, double z);

double squared_integral(const DensityGrid& d);
double inner_product(const DensityGrid& a, const DensityGrid& b);

//! Trapezoid integral of g(z) f(z) for g sampled on the same knots.
double expected_functional(const DensityGrid& d, std::span<const double> g);

//! Catalog format: "G,0,1" header, then one comma-separated row of G values
//! per observation, 12 significant digits.
void write_catalog(std::ostream& out, std::span<const DensityGrid> rows, std::size_t grid_size);
std::vector<DensityGrid> read_catalog(std::istream& in);

} // namespace cdeshift
