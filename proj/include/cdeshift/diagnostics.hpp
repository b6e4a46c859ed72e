#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/density_grid.hpp"
#include "cdeshift/estimator.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace cdeshift {

//! How weighted indicator averages are scaled.
enum class WeightScaling
{
  self_normalized, //!< divide by the weight sum
  per_observation  //!< divide by n
};

struct QqPoint
{
  double c;
  double c_hat;
};

struct CoveragePoint
{
  double alpha;
  double alpha_hat;
  double ci_low;
  double ci_high;
};

struct Interval
{
  double lo;
  double hi;
};

struct KsResult
{
  double statistic;
  double p_value;
};

std::vector<double> default_c_grid();     //!< 0.05, 0.10, ..., 0.95
std::vector<double> default_alpha_grid(); //!< 0.1, 0.2, ..., 0.9

//! Highest predictive density region on the grid. Cells [z_g, z_g+1] are
//! ranked by mean density (ties toward lower z) and accumulated until their
//! trapezoid mass reaches alpha; the last cell is taken fractionally so the
//! mass is exactly alpha. Adjacent cells merge into intervals.
std::vector<Interval> hpd_region(const DensityGrid& d, double alpha);

//! Number of grid cells the region touches.
std::size_t hpd_cell_count(const DensityGrid& d, double alpha);

double region_length(std::span<const Interval> region);
bool region_contains(std::span<const Interval> region, double z);

std::vector<QqPoint> qq_curve(std::span<const DensityGrid> predicted,
                              const Eigen::VectorXd& z,
                              const Eigen::VectorXd& weights,
                              std::span<const double> c_grid,
                              WeightScaling scaling = WeightScaling::self_normalized);

//! PIT values U_i = F(z_i | x_i).
std::vector<double> pit_values(std::span<const DensityGrid> predicted, const Eigen::VectorXd& z);

//! One-sample KS statistic of `u` against Uniform(0,1).
double ks_statistic(std::vector<double> u);

//! Asymptotic Kolmogorov tail 2 sum_k (-1)^(k-1) exp(-2 k^2 n D^2), clipped to [0,1].
double kolmogorov_pvalue(double D, std::size_t n);

KsResult pit_ks(std::span<const DensityGrid> predicted, const Eigen::VectorXd& z);

std::vector<CoveragePoint> coverage_curve(std::span<const DensityGrid> predicted,
                                          const Eigen::VectorXd& z,
                                          const Eigen::VectorXd& weights,
                                          std::span<const double> alpha_grid,
                                          WeightScaling scaling = WeightScaling::self_normalized);

double mean_hpd_size(std::span<const DensityGrid> predicted, double alpha);

struct DiagnosticReport
{
  std::vector<QqPoint> qq;
  std::vector<CoveragePoint> coverage;
  KsResult ks{};
  double mean_hpd_size_95 = 0.0;
  std::size_t n = 0;
  double effective_n = 0.0;

  nlohmann::json to_json() const;
  void write_qq_csv(std::ostream& out) const;
  void write_coverage_csv(std::ostream& out) const;
};

DiagnosticReport diagnose(const ConditionalDensityEstimator& model,
                          const Sample& labeled_test,
                          const Eigen::VectorXd& weights,
                          WeightScaling scaling = WeightScaling::self_normalized);

} // namespace cdeshift
