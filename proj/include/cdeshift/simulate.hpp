#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/estimator.hpp"
#include "cdeshift/random.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace cdeshift {

// ---------------------------------------------------------------------------
// Beta-shaped selection by rejection sampling
// ---------------------------------------------------------------------------

enum class SchemeName
{
  scheme1,
  scheme2,
  scheme3,
  custom
};

std::string to_string(SchemeName name);
SchemeName scheme_from_string(const std::string& name);

//! Keeps a row with probability f_Beta(a,b)(t) / max f_Beta(a,b), where t is
//! the row's value in `bias_column` (already scaled to [0,1]).
struct SelectionScheme
{
  SchemeName name = SchemeName::scheme1;
  double a = 1.0;
  double b = 1.0;
  std::string bias_column;
  std::uint64_t seed = 0;

  //! scheme1 = Beta(1,1), scheme2 = Beta(13,4), scheme3 = Beta(18,4).
  static SelectionScheme preset(SchemeName name, std::string bias_column, std::uint64_t seed);
  void validate() const;
};

double beta_density(double a, double b, double t);
//! Maximum of the Beta(a,b) density on [0,1]; requires a, b >= 1.
double beta_density_max(double a, double b);
double acceptance_probability(const SelectionScheme& scheme, double t);

//! Pool rows kept by the scheme, in their original order.
std::vector<Index> rejection_rows(const Sample& pool, const SelectionScheme& scheme);

//! Retained rows of `pool`; drops the response unless `keep_response`.
Sample rejection_sample(const Sample& pool, const SelectionScheme& scheme, bool keep_response = true);

// ---------------------------------------------------------------------------
// Synthetic data with a known conditional law
// ---------------------------------------------------------------------------

enum class MeanFunction
{
  logistic, //!< m(x) = 1 / (1 + exp(-x_driver))
  identity  //!< m(x) = x_driver
};

//! z | x ~ Normal(m(x), noise) truncated to [0,1].
struct ConditionalLaw
{
  MeanFunction mean_function = MeanFunction::logistic;
  double noise = 0.1;
  Index driver = 0;

  double mean(const Eigen::VectorXd& x) const;
  //! Closed-form truncated normal density.
  double pdf(const Eigen::VectorXd& x, double z) const;
  //! The law on a uniform grid, renormalized so the trapezoid integral is 1.
  DensityGrid density(const Eigen::VectorXd& x, std::size_t grid_size = kDefaultGridSize) const;
  double sample(const Eigen::VectorXd& x, Rng& rng) const;
};

//! Gaussian covariates: labeled x ~ N(0, I), unlabeled x ~ N(shift * e_1, I),
//! so beta(x) = exp(shift * x_1 - shift^2 / 2).
struct OracleSpec
{
  Index dimension = 1;
  Index n_labeled = 1000;
  Index n_unlabeled = 1000;
  double shift = 0.0;
  double noise = 0.1;
  MeanFunction mean_function = MeanFunction::logistic;
  std::uint64_t seed = 0;
};

//! Selection-biased design: x_1 ~ Uniform(0,1) acts as the bias column,
//! remaining covariates are N(0,1). The unlabeled sample is drawn from a fresh
//! pool by `rejection_sample` with the given scheme, so beta(x) = f_Beta(x_1).
struct SelectionOracleSpec
{
  Index dimension = 2;
  Index n_labeled = 1000;
  Index n_unlabeled = 1000;
  SchemeName scheme = SchemeName::scheme3;
  double noise = 0.1;
  MeanFunction mean_function = MeanFunction::identity;
  std::uint64_t seed = 0;
};

struct OracleData
{
  Sample labeled;   //!< with responses
  Sample unlabeled; //!< with responses (drop them for photometric use)
  ConditionalLaw law;
  std::function<double(const Eigen::VectorXd&)> beta; //!< f_U(x) / f_L(x)
  Index pool_size = 0; //!< rows drawn before selection (selection design only)
};

OracleData make_oracle(const OracleSpec& spec);
OracleData make_selection_oracle(const SelectionOracleSpec& spec);

//! Predicts with the known conditional law.
class TrueDensityModel : public ConditionalDensityEstimator
{
public:
  TrueDensityModel(ConditionalLaw law, Index input_dimension, std::size_t grid_size = kDefaultGridSize);

  Index input_dimension() const override { return dim_; }
  std::size_t grid_size() const override { return grid_size_; }
  DensityGrid predict(const Eigen::VectorXd& x) const override;
  std::string kind() const override { return "true-density"; }
  nlohmann::json to_json() const override;

private:
  ConditionalLaw law_;
  Index dim_;
  std::size_t grid_size_;
};

} // namespace cdeshift
