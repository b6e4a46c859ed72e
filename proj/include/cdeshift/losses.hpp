#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/density_grid.hpp"
#include "cdeshift/estimator.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdeshift {

inline constexpr std::size_t kDefaultBootstrapReplicates = 500;

enum class LossVariant
{
  labeled_only,    //!< mean int f^2 - 2 mean f(z|x), both over labeled rows
  shift_corrected, //!< squared term over unlabeled rows, fit term weighted by beta
  oracle           //!< both terms over unlabeled rows with known responses
};

std::string to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

//! Per-row contributions of an empirical L2 loss (up to its constant):
//! value = mean(squared) - 2 mean(fit).
//!
//! `paired` terms come from one evaluation set and are resampled together.
struct LossTerms
{
  std::vector<double> squared; //!< int f^2(z | x_k) dz
  std::vector<double> fit;     //!< f(z_k | x_k) * weight_k
  bool paired = false;

  double value() const;
};

LossTerms labeled_loss_terms(std::span<const DensityGrid> densities, const Eigen::VectorXd& z);
LossTerms shifted_loss_terms(std::span<const DensityGrid> unlabeled_densities,
                             std::span<const DensityGrid> labeled_densities,
                             const Eigen::VectorXd& labeled_z,
                             const Eigen::VectorXd& labeled_weights);
LossTerms oracle_loss_terms(std::span<const DensityGrid> unlabeled_densities,
                            const Eigen::VectorXd& unlabeled_z);

//! An estimated loss. Values are comparable only within one variant and one
//! pair of evaluation sets; the dropped constant differs otherwise.
struct LossReport
{
  double value = 0.0;
  LossVariant variant = LossVariant::labeled_only;
  std::optional<double> se;
  std::size_t n_labeled_eval = 0;
  std::size_t n_unlabeled_eval = 0;
  std::optional<std::size_t> bootstrap_replicates;
  std::map<std::string, std::string> metadata;

  nlohmann::json to_json() const;
};

LossReport loss_labeled(const ConditionalDensityEstimator& model, const Sample& labeled_eval);
LossReport loss_shifted(const ConditionalDensityEstimator& model,
                        const Sample& labeled_eval,
                        const Eigen::VectorXd& labeled_weights,
                        const Sample& unlabeled_eval);
LossReport loss_oracle(const ConditionalDensityEstimator& model, const Sample& unlabeled_eval);

//! Recomputes a loss on resampled row indices.
using ResampledLoss = std::function<double(std::span<const std::size_t> labeled_rows,
                                           std::span<const std::size_t> unlabeled_rows)>;

//! Bootstrap standard error: labeled and unlabeled rows are resampled
//! independently with replacement, `replicates` times; replicate b draws from
//! a generator seeded by (seed, b). Returns sqrt(mean((L_b - mean L)^2)).
double bootstrap_se(const ResampledLoss& loss,
                    std::size_t n_labeled,
                    std::size_t n_unlabeled,
                    std::size_t replicates,
                    std::uint64_t seed);

//! Bootstrap SE of LossTerms::value().
double bootstrap_se(const LossTerms& terms, std::size_t replicates, std::uint64_t seed);

//! Fills `se` and `bootstrap_replicates`.
LossReport with_bootstrap(LossReport report,
                          const LossTerms& terms,
                          std::size_t replicates,
                          std::uint64_t seed);

} // namespace cdeshift
