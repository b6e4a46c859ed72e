#include "cdeshift/losses.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/random.hpp"

#include <cmath>

namespace cdeshift {

namespace {

double mean_of(std::span<const double> v)
{
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / static_cast<double>(v.size());
}

void require_nonempty(std::size_t n, const char* what)
{
  if (n == 0)
    throw ValidationError(std::string("loss needs a nonempty ") + what + " evaluation set");
}

std::vector<double> squared_terms(std::span<const DensityGrid> densities)
{
  std::vector<double> out(densities.size());
  for (std::size_t k = 0; k < densities.size(); ++k)
    out[k] = squared_integral(densities[k]);
  return out;
}

std::vector<double> fit_terms(std::span<const DensityGrid> densities,
                              const Eigen::VectorXd& z,
                              const Eigen::VectorXd* weights)
{
  if (static_cast<Index>(densities.size()) != z.size())
    throw ValidationError("densities and responses have different lengths");
  if (weights && weights->size() != z.size())
    throw ValidationError("weights and responses have different lengths");
  std::vector<double> out(densities.size());
  for (std::size_t k = 0; k < densities.size(); ++k) {
    const auto i = static_cast<Index>(k);
    double f = evaluate(densities[k], z(i));
    if (weights) {
      const double w = (*weights)(i);
      if (!(w >= 0.0))
        throw ValidationError("importance weights must be nonnegative");
      f *= w;
    }
    out[k] = f;
  }
  return out;
}

} // namespace

std::string to_string(LossVariant v)
{
  switch (v) {
    case LossVariant::labeled_only: return "labeled_only";
    case LossVariant::shift_corrected: return "shift_corrected";
    case LossVariant::oracle: return "oracle";
  }
  return "labeled_only";
}

LossVariant loss_variant_from_string(const std::string& s)
{
  if (s == "labeled_only" || s == "labeled")
    return LossVariant::labeled_only;
  if (s == "shift_corrected" || s == "shifted")
    return LossVariant::shift_corrected;
  if (s == "oracle")
    return LossVariant::oracle;
  throw ValidationError("unknown loss variant '" + s + "'");
}

double LossTerms::value() const
{
  return mean_of(squared) - 2.0 * mean_of(fit);
}

LossTerms labeled_loss_terms(std::span<const DensityGrid> densities, const Eigen::VectorXd& z)
{
  require_nonempty(densities.size(), "labeled");
  return { squared_terms(densities), fit_terms(densities, z, nullptr), true };
}

LossTerms shifted_loss_terms(std::span<const DensityGrid> unlabeled_densities,
                             std::span<const DensityGrid> labeled_densities,
                             const Eigen::VectorXd& labeled_z,
                             const Eigen::VectorXd& labeled_weights)
{
  require_nonempty(unlabeled_densities.size(), "unlabeled");
  require_nonempty(labeled_densities.size(), "labeled");
  return { squared_terms(unlabeled_densities),
           fit_terms(labeled_densities, labeled_z, &labeled_weights), false };
}

LossTerms oracle_loss_terms(std::span<const DensityGrid> unlabeled_densities,
                            const Eigen::VectorXd& unlabeled_z)
{
  require_nonempty(unlabeled_densities.size(), "unlabeled");
  return { squared_terms(unlabeled_densities), fit_terms(unlabeled_densities, unlabeled_z, nullptr),
           true };
}

nlohmann::json LossReport::to_json() const
{
  nlohmann::json j = { { "value", value },
                       { "variant", to_string(variant) },
                       { "n_labeled_eval", n_labeled_eval },
                       { "n_unlabeled_eval", n_unlabeled_eval },
                       { "metadata", metadata } };
  j["se"] = se ? nlohmann::json(*se) : nlohmann::json(nullptr);
  j["bootstrap_replicates"] =
    bootstrap_replicates ? nlohmann::json(*bootstrap_replicates) : nlohmann::json(nullptr);
  return j;
}

LossReport loss_labeled(const ConditionalDensityEstimator& model, const Sample& labeled_eval)
{
  require_nonempty(static_cast<std::size_t>(labeled_eval.rows()), "labeled");
  const auto d = model.predict_all(labeled_eval.covariates());
  LossReport r;
  r.value = labeled_loss_terms(d, labeled_eval.response()).value();
  r.variant = LossVariant::labeled_only;
  r.n_labeled_eval = d.size();
  r.metadata["model"] = model.kind();
  return r;
}

LossReport loss_shifted(const ConditionalDensityEstimator& model,
                        const Sample& labeled_eval,
                        const Eigen::VectorXd& labeled_weights,
                        const Sample& unlabeled_eval)
{
  require_nonempty(static_cast<std::size_t>(labeled_eval.rows()), "labeled");
  require_nonempty(static_cast<std::size_t>(unlabeled_eval.rows()), "unlabeled");
  const auto dl = model.predict_all(labeled_eval.covariates());
  const auto du = model.predict_all(unlabeled_eval.covariates());
  LossReport r;
  r.value = shifted_loss_terms(du, dl, labeled_eval.response(), labeled_weights).value();
  r.variant = LossVariant::shift_corrected;
  r.n_labeled_eval = dl.size();
  r.n_unlabeled_eval = du.size();
  r.metadata["model"] = model.kind();
  return r;
}

LossReport loss_oracle(const ConditionalDensityEstimator& model, const Sample& unlabeled_eval)
{
  if (!unlabeled_eval.labeled())
    throw ValidationError("oracle loss needs responses for the unlabeled evaluation set");
  require_nonempty(static_cast<std::size_t>(unlabeled_eval.rows()), "unlabeled");
  const auto du = model.predict_all(unlabeled_eval.covariates());
  LossReport r;
  r.value = oracle_loss_terms(du, unlabeled_eval.response()).value();
  r.variant = LossVariant::oracle;
  r.n_unlabeled_eval = du.size();
  r.metadata["model"] = model.kind();
  return r;
}

double bootstrap_se(const ResampledLoss& loss,
                    std::size_t n_labeled,
                    std::size_t n_unlabeled,
                    std::size_t replicates,
                    std::uint64_t seed)
{
  if (replicates < 2)
    throw ValidationError("bootstrap needs at least two replicates");
  std::vector<double> values(replicates);
  std::vector<std::size_t> rows_l(n_labeled), rows_u(n_unlabeled);
  for (std::size_t b = 0; b < replicates; ++b) {
    Rng rng = make_rng(seed, b);
    for (auto& r : rows_l)
      r = static_cast<std::size_t>(uniform_index(rng, n_labeled));
    for (auto& r : rows_u)
      r = static_cast<std::size_t>(uniform_index(rng, n_unlabeled));
    values[b] = loss(rows_l, rows_u);
  }
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values)
    ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(replicates));
}

double bootstrap_se(const LossTerms& terms, std::size_t replicates, std::uint64_t seed)
{
  if (terms.paired) {
    return bootstrap_se(
      [&](std::span<const std::size_t> rows, std::span<const std::size_t>) {
        double sq = 0.0, fit = 0.0;
        for (auto r : rows) {
          sq += terms.squared[r];
          fit += terms.fit[r];
        }
        const auto n = static_cast<double>(rows.size());
        return sq / n - 2.0 * fit / n;
      },
      terms.fit.size(), 0, replicates, seed);
  }
  return bootstrap_se(
    [&](std::span<const std::size_t> rows_l, std::span<const std::size_t> rows_u) {
      double sq = 0.0, fit = 0.0;
      for (auto r : rows_u)
        sq += terms.squared[r];
      for (auto r : rows_l)
        fit += terms.fit[r];
      return sq / static_cast<double>(rows_u.size()) - 2.0 * fit / static_cast<double>(rows_l.size());
    },
    terms.fit.size(), terms.squared.size(), replicates, seed);
}

LossReport with_bootstrap(LossReport report,
                          const LossTerms& terms,
                          std::size_t replicates,
                          std::uint64_t seed)
{
  report.se = bootstrap_se(terms, replicates, seed);
  report.bootstrap_replicates = replicates;
  return report;
}

} // namespace cdeshift
