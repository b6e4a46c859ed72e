#include "cdeshift/stack_select.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/parallel.hpp"
#include "json_util.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cdeshift {

namespace {

constexpr double kGradTolerance = 1e-10;
constexpr std::size_t kMaxIterations = 100000;

// Dykstra's alternating projection of `start` onto simplex ∩ affine set
// {anchor + N t}, N with orthonormal columns.
Eigen::VectorXd dykstra(const Eigen::VectorXd& start,
                        const Eigen::VectorXd& anchor,
                        const Eigen::MatrixXd& N)
{
  const auto affine = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return anchor + N * (N.transpose() * (v - anchor));
  };
  Eigen::VectorXd x = start;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd q = Eigen::VectorXd::Zero(x.size());
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd y = affine(x + p);
    p = x + p - y;
    const Eigen::VectorXd xn = project_simplex(y + q);
    q = y + q - xn;
    const double change = (xn - x).norm();
    x = xn;
    if (change < 1e-15 && (affine(x) - x).norm() < 1e-13)
      break;
  }
  return x;
}

} // namespace

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v)
{
  const Index p = v.size();
  if (p == 0)
    throw ValidationError("cannot project an empty vector onto the simplex");
  std::vector<double> u(v.data(), v.data() + p);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (Index k = 0; k < p; ++k) {
    cum += u[static_cast<std::size_t>(k)];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - t > 0.0)
      theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

double qp_objective(const Eigen::MatrixXd& B, const Eigen::VectorXd& b, const Eigen::VectorXd& alpha)
{
  return alpha.dot(B * alpha) - 2.0 * alpha.dot(b);
}

Eigen::Vector2d segment_minimizer(const Eigen::Matrix2d& B, const Eigen::Vector2d& b)
{
  // f(a) = q a^2 + 2 c a + const for alpha = (a, 1 - a).
  const double q = B(0, 0) - 2.0 * B(0, 1) + B(1, 1);
  const double c = B(0, 1) - B(1, 1) - b(0) + b(1);
  double a;
  if (q > 1e-14 * (std::abs(B(0, 0)) + std::abs(B(1, 1)) + 1e-300))
    a = std::clamp(-c / q, 0.0, 1.0);
  else if (c < 0.0)
    a = 1.0;
  else if (c > 0.0)
    a = 0.0;
  else
    a = 0.5;
  return { a, 1.0 - a };
}

QpSolution solve_simplex_qp(const Eigen::MatrixXd& B, const Eigen::VectorXd& b)
{
  const Index p = b.size();
  if (p < 1 || B.rows() != p || B.cols() != p)
    throw ValidationError("stacking system has inconsistent dimensions");
  if (!B.allFinite() || !b.allFinite())
    throw ValidationError("stacking system contains non-finite entries");
  const Eigen::MatrixXd Bs = 0.5 * (B + B.transpose());

  QpSolution out;
  Eigen::VectorXd alpha = Eigen::VectorXd::Constant(p, 1.0 / static_cast<double>(p));
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Bs, Eigen::EigenvaluesOnly)
                        .eigenvalues()
                        .cwiseAbs()
                        .maxCoeff();
  const double L = lmax > 0.0 ? 2.0 * lmax : 1.0;
  for (out.iterations = 0; out.iterations < kMaxIterations; ++out.iterations) {
    const Eigen::VectorXd grad = 2.0 * (Bs * alpha - b);
    const Eigen::VectorXd next = project_simplex(alpha - grad / L);
    const double mapping = L * (alpha - next).norm();
    alpha = next;
    if (mapping <= kGradTolerance) {
      out.converged = true;
      break;
    }
  }

  // Minimal-norm representative of the optimal face: every minimizer shares
  // B alpha and b'alpha, so the optimal set is the simplex intersected with
  // alpha + null([B; b'; 1']).
  Eigen::MatrixXd C(p + 2, p);
  C.topRows(p) = Bs;
  C.row(p) = b.transpose();
  C.row(p + 1) = Eigen::RowVectorXd::Ones(p);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cut = 1e-9 * std::max(1.0, sv.size() > 0 ? sv(0) : 0.0);
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > cut)
    ++rank;
  if (rank < p) {
    const Eigen::MatrixXd N = svd.matrixV().rightCols(p - rank);
    const Eigen::VectorXd candidate = dykstra(Eigen::VectorXd::Zero(p), alpha, N);
    const double f0 = qp_objective(Bs, b, alpha);
    if (qp_objective(Bs, b, candidate) <= f0 + 1e-12 * (1.0 + std::abs(f0)))
      alpha = project_simplex(candidate);
  }

  out.alpha = alpha;
  out.objective = qp_objective(Bs, b, alpha);
  if (p == 2) {
    const Eigen::Vector2d seg = segment_minimizer(Bs, b);
    out.closed_form_gap = std::abs(out.objective - qp_objective(Bs, b, seg));
  }
  return out;
}

DensityGrid mix_densities(std::span<const DensityGrid> grids, const Eigen::VectorXd& alpha)
{
  if (grids.empty() || static_cast<Index>(grids.size()) != alpha.size())
    throw ValidationError("mixture weights and components differ in number");
  const std::size_t G = grids.front().size();
  std::vector<double> raw(G, 0.0);
  for (std::size_t k = 0; k < grids.size(); ++k) {
    if (!grids[k].normalized())
      throw ValidationError("stacked component emitted an unnormalized density");
    if (grids[k].size() != G)
      throw ValidationError("stacked components use different grids");
    const double a = alpha(static_cast<Index>(k));
    for (std::size_t g = 0; g < G; ++g)
      raw[g] += a * grids[k][g];
  }
  return normalize(std::move(raw));
}

StackedModel::StackedModel(std::vector<EstimatorPtr> components,
                           Eigen::VectorXd alpha,
                           Eigen::MatrixXd B,
                           Eigen::VectorXd b,
                           double objective)
  : components_(std::move(components))
  , alpha_(std::move(alpha))
  , B_(std::move(B))
  , b_(std::move(b))
  , objective_(objective)
{
  if (components_.empty() || static_cast<Index>(components_.size()) != alpha_.size())
    throw ValidationError("stacked model needs one weight per component");
  for (const auto& c : components_) {
    if (!c)
      throw ValidationError("stacked model has a missing component");
    if (c->input_dimension() != components_.front()->input_dimension() ||
        c->grid_size() != components_.front()->grid_size())
      throw ValidationError("stacked components disagree on input dimension or grid size");
  }
  if ((alpha_.array() < -1e-9).any() || std::abs(alpha_.sum() - 1.0) > 1e-9)
    throw ValidationError("stacking weights must lie on the simplex");
}

Index StackedModel::input_dimension() const
{
  return components_.front()->input_dimension();
}

std::size_t StackedModel::grid_size() const
{
  return components_.front()->grid_size();
}

DensityGrid StackedModel::predict(const Eigen::VectorXd& x) const
{
  std::vector<DensityGrid> parts;
  parts.reserve(components_.size());
  for (const auto& c : components_)
    parts.push_back(c->predict(x));
  return mix_densities(parts, alpha_);
}

nlohmann::json StackedModel::to_json() const
{
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : components_)
    comps.push_back(c->to_json());
  return { { "kind", kind() },
           { "alpha", detail::vector_to_json(alpha_) },
           { "objective", objective_ },
           { "B", detail::matrix_to_json(B_) },
           { "b", detail::vector_to_json(b_) },
           { "components", std::move(comps) } };
}

StackingSystem stacking_system(const std::vector<std::vector<DensityGrid>>& unlabeled_densities,
                               const std::vector<std::vector<DensityGrid>>& labeled_densities,
                               const Eigen::VectorXd& labeled_z,
                               const Eigen::VectorXd& labeled_weights)
{
  const auto p = static_cast<Index>(unlabeled_densities.size());
  if (p < 1 || static_cast<Index>(labeled_densities.size()) != p)
    throw ValidationError("stacking needs the same components on both validation sets");
  const std::size_t nu = unlabeled_densities.front().size();
  const std::size_t nl = labeled_densities.front().size();
  if (nu == 0 || nl == 0)
    throw ValidationError("stacking needs nonempty validation sets");
  if (static_cast<Index>(nl) != labeled_z.size() || labeled_weights.size() != labeled_z.size())
    throw ValidationError("labeled validation densities, responses and weights differ in length");
  for (Index i = 0; i < p; ++i) {
    const auto& du = unlabeled_densities[static_cast<std::size_t>(i)];
    const auto& dl = labeled_densities[static_cast<std::size_t>(i)];
    if (du.size() != nu || dl.size() != nl)
      throw ValidationError("components were evaluated on different rows");
    for (const auto& d : du)
      if (!d.normalized())
        throw ValidationError("stacked component emitted an unnormalized density");
    for (const auto& d : dl)
      if (!d.normalized())
        throw ValidationError("stacked component emitted an unnormalized density");
  }

  StackingSystem s{ Eigen::MatrixXd::Zero(p, p), Eigen::VectorXd::Zero(p) };
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < nu; ++k)
        acc += inner_product(unlabeled_densities[static_cast<std::size_t>(i)][k],
                             unlabeled_densities[static_cast<std::size_t>(j)][k]);
      s.B(i, j) = s.B(j, i) = acc / static_cast<double>(nu);
    }
  for (Index i = 0; i < p; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < nl; ++k) {
      const auto r = static_cast<Index>(k);
      acc += evaluate(labeled_densities[static_cast<std::size_t>(i)][k], labeled_z(r)) *
             labeled_weights(r);
    }
    s.b(i) = acc / static_cast<double>(nl);
  }
  return s;
}

StackedModel stack(std::vector<EstimatorPtr> components,
                   const Sample& labeled_val,
                   const Eigen::VectorXd& val_weights,
                   const Sample& unlabeled_val)
{
  if (components.size() < 2)
    throw ValidationError("stacking needs at least two components");
  std::vector<std::vector<DensityGrid>> du, dl;
  for (const auto& c : components) {
    du.push_back(c->predict_all(unlabeled_val.covariates()));
    dl.push_back(c->predict_all(labeled_val.covariates()));
  }
  const auto sys = stacking_system(du, dl, labeled_val.response(), val_weights);
  const auto sol = solve_simplex_qp(sys.B, sys.b);
  return StackedModel(std::move(components), sol.alpha, sys.B, sys.b, sol.objective);
}

nlohmann::json SelectionTrace::to_json() const
{
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : steps)
    st.push_back({ { "covariate", s.covariate }, { "loss", s.loss } });
  return { { "mode", mode },
           { "baseline", std::isfinite(baseline) ? nlohmann::json(baseline) : nlohmann::json(nullptr) },
           { "steps", std::move(st) },
           { "subset", subset },
           { "final_loss", final_loss },
           { "evaluations", evaluations } };
}

namespace {

SelectionTrace greedy(const SubsetScore& score,
                      const std::vector<Index>& candidates,
                      double baseline,
                      double tolerance,
                      bool force_first)
{
  if (candidates.empty())
    throw ValidationError("variable selection needs candidate covariates");
  SelectionTrace trace{ "stepwise", baseline, {}, {}, baseline, 0 };
  std::vector<Index> remaining = candidates;
  double current = baseline;
  while (!remaining.empty()) {
    std::size_t best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < remaining.size(); ++k) {
      auto subset = trace.subset;
      subset.push_back(remaining[k]);
      std::sort(subset.begin(), subset.end());
      const double loss = score(subset);
      ++trace.evaluations;
      if (loss < best_loss) {
        best_loss = loss;
        best = k;
      }
    }
    const bool forced = force_first && trace.steps.empty();
    if (!forced && !(current - best_loss > tolerance))
      break;
    trace.steps.push_back({ remaining[best], best_loss });
    trace.subset.push_back(remaining[best]);
    std::sort(trace.subset.begin(), trace.subset.end());
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    current = best_loss;
  }
  trace.final_loss = current;
  return trace;
}

} // namespace

SelectionTrace forward_select(const SubsetScore& score,
                              const std::vector<Index>& candidates,
                              double baseline,
                              double tolerance)
{
  return greedy(score, candidates, baseline, tolerance, false);
}

SelectionTrace forward_select_forced(const SubsetScore& score,
                                     const std::vector<Index>& candidates,
                                     double tolerance)
{
  return greedy(score, candidates, std::numeric_limits<double>::infinity(), tolerance, true);
}

SelectionTrace exhaustive_select(const SubsetScore& score,
                                 const std::vector<Index>& candidates,
                                 std::optional<double> baseline,
                                 double tolerance)
{
  if (candidates.empty())
    throw ValidationError("variable selection needs candidate covariates");
  if (candidates.size() > 10)
    throw ValidationError("exhaustive selection supports at most 10 candidate covariates");
  const double base = baseline.value_or(std::numeric_limits<double>::infinity());
  SelectionTrace trace{ "exhaustive", base, {}, {}, base, 0 };

  std::vector<std::vector<Index>> subsets;
  const std::size_t d = candidates.size();
  for (std::uint32_t mask = 1; mask < (1u << d); ++mask) {
    std::vector<Index> s;
    for (std::size_t k = 0; k < d; ++k)
      if (mask & (1u << k))
        s.push_back(candidates[k]);
    std::sort(s.begin(), s.end());
    subsets.push_back(std::move(s));
  }
  std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  const std::vector<Index>* best = nullptr;
  double best_loss = std::numeric_limits<double>::infinity();
  for (const auto& s : subsets) {
    const double loss = score(s);
    ++trace.evaluations;
    if (loss < best_loss) {
      best_loss = loss;
      best = &s;
    }
  }
  if (best && (!baseline || base - best_loss > tolerance)) {
    trace.subset = *best;
    trace.final_loss = best_loss;
  }
  return trace;
}

} // namespace cdeshift
