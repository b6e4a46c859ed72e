#include "cdeshift/cde_nn.hpp"
#include "cdeshift/losses.hpp"
#include "cdeshift/simulate.hpp"
#include "cdeshift/stack_select.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <map>

using namespace cdeshift;

namespace {

Eigen::MatrixXd to_eigen(const oracle::Mat& m)
{
  Eigen::MatrixXd out(static_cast<Index>(m.size()), static_cast<Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = m[i][j];
  return out;
}

DensityGrid bump(double centre, double width)
{
  std::vector<double> v(200);
  for (std::size_t g = 0; g < 200; ++g) {
    const double z = grid_knot(g, 200);
    v[g] = std::exp(-(z - centre) * (z - centre) / width);
  }
  return normalize(v);
}

} // namespace

TEST_SUITE("stack_select")
{
  TEST_CASE("simplex projection")
  {
    Eigen::VectorXd v(3);
    v << 0.2, 0.3, 0.5;
    CHECK((project_simplex(v) - v).norm() < 1e-15);
    v << 5, 0, 0;
    CHECK(project_simplex(v)(0) == doctest::Approx(1.0));
    std::mt19937_64 g(1);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 50; ++rep) {
      Eigen::VectorXd w(4);
      for (Index i = 0; i < 4; ++i)
        w(i) = 3 * nd(g);
      const Eigen::VectorXd p = project_simplex(w);
      CHECK(p.sum() == doctest::Approx(1.0));
      CHECK(p.minCoeff() >= 0.0);
      // Optimality: (w - p) . (q - p) <= 0 for every corner q.
      for (Index k = 0; k < 4; ++k) {
        Eigen::VectorXd q = Eigen::VectorXd::Zero(4);
        q(k) = 1.0;
        CHECK((w - p).dot(q - p) <= 1e-12);
      }
    }
  }

  TEST_CASE("worked two-component example")
  {
    Eigen::MatrixXd B(2, 2);
    B << 2, 0, 0, 2;
    Eigen::VectorXd b(2);
    b << 2, 0;
    const auto s = solve_simplex_qp(B, b);
    CHECK(s.alpha(0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(s.alpha(1) == doctest::Approx(0.0).epsilon(1e-10));
    // 1-D grid oracle over alpha_1.
    double best = 1e300, arg = 0;
    for (int k = 0; k <= 10000; ++k) {
      const double a = k / 10000.0;
      const double obj = 4 * a * a - 8 * a + 2;
      if (obj < best) {
        best = obj;
        arg = a;
      }
    }
    CHECK(arg == doctest::Approx(1.0));
    CHECK(s.closed_form_gap.has_value());
    CHECK(*s.closed_form_gap < 1e-12);
  }

  TEST_CASE("identical components split evenly")
  {
    for (Index p = 2; p <= 5; ++p) {
      const auto s = solve_simplex_qp(Eigen::MatrixXd::Constant(p, p, 1.3), Eigen::VectorXd::Constant(p, 0.7));
      for (Index k = 0; k < p; ++k)
        CHECK(s.alpha(k) == doctest::Approx(1.0 / static_cast<double>(p)).epsilon(1e-9));
    }
  }

  TEST_CASE("QP beats every corner and matches the segment formula")
  {
    std::mt19937_64 g(7);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 30; ++rep) {
      const std::size_t p = 2 + static_cast<std::size_t>(rep % 4);
      const Eigen::MatrixXd B = to_eigen(oracle::random_psd(p, 1 + static_cast<std::size_t>(rep % 3), g));
      Eigen::VectorXd b(static_cast<Index>(p));
      for (auto& e : b)
        e = nd(g);
      const auto s = solve_simplex_qp(B, b);
      for (Index k = 0; k < static_cast<Index>(p); ++k) {
        Eigen::VectorXd corner = Eigen::VectorXd::Zero(static_cast<Index>(p));
        corner(k) = 1.0;
        CHECK(s.objective <= qp_objective(B, b, corner) + 1e-9);
      }
      if (p == 2) {
        const Eigen::Vector2d a = segment_minimizer(B, b);
        CHECK(s.objective <= qp_objective(B, b, a) + 1e-9);
      }
    }
  }

  TEST_CASE("mixtures")
  {
    const std::vector<DensityGrid> grids{ bump(0.3, 0.01), bump(0.7, 0.05), DensityGrid::uniform(200) };
    Eigen::VectorXd a(3);
    a << 1, 0, 0;
    const DensityGrid m1 = mix_densities(grids, a);
    for (std::size_t g = 0; g < 200; ++g)
      CHECK(m1[g] == doctest::Approx(grids[0][g]).epsilon(1e-12));
    const std::vector<DensityGrid> uu{ DensityGrid::uniform(200), DensityGrid::uniform(200) };
    const DensityGrid mu = mix_densities(uu, Eigen::Vector2d(0.5, 0.5));
    CHECK(mu[17] == doctest::Approx(1.0));
    a << 0.2, 0.5, 0.3;
    const DensityGrid m = mix_densities(grids, a);
    for (std::size_t g = 0; g < 200; ++g)
      CHECK(std::abs(m[g] - (0.2 * grids[0][g] + 0.5 * grids[1][g] + 0.3 * grids[2][g])) < 1e-12);
    const std::vector<DensityGrid> bad{ DensityGrid(std::vector<double>(200, 3.0)), DensityGrid::uniform(200) };
    CHECK_THROWS(mix_densities(bad, Eigen::Vector2d(0.5, 0.5)));
  }

  TEST_CASE("stacking objective equals the shifted loss of the mixture")
  {
    const auto d = make_oracle({ 2, 80, 80, 0.7, 0.1, MeanFunction::logistic, 5 });
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(80);
    std::vector<EstimatorPtr> comps{
      std::make_shared<NnCdeModel>(NnCdeModel::fit(d.labeled, ones, NnVariant::kernel, 10, 1, 0.002)),
      std::make_shared<NnCdeModel>(NnCdeModel::fit(d.labeled, ones, NnVariant::histogram, 20, 5, 1.0)),
    };
    Rng rng = make_rng(6);
    const auto v = make_oracle({ 2, 50, 60, 0.7, 0.1, MeanFunction::logistic, 7 });
    const Eigen::VectorXd w = 0.5 + testing::unit_vector(50, rng).array();
    const StackedModel s = stack(comps, v.labeled, w, v.unlabeled.without_response());
    const double loss = loss_shifted(s, v.labeled, w, v.unlabeled.without_response()).value;
    CHECK(loss == doctest::Approx(s.objective()).epsilon(1e-9));
    for (double a1 : { 0.0, 0.3, 0.8 }) {
      const StackedModel fixed(comps, Eigen::Vector2d(a1, 1 - a1), s.B(), s.b(), 0.0);
      CHECK(loss_shifted(fixed, v.labeled, w, v.unlabeled.without_response()).value ==
            doctest::Approx(qp_objective(s.B(), s.b(), Eigen::Vector2d(a1, 1 - a1))).epsilon(1e-9));
      CHECK(s.objective() <= qp_objective(s.B(), s.b(), Eigen::Vector2d(a1, 1 - a1)) + 1e-9);
    }
  }

  TEST_CASE("stacked model rejects weights off the simplex")
  {
    std::vector<EstimatorPtr> comps{ std::make_shared<testing::FunctionModel>(testing::uniform_model(1)),
                                     std::make_shared<testing::FunctionModel>(testing::uniform_model(1)) };
    CHECK_THROWS(StackedModel(comps, Eigen::Vector2d(0.7, 0.7), Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero(), 0));
  }

  TEST_CASE("forward selection")
  {
    // Loss table keyed by subset.
    std::map<std::vector<Index>, double> table{
      { { 0 }, -1.0 }, { { 1 }, -2.0 }, { { 2 }, -0.5 }, { { 0, 1 }, -2.5 }, { { 1, 2 }, -2.1 }, { { 0, 1, 2 }, -2.5 },
    };
    const SubsetScore score = [&](const std::vector<Index>& s) {
      auto it = table.find(s);
      return it == table.end() ? 0.0 : it->second;
    };
    const auto t = forward_select(score, { 0, 1, 2 }, 0.0);
    REQUIRE(t.steps.size() == 2);
    CHECK(t.steps[0].covariate == 1);
    CHECK(t.steps[1].covariate == 0);
    CHECK(t.subset == std::vector<Index>{ 0, 1 });
    CHECK(t.final_loss == -2.5);
    double prev = t.baseline;
    for (const auto& s : t.steps) {
      CHECK(s.loss < prev - kSelectionTolerance);
      prev = s.loss;
    }

    const SubsetScore single = [](const std::vector<Index>&) { return -1.0; };
    const auto one = forward_select(single, { 4 }, 0.0);
    CHECK(one.steps.size() == 1);
    CHECK(one.subset == std::vector<Index>{ 4 });

    const auto none = forward_select(single, { 0, 1 }, -3.0);
    CHECK(none.steps.empty());
    CHECK(none.subset.empty());
    CHECK(none.final_loss == -3.0);

    const auto forced = forward_select_forced(single, { 0, 1 });
    CHECK(forced.steps.size() == 1);
    CHECK(forced.subset == std::vector<Index>{ 0 });
  }

  TEST_CASE("exhaustive selection")
  {
    const SubsetScore score = [](const std::vector<Index>& s) {
      // Best: {1, 2}; {0, 1, 2} ties with it but is larger.
      if (s == std::vector<Index>{ 1, 2 } || s == std::vector<Index>{ 0, 1, 2 })
        return -3.0;
      return -static_cast<double>(s.size());
    };
    const auto t = exhaustive_select(score, { 0, 1, 2 });
    CHECK(t.subset == std::vector<Index>{ 1, 2 });
    CHECK(t.evaluations == 7);
    const auto kept = exhaustive_select(score, { 0, 1, 2 }, -10.0);
    CHECK(kept.subset.empty());
    CHECK_THROWS(exhaustive_select(score, { 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10 }));
  }

  TEST_CASE("stepwise finds the relevant covariate")
  {
    int first = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      // z depends on covariate 0 only.
      const auto tr = make_oracle({ 4, 300, 50, 0.0, 0.1, MeanFunction::logistic, 300 + seed });
      const auto va = make_oracle({ 4, 200, 50, 0.0, 0.1, MeanFunction::logistic, 400 + seed });
      const Eigen::VectorXd ones_t = Eigen::VectorXd::Ones(300), ones_v = Eigen::VectorXd::Ones(200);
      const SubsetScore score = [&](const std::vector<Index>& s) {
        return fit_nn_cde(tr.labeled, ones_t, NnVariant::kernel, { { 20 }, {}, { 0.002 } }, va.labeled, ones_v,
                          va.labeled, LossVariant::labeled_only, s)
          .loss;
      };
      const auto t = forward_select(score, { 0, 1, 2, 3 }, 0.0);
      if (!t.steps.empty() && t.steps.front().covariate == 0)
        ++first;
    }
    CHECK(first >= 9);
  }
}
