#include "cdeshift/diagnostics.hpp"
#include "cdeshift/simulate.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <sstream>

using namespace cdeshift;

namespace {

DensityGrid sampled(std::size_t G, const std::function<double(double)>& f)
{
  std::vector<double> v(G);
  for (std::size_t g = 0; g < G; ++g)
    v[g] = f(grid_knot(g, G));
  return normalize(v);
}

double region_mass(const DensityGrid& d, const std::vector<Interval>& r)
{
  double m = 0.0;
  for (const auto& iv : r)
    m += cdf(d, iv.hi) - cdf(d, iv.lo);
  return m;
}

} // namespace

TEST_SUITE("diagnostics")
{
  TEST_CASE("uniform HPD starts at zero")
  {
    const auto r = hpd_region(DensityGrid::uniform(200), 0.95);
    REQUIRE(r.size() == 1);
    CHECK(r[0].lo == 0.0);
    CHECK(region_length(r) == doctest::Approx(0.95).epsilon(1e-12));
  }

  TEST_CASE("symmetric unimodal HPD")
  {
    const DensityGrid d = sampled(201, [](double z) { return std::exp(-(z - 0.5) * (z - 0.5) / 0.02); });
    const auto r = hpd_region(d, 0.6);
    REQUIRE(r.size() == 1);
    CHECK(region_contains(r, 0.5));
    CHECK(std::abs((0.5 - r[0].lo) - (r[0].hi - 0.5)) <= d.spacing() + 1e-12);
  }

  TEST_CASE("bimodal HPD has two equal pieces")
  {
    const DensityGrid d = sampled(201, [](double z) {
      return std::exp(-(z - 0.25) * (z - 0.25) / 0.002) + std::exp(-(z - 0.75) * (z - 0.75) / 0.002);
    });
    const auto r = hpd_region(d, 0.5);
    REQUIRE(r.size() == 2);
    const double m0 = cdf(d, r[0].hi) - cdf(d, r[0].lo);
    const double m1 = cdf(d, r[1].hi) - cdf(d, r[1].lo);
    const double cell = d[50] * d.spacing();
    CHECK(std::abs(m0 - m1) <= cell);
  }

  TEST_CASE("HPD mass and size limits")
  {
    Rng rng = make_rng(1);
    for (int rep = 0; rep < 30; ++rep) {
      std::vector<double> v(64);
      for (auto& e : v)
        e = uniform_unit(rng);
      const DensityGrid d = normalize(v);
      const double alpha = 0.05 + 0.9 * uniform_unit(rng);
      const auto r = hpd_region(d, alpha);
      CHECK(region_mass(d, r) == doctest::Approx(alpha).epsilon(1e-9));
    }
    CHECK(region_length(hpd_region(DensityGrid::uniform(200), 1e-9)) <= 1.0 / 199.0);
    CHECK(region_length(hpd_region(DensityGrid::uniform(200), 1.0)) == doctest::Approx(1.0));
  }

  TEST_CASE("HPD cell count is minimal on small grids")
  {
    Rng rng = make_rng(2);
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t G = 4 + static_cast<std::size_t>(rep % 9);
      std::vector<double> v(G);
      for (auto& e : v)
        e = uniform_unit(rng);
      const DensityGrid d = normalize(v);
      const double alpha = 0.1 + 0.8 * uniform_unit(rng);
      CHECK(hpd_cell_count(d, alpha) == oracle::min_cells_brute(testing::values(d), alpha));
    }
  }

  TEST_CASE("Q-Q curve")
  {
    // n = 1 with z below the median: c_hat = 1 at c = 0.5.
    Eigen::VectorXd z(1);
    z << 0.2;
    const std::vector<DensityGrid> one{ DensityGrid::uniform(200) };
    const std::vector<double> half{ 0.5 };
    CHECK(qq_curve(one, z, Eigen::VectorXd::Ones(1), half)[0].c_hat == 1.0);

    // Quantiles shifted up dominate.
    Rng rng = make_rng(3);
    const Eigen::VectorXd zs = testing::unit_vector(300, rng);
    const DensityGrid up = sampled(200, [](double t) { return t * t; });
    const std::vector<DensityGrid> ups(300, up);
    const auto c = default_c_grid();
    for (const auto& p : qq_curve(ups, zs, Eigen::VectorXd::Ones(300), c))
      CHECK(p.c_hat >= p.c - 0.08);
    CHECK_THROWS(qq_curve(ups, zs, Eigen::VectorXd::Zero(300), c));
  }

  TEST_CASE("self-normalized curves ignore weight scale")
  {
    Rng rng = make_rng(4);
    const Eigen::VectorXd z = testing::unit_vector(100, rng);
    const Eigen::VectorXd w = 0.1 + testing::unit_vector(100, rng).array();
    const std::vector<DensityGrid> p(100, sampled(200, [](double t) { return 1.0 + t; }));
    const auto c = default_c_grid();
    const auto a = default_alpha_grid();
    const auto q1 = qq_curve(p, z, w, c), q2 = qq_curve(p, z, 7.0 * w, c);
    const auto k1 = coverage_curve(p, z, w, a), k2 = coverage_curve(p, z, 7.0 * w, a);
    for (std::size_t i = 0; i < q1.size(); ++i)
      CHECK(q1[i].c_hat == doctest::Approx(q2[i].c_hat).epsilon(1e-12));
    for (std::size_t i = 0; i < k1.size(); ++i)
      CHECK(k1[i].alpha_hat == doctest::Approx(k2[i].alpha_hat).epsilon(1e-12));
  }

  TEST_CASE("KS statistic and p-value")
  {
    CHECK(ks_statistic({ 0.5 }) == doctest::Approx(0.5));
    CHECK(kolmogorov_pvalue(0.5, 1) == doctest::Approx(oracle::kolmogorov(0.5, 1)).epsilon(1e-10));
    for (std::size_t n : { 5u, 40u, 500u }) {
      std::vector<double> u(n);
      for (std::size_t i = 0; i < n; ++i)
        u[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      CHECK(ks_statistic(u) == doctest::Approx(0.5 / static_cast<double>(n)));
    }
    double prev = 1.0;
    for (double D = 0.0; D <= 0.3; D += 0.01) {
      const double p = kolmogorov_pvalue(D, 100);
      CHECK(p <= prev + 1e-15);
      CHECK(p == doctest::Approx(oracle::kolmogorov(D, 100)).epsilon(1e-10));
      prev = p;
    }
    CHECK(kolmogorov_pvalue(0.0, 10) == 1.0);
  }

  TEST_CASE("coverage limits and under-coverage of an over-confident predictor")
  {
    const auto d = make_oracle({ 1, 400, 50, 0.0, 0.1, MeanFunction::logistic, 5 });
    std::vector<DensityGrid> sharp;
    for (Index i = 0; i < 400; ++i) {
      const double mu = d.law.mean(d.labeled.row(i));
      sharp.push_back(sampled(200, [mu](double t) { return std::exp(-(t - mu) * (t - mu) / 0.0002); }));
    }
    const std::vector<double> a{ 0.5, 0.999999 };
    const auto cov = coverage_curve(sharp, d.labeled.response(), Eigen::VectorXd::Ones(400), a);
    CHECK(cov[0].alpha_hat < 0.5);
    CHECK(cov[0].ci_low >= 0.0);
    const std::vector<DensityGrid> flat(400, DensityGrid::uniform(200));
    CHECK(coverage_curve(flat, d.labeled.response(), Eigen::VectorXd::Ones(400), a)[1].alpha_hat ==
          doctest::Approx(1.0));
  }

  TEST_CASE("mean HPD size")
  {
    const std::vector<DensityGrid> flat(3, DensityGrid::uniform(200));
    CHECK(mean_hpd_size(flat, 0.95) == doctest::Approx(0.95).epsilon(1e-12));
    const std::vector<DensityGrid> narrow(3, sampled(200, [](double t) { return std::exp(-(t - 0.5) * (t - 0.5) / 0.001); }));
    const std::vector<DensityGrid> wide(3, sampled(200, [](double t) { return std::exp(-(t - 0.5) * (t - 0.5) / 0.01); }));
    CHECK(mean_hpd_size(narrow, 0.95) < mean_hpd_size(wide, 0.95));
  }

  TEST_CASE("true model is calibrated")
  {
    const auto d = make_oracle({ 1, 2000, 50, 0.0, 0.1, MeanFunction::logistic, 6 });
    const TrueDensityModel m(d.law, 1);
    const auto rep = diagnose(m, d.labeled, Eigen::VectorXd::Ones(2000));
    double worst = 0.0;
    for (const auto& p : rep.qq)
      worst = std::max(worst, std::abs(p.c_hat - p.c));
    CHECK(worst <= 0.03);
    CHECK(rep.effective_n == doctest::Approx(2000.0));
    std::ostringstream qq, cov;
    rep.write_qq_csv(qq);
    rep.write_coverage_csv(cov);
    CHECK(qq.str().rfind("c,c_hat", 0) == 0);
    CHECK(cov.str().find("alpha") != std::string::npos);
  }
}
