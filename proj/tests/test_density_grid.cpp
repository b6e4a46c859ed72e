#include "cdeshift/density_grid.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <sstream>

using namespace cdeshift;

namespace {

std::vector<double> sampled(std::size_t G, double (*f)(double))
{
  std::vector<double> v(G);
  for (std::size_t g = 0; g < G; ++g)
    v[g] = f(grid_knot(g, G));
  return v;
}

DensityGrid random_density(std::size_t G, Rng& rng)
{
  std::vector<double> v(G);
  for (auto& e : v)
    e = uniform_unit(rng) * 3.0;
  return normalize(v);
}

} // namespace

TEST_SUITE("density_grid")
{
  TEST_CASE("constant input normalizes to one")
  {
    const DensityGrid d = normalize(std::vector<double>(200, 2.0));
    for (std::size_t g = 0; g < d.size(); ++g)
      CHECK(d[g] == doctest::Approx(1.0));
    CHECK_FALSE(d.fallback());
  }

  TEST_CASE("negative region is clipped")
  {
    const auto raw = sampled(201, [](double z) { return z < 0.5 ? -1.0 : 3.0; });
    const DensityGrid d = normalize(raw);
    const auto want = oracle::normalize(raw);
    for (std::size_t g = 0; g < 201; ++g)
      CHECK(d[g] == doctest::Approx(want[g]).epsilon(1e-14));
    CHECK(d[0] == 0.0);
    CHECK(d[200] == doctest::Approx(2.0).epsilon(0.02));
    CHECK(trapezoid(d.values()) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("all-negative input falls back to uniform")
  {
    const DensityGrid d = normalize(std::vector<double>(50, -1.0));
    CHECK(d.fallback());
    CHECK(d[10] == 1.0);
  }

  TEST_CASE("non-finite input is rejected")
  {
    CHECK_THROWS(normalize(std::vector<double>{ 1.0, std::nan(""), 1.0 }));
  }

  TEST_CASE("normalize is idempotent")
  {
    Rng rng = make_rng(1);
    const DensityGrid d = random_density(200, rng);
    const DensityGrid e = normalize(std::vector<double>(d.values().begin(), d.values().end()));
    for (std::size_t g = 0; g < d.size(); ++g)
      CHECK(e[g] == doctest::Approx(d[g]).epsilon(1e-14));
  }

  TEST_CASE("cdf and quantile of the uniform density")
  {
    const DensityGrid u = DensityGrid::uniform(200);
    CHECK(cdf(u, 0.25) == doctest::Approx(0.25));
    CHECK(quantile(u, 0.25) == doctest::Approx(0.25));
    CHECK(cdf(u, 0.0) == 0.0);
    CHECK(cdf(u, 1.0) == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("symmetric and triangular densities")
  {
    const DensityGrid tri = normalize(sampled(201, [](double z) { return z < 0.5 ? z : 1.0 - z; }));
    CHECK(cdf(tri, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(quantile(tri, 0.5) == doctest::Approx(0.5).epsilon(1e-9));
    // Cumulative trapezoid oracle: walk cells until 0.25 is reached, then
    // interpolate linearly within the cell.
    const auto f = tri.values();
    const double h = 1.0 / 200.0;
    double acc = 0.0, want = 0.0;
    for (std::size_t g = 0; g < 200; ++g) {
      const double m = 0.5 * (f[g] + f[g + 1]) * h;
      if (acc + m >= 0.25) {
        want = grid_knot(g, 201) + h * (0.25 - acc) / m;
        break;
      }
      acc += m;
    }
    CHECK(quantile(tri, 0.25) == doctest::Approx(want).epsilon(1e-9));
  }

  TEST_CASE("cdf is a nondecreasing map onto [0,1]")
  {
    Rng rng = make_rng(2);
    for (int rep = 0; rep < 20; ++rep) {
      const DensityGrid d = random_density(64, rng);
      double prev = 0.0;
      for (int k = 0; k <= 100; ++k) {
        const double c = cdf(d, k / 100.0);
        CHECK(c >= prev - 1e-15);
        prev = c;
      }
      CHECK(cdf(d, 1.0) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  TEST_CASE("unnormalized input to cdf is an error")
  {
    CHECK_THROWS(cdf(DensityGrid(std::vector<double>(10, 3.0)), 0.5));
  }

  TEST_CASE("squared integral")
  {
    CHECK(squared_integral(DensityGrid::uniform(200)) == doctest::Approx(1.0));
    CHECK(squared_integral(DensityGrid(std::vector<double>(10, 0.0))) == 0.0);
    // f(z) = 2z has integral of f^2 equal to 4/3; the trapezoid error
    // shrinks as the grid refines.
    const auto ramp = [](std::size_t G) {
      return squared_integral(normalize(sampled(G, [](double z) { return 2.0 * z; })));
    };
    const double e1 = std::abs(ramp(50) - 4.0 / 3.0), e2 = std::abs(ramp(100) - 4.0 / 3.0),
                 e3 = std::abs(ramp(200) - 4.0 / 3.0);
    CHECK(e1 < 1e-3);
    CHECK(e2 < e1);
    CHECK(e3 < e2);
  }

  TEST_CASE("squared integral is at least one")
  {
    Rng rng = make_rng(3);
    for (int rep = 0; rep < 50; ++rep)
      CHECK(squared_integral(random_density(200, rng)) >= 1.0 - 1e-9);
  }

  TEST_CASE("expected functional")
  {
    Rng rng = make_rng(4);
    const DensityGrid d = random_density(200, rng);
    CHECK(expected_functional(d, std::vector<double>(200, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
    const DensityGrid sym = normalize(sampled(200, [](double z) { return std::exp(-(z - 0.5) * (z - 0.5) * 20); }));
    CHECK(expected_functional(sym, sampled(200, [](double z) { return z; })) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS(expected_functional(d, std::vector<double>(10, 1.0)));
  }

  TEST_CASE("expected functional matches a fine-grid oracle")
  {
    const auto f = [](double z) { return 1.0 + std::sin(3.0 * z); };
    const auto g = [](double z) { return z * z; };
    const auto at = [&](std::size_t G) {
      std::vector<double> fv(G), gv(G);
      for (std::size_t k = 0; k < G; ++k) {
        fv[k] = f(grid_knot(k, G));
        gv[k] = g(grid_knot(k, G));
      }
      return expected_functional(normalize(fv), gv);
    };
    CHECK(at(200) == doctest::Approx(at(20000)).epsilon(1e-4));
  }

  TEST_CASE("expected functional is linear in g")
  {
    Rng rng = make_rng(5);
    const DensityGrid d = random_density(200, rng);
    std::vector<double> g1(200), g2(200), mix(200);
    for (std::size_t k = 0; k < 200; ++k) {
      g1[k] = uniform_unit(rng);
      g2[k] = uniform_unit(rng) - 0.5;
      mix[k] = 2.0 * g1[k] - 3.0 * g2[k];
    }
    CHECK(expected_functional(d, mix) ==
          doctest::Approx(2.0 * expected_functional(d, g1) - 3.0 * expected_functional(d, g2)).epsilon(1e-12));
  }

  TEST_CASE("catalog round trip at 12 significant digits")
  {
    Rng rng = make_rng(6);
    std::vector<DensityGrid> rows{ random_density(50, rng), random_density(50, rng) };
    std::stringstream io;
    write_catalog(io, rows, 50);
    const auto back = read_catalog(io);
    REQUIRE(back.size() == 2);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t g = 0; g < 50; ++g)
        CHECK(back[r][g] == doctest::Approx(rows[r][g]).epsilon(1e-11));
    std::stringstream empty;
    write_catalog(empty, {}, 50);
    CHECK(read_catalog(empty).empty());
  }
}
