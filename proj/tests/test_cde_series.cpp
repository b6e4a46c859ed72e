#include "cdeshift/cde_series.hpp"
#include "cdeshift/losses.hpp"
#include "helpers.hpp"

#include <doctest.h>

using namespace cdeshift;

namespace {

Sample random_labeled(Index n, Index d, std::uint64_t seed)
{
  Rng rng = make_rng(seed);
  const Eigen::MatrixXd x = testing::gaussian_matrix(n, d, rng);
  return testing::sample(x, testing::unit_vector(n, rng));
}

} // namespace

TEST_SUITE("cde_series")
{
  TEST_CASE("basis functions are orthonormal on the grid")
  {
    for (auto basis : { ResponseBasis::cosine, ResponseBasis::fourier }) {
      const std::size_t G = 4001;
      for (Index i = 1; i <= 6; ++i)
        for (Index j = 1; j <= 6; ++j) {
          std::vector<double> p(G);
          for (std::size_t g = 0; g < G; ++g)
            p[g] = basis_value(basis, i, grid_knot(g, G)) * basis_value(basis, j, grid_knot(g, G));
          CHECK(trapezoid(p) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-5));
        }
    }
    CHECK(basis_value(ResponseBasis::fourier, 2, 0.25) == doctest::Approx(std::sqrt(2.0)));
    CHECK(basis_value(ResponseBasis::cosine, 2, 0.0) == doctest::Approx(std::sqrt(2.0)));
  }

  TEST_CASE("two identical rows: rank one")
  {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(2, 2, 0.7);
    const auto g = decompose_gram(x, 0.3);
    CHECK(g.usable_rank() == 1);
    CHECK(g.eigvals(0) == doctest::Approx(2.0));
    Eigen::VectorXd z(2);
    z << 0.2, 0.6;
    const Sample s = testing::sample(x, z);
    CHECK_NOTHROW(SeriesModel::fit(s, 0.3, 3, 1));
    CHECK_THROWS(SeriesModel::fit(s, 0.3, 3, 2));
  }

  TEST_CASE("decomposition matches a Jacobi oracle")
  {
    const Sample s = random_labeled(25, 2, 1);
    const auto g = decompose_gram(s.covariates(), 0.5);
    const auto o = oracle::series(testing::rows(s.covariates()), testing::vec(s.response()), 0.5, 3, 8);
    for (Index j = 0; j < 8; ++j) {
      CHECK(g.eigvals(j) == doctest::Approx(o.eig.vals[static_cast<std::size_t>(j)]).epsilon(1e-10));
      for (Index i = 0; i < 25; ++i)
        CHECK(std::abs(g.eigvecs(i, j) - o.eig.vecs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <
              1e-8);
    }
  }

  TEST_CASE("coefficients match the definition")
  {
    const Sample s = random_labeled(30, 2, 2);
    const auto m = SeriesModel::fit(s, 0.4, 5, 6);
    const auto o = oracle::series(testing::rows(s.covariates()), testing::vec(s.response()), 0.4, 5, 6);
    for (Index i = 0; i < 5; ++i)
      for (Index j = 0; j < 6; ++j)
        CHECK(std::abs(m.coeffs()(i, j) - o.alpha[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) < 1e-8);
  }

  TEST_CASE("Nystrom at training rows reproduces scaled eigenvectors")
  {
    const Sample s = random_labeled(40, 3, 3);
    const auto m = SeriesModel::fit(s, 0.5, 4, 10);
    const double sn = std::sqrt(40.0);
    for (Index i = 0; i < 40; ++i) {
      const Eigen::VectorXd psi = m.nystrom(s.row(i));
      for (Index j = 0; j < 10; ++j)
        CHECK(std::abs(psi(j) - sn * m.eigvecs()(i, j)) < 1e-10);
    }
  }

  TEST_CASE("Nystrom decays far from the data")
  {
    const Sample s = random_labeled(30, 2, 4);
    const double eps = 0.2;
    const auto m = SeriesModel::fit(s, eps, 3, 5);
    const double far = 20.0 * std::sqrt(eps) + s.covariates().cwiseAbs().maxCoeff() * 2.0;
    const Eigen::VectorXd psi = m.nystrom(Eigen::VectorXd::Constant(2, far));
    CHECK(psi.cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("Nystrom and predict match the definition")
  {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Sample s = random_labeled(20 + static_cast<Index>(seed) * 5, 2, 10 + seed);
      const auto m = SeriesModel::fit(s, 0.6, 4, 5);
      const auto o = oracle::series(testing::rows(s.covariates()), testing::vec(s.response()), 0.6, 4, 5);
      Rng rng = make_rng(seed);
      for (int q = 0; q < 4; ++q) {
        const Eigen::VectorXd x = testing::gaussian_matrix(1, 2, rng).row(0).transpose();
        const auto po = o.psi(testing::vec(x));
        const Eigen::VectorXd pm = m.nystrom(x);
        for (Index j = 0; j < 5; ++j)
          CHECK(std::abs(pm(j) - po[static_cast<std::size_t>(j)]) < 1e-10);
        CHECK(testing::max_abs_diff(m.predict(x), o.density(testing::vec(x), 200)) < 1e-8);
      }
    }
  }

  TEST_CASE("empirical orthonormality at the training rows")
  {
    const Sample s = random_labeled(200, 2, 5);
    const auto m = SeriesModel::fit(s, 0.2, 2, 15);
    Eigen::MatrixXd psi(200, 15);
    for (Index i = 0; i < 200; ++i)
      psi.row(i) = m.nystrom(s.row(i)).transpose();
    const Eigen::MatrixXd gram = psi.transpose() * psi / 200.0;
    CHECK((gram - Eigen::MatrixXd::Identity(15, 15)).cwiseAbs().maxCoeff() <= 1e-8);
  }

  TEST_CASE("I = J = 1 predicts the uniform density")
  {
    const Sample s = random_labeled(20, 2, 6);
    const auto m = SeriesModel::fit(s, 0.5, 1, 1);
    const DensityGrid d = m.predict(Eigen::VectorXd::Zero(2));
    for (std::size_t g = 0; g < d.size(); ++g)
      CHECK(d[g] == doctest::Approx(1.0));
  }

  TEST_CASE("row permutation leaves coefficients unchanged")
  {
    const Sample s = random_labeled(30, 2, 7);
    std::vector<Index> perm(30);
    for (Index i = 0; i < 30; ++i)
      perm[static_cast<std::size_t>(i)] = (i * 7) % 30;
    const auto a = SeriesModel::fit(s, 0.5, 4, 6);
    const auto b = SeriesModel::fit(s.select_rows(perm), 0.5, 4, 6);
    CHECK((a.coeffs() - b.coeffs()).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("outputs are normalized")
  {
    const Sample s = random_labeled(50, 2, 8);
    const auto m = SeriesModel::fit(s, 0.3, 10, 12, {}, ResponseBasis::fourier);
    Rng rng = make_rng(9);
    for (int q = 0; q < 50; ++q) {
      const DensityGrid d = m.predict(testing::gaussian_matrix(1, 2, rng).row(0).transpose());
      CHECK(trapezoid(d.values()) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("tuning decomposes once per bandwidth and agrees with direct fits")
  {
    const Sample train = random_labeled(60, 2, 20);
    const Sample val = random_labeled(30, 2, 21);
    const auto before = gram_decomposition_count();
    const auto f = tune_series(train, { { 2, 4 }, { 3, 6 }, { 0.2, 0.8 } }, val, Eigen::VectorXd::Ones(30), val,
                               LossVariant::labeled_only);
    CHECK(gram_decomposition_count() - before == 2);
    CHECK(f.loss_table.size() == 8);
    for (const auto& row : f.loss_table) {
      const auto m = SeriesModel::fit(train, row.epsilon, row.I, row.J);
      CHECK(loss_labeled(m, val).value == doctest::Approx(row.loss).epsilon(1e-10));
      CHECK(row.loss >= f.loss);
    }
  }

  TEST_CASE("tuning with a singleton grid")
  {
    const Sample train = random_labeled(30, 2, 22);
    const auto f = tune_series(train, { { 3 }, { 4 }, { 0.5 } }, train, Eigen::VectorXd::Ones(30), train,
                               LossVariant::labeled_only);
    CHECK(f.model.I() == 3);
    CHECK(f.model.J() == 4);
    CHECK(f.model.epsilon() == 0.5);
  }

  TEST_CASE("extrapolation fraction")
  {
    const Sample s = random_labeled(30, 2, 23);
    const auto m = SeriesModel::fit(s, 0.2, 3, 5);
    CHECK(extrapolation_fraction(m, s.covariates()) < 0.5);
    CHECK(extrapolation_fraction(m, Eigen::MatrixXd::Constant(4, 2, 100.0)) == 1.0);
  }

  TEST_CASE("json round trip")
  {
    const Sample s = random_labeled(20, 2, 24);
    const auto m = SeriesModel::fit(s, 0.5, 3, 4);
    const auto back = SeriesModel::from_json(m.to_json());
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(2, 0.1);
    CHECK(testing::max_abs_diff(back.predict(x), testing::values(m.predict(x))) == 0.0);
  }
}
