#include "cdeshift/weights.hpp"
#include "cdeshift/simulate.hpp"
#include "helpers.hpp"

#include <doctest.h>

using namespace cdeshift;

namespace {

Sample line(std::initializer_list<double> v)
{
  Eigen::MatrixXd x(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double e : v)
    x(i++, 0) = e;
  return testing::sample(x);
}

Eigen::VectorXd point(double v)
{
  return Eigen::VectorXd::Constant(1, v);
}

} // namespace

TEST_SUITE("weights")
{
  TEST_CASE("hand-counted beta")
  {
    const auto m = fit_weight_model(line({ 0.0, 0.4, 1.0 }), line({ 0.1, 0.2, 0.9 }), 2);
    CHECK(predict_beta(m, point(0.0)) == doctest::Approx(1.0));
  }

  TEST_CASE("complete coverage gives one")
  {
    const Sample s = line({ 0.0, 0.3, 0.7, 1.0 });
    const auto m = fit_weight_model(s, s, 4);
    CHECK(predict_beta(m, point(0.5)) == doctest::Approx(1.0));
  }

  TEST_CASE("no unlabeled point within the radius gives zero")
  {
    const auto m = fit_weight_model(line({ 0.0, 0.1, 0.2 }), line({ 5.0, 6.0 }), 1);
    CHECK(predict_beta(m, point(0.0)) == 0.0);
  }

  TEST_CASE("dimension mismatch")
  {
    const auto m = fit_weight_model(line({ 0.0, 0.1 }), line({ 0.0 }), 1);
    CHECK_THROWS(predict_beta(m, Eigen::VectorXd(Eigen::VectorXd::Zero(2))));
  }

  TEST_CASE("matches the definition on random instances")
  {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng = make_rng(seed);
      const Eigen::MatrixXd L = testing::gaussian_matrix(30, 3, rng);
      const Eigen::MatrixXd U = testing::gaussian_matrix(25, 3, rng).array() + 0.5;
      const Index M = 1 + static_cast<Index>(seed % 5);
      const auto m = fit_weight_model(testing::sample(L), testing::sample(U), M);
      const Eigen::MatrixXd Q = testing::gaussian_matrix(10, 3, rng);
      const Eigen::VectorXd got = predict_beta(m, Q);
      for (Index q = 0; q < Q.rows(); ++q) {
        const double want = oracle::beta(testing::rows(L), testing::rows(U), static_cast<std::size_t>(M),
                                         testing::vec(Q.row(q).transpose()));
        CHECK(got(q) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("invariant to common scaling and to duplicating the unlabeled set")
  {
    Rng rng = make_rng(20);
    const Eigen::MatrixXd L = testing::gaussian_matrix(40, 2, rng);
    const Eigen::MatrixXd U = testing::gaussian_matrix(40, 2, rng);
    const Eigen::MatrixXd Q = testing::gaussian_matrix(15, 2, rng);
    const auto base = predict_beta(fit_weight_model(testing::sample(L), testing::sample(U), 5), Q);
    const auto scaled =
      predict_beta(fit_weight_model(testing::sample(2.5 * L), testing::sample(2.5 * U), 5), Eigen::MatrixXd(2.5 * Q));
    Eigen::MatrixXd UU(80, 2);
    UU << U, U;
    const auto dup = predict_beta(fit_weight_model(testing::sample(L), testing::sample(UU), 5), Q);
    CHECK((base - scaled).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((base - dup).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(base.minCoeff() >= 0.0);
  }

  TEST_CASE("beta_loss")
  {
    CHECK(beta_loss(Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(3)) == doctest::Approx(-1.0));
    Eigen::VectorXd l(2), u(2);
    l << 0, 2;
    u << 1, 1;
    CHECK(beta_loss(l, u) == doctest::Approx(0.0));
    CHECK_THROWS(beta_loss(Eigen::VectorXd(0), u));
  }

  TEST_CASE("beta_loss grows with noise around the true ratio")
  {
    const auto d = make_oracle({ 1, 400, 400, 0.8, 0.1, MeanFunction::logistic, 3 });
    Eigen::VectorXd bl(400), bu(400);
    for (Index i = 0; i < 400; ++i) {
      bl(i) = d.beta(d.labeled.row(i));
      bu(i) = d.beta(d.unlabeled.row(i));
    }
    double previous = -1e300;
    for (double sigma : { 0.0, 0.3, 0.6, 1.2 }) {
      double total = 0.0;
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 g(seed);
        std::normal_distribution<double> nd(0.0, sigma > 0 ? sigma : 1.0);
        Eigen::VectorXd nl = bl, nu = bu;
        if (sigma > 0)
          for (Index i = 0; i < 400; ++i) {
            nl(i) += nd(g);
            nu(i) += nd(g);
          }
        total += beta_loss(nl, nu);
      }
      CHECK(total / 20 >= previous);
      previous = total / 20;
    }
  }

  TEST_CASE("select_M with a singleton grid")
  {
    Rng rng = make_rng(5);
    const Sample L = testing::sample(testing::gaussian_matrix(30, 2, rng));
    const Sample U = testing::sample(testing::gaussian_matrix(30, 2, rng));
    const auto s = select_M(L, U, L, U, { 1 });
    CHECK(s.model.M == 1);
    CHECK(s.loss_table.size() == 1);
  }

  TEST_CASE("select_M ties go to the smaller M")
  {
    // One labeled point per unlabeled point at identical locations: every
    // M = n_L gives beta identically one.
    const Sample s = line({ 0.0, 1.0, 2.0 });
    const auto r = select_M(s, s, s, s, { 3, 3 });
    CHECK(r.model.M == 3);
  }

  TEST_CASE("unit-mean weights at zero shift")
  {
    const auto d = make_oracle({ 2, 2000, 2000, 0.0, 0.1, MeanFunction::logistic, 17 });
    const auto lsplit = split_indices(2000, { 0.5, 0.25, 0.25, 1 });
    const Sample lt = d.labeled.select_rows(lsplit.train), lv = d.labeled.select_rows(lsplit.validation);
    const auto usplit = split_indices(2000, { 0.5, 0.25, 0.25, 2 });
    const Sample ut = d.unlabeled.select_rows(usplit.train), uv = d.unlabeled.select_rows(usplit.validation);
    const auto m = select_M(lt, ut, lv, uv, { 5, 10, 20, 40 });
    const Eigen::VectorXd b = predict_beta(m.model, lv.covariates());
    const double se = std::sqrt((b.array() - b.mean()).square().mean() / b.size());
    CHECK(std::abs(b.mean() - 1.0) <= 3.0 * se + 0.02);
  }

  TEST_CASE("effective sample size")
  {
    CHECK(effective_sample_size(Eigen::VectorXd::Ones(4)) == doctest::Approx(4.0));
    Eigen::VectorXd w(4);
    w << 2, 0, 0, 0;
    CHECK(effective_sample_size(w) == doctest::Approx(1.0));
    Eigen::VectorXd v(2);
    v << 1, 3;
    CHECK(effective_sample_size(v) == doctest::Approx(1.6));
    CHECK_THROWS(effective_sample_size(Eigen::VectorXd::Zero(3)));
  }

  TEST_CASE("cleaning with dense support drops almost nothing")
  {
    Rng rng = make_rng(6);
    const Sample pool = testing::sample(testing::gaussian_matrix(200, 1, rng));
    const Sample current = testing::sample(testing::gaussian_matrix(100, 1, rng));
    // Unlabeled copies of the pool, twice as dense as the labeled sample.
    const auto r = clean_zero_weights(pool, current, pool, 50, { 20 }, 3);
    CHECK(r.sample.rows() == 50);
    CHECK(r.zero_weight_fraction <= 0.01);
  }

  TEST_CASE("cleaning rejects the current sample as its own pool")
  {
    Rng rng = make_rng(7);
    const Sample current = testing::sample(testing::gaussian_matrix(50, 1, rng));
    const Sample u = testing::sample(testing::gaussian_matrix(50, 1, rng));
    CHECK_THROWS(clean_zero_weights(current, current, u, 10, { 1, 5 }, 0));
  }

  TEST_CASE("cleaning reports an unreachable target")
  {
    const Sample pool = line({ 0.0, 0.1, 10.0, 10.1, 10.2 });
    const Sample current = line({ 0.05, 10.05, 10.15, 10.25 });
    const Sample u = line({ 0.02, 0.03, 0.04, 0.06 });
    CHECK_THROWS(clean_zero_weights(pool, current, u, 5, { 1 }, 0));
  }
}
