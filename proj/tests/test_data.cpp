#include "cdeshift/data.hpp"
#include "cdeshift/error.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace cdeshift;

TEST_SUITE("data")
{
  TEST_CASE("read_table without response")
  {
    std::istringstream in("a,b\n1,2\n3,4\n5,6\n");
    const Sample s = read_table(in, false);
    CHECK(s.rows() == 3);
    CHECK(s.cols() == 2);
    CHECK_FALSE(s.labeled());
    CHECK(s.covariates()(2, 1) == 6.0);
  }

  TEST_CASE("read_table with response splits the last column")
  {
    std::istringstream in("a,b,z\n1,2,0.1\n3,4,0.5\n5,6,1\n");
    const Sample s = read_table(in, true);
    CHECK(s.cols() == 2);
    CHECK(s.response().size() == 3);
    CHECK(s.response()(1) == 0.5);
  }

  TEST_CASE("NaN cell is rejected")
  {
    std::istringstream in("a,b\n1,2\n3,NaN\n");
    CHECK_THROWS_AS(read_table(in, false), ValidationError);
  }

  TEST_CASE("malformed rows carry their row index")
  {
    std::istringstream in("a,b\n1,2\n3\n");
    try {
      read_table(in, false);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.row() == 2);
    }
    std::istringstream empty("");
    CHECK_THROWS(read_table(empty, false));
  }

  TEST_CASE("write/read round trip")
  {
    Rng rng = make_rng(1);
    const Sample s = testing::sample(testing::gaussian_matrix(5, 3, rng), testing::unit_vector(5, rng));
    std::stringstream io;
    write_table(io, s);
    const Sample t = read_table(io, true);
    CHECK((t.covariates() - s.covariates()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((t.response() - s.response()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(t.covariate_names() == s.covariate_names());
  }

  TEST_CASE("standardize uses the sample standard deviation")
  {
    Eigen::MatrixXd x(3, 1);
    x << 1, 2, 3;
    const Sample s = standardize(testing::sample(x));
    CHECK(s.covariates()(0, 0) == doctest::Approx(-1.0));
    CHECK(s.covariates()(1, 0) == doctest::Approx(0.0));
    CHECK(s.covariates()(2, 0) == doctest::Approx(1.0));
  }

  TEST_CASE("standardize with identity stats leaves covariates unchanged")
  {
    Rng rng = make_rng(2);
    const Sample s = testing::sample(testing::gaussian_matrix(4, 2, rng));
    const Sample t = standardize(s, std::vector<ColumnStats>{ { 0.0, 1.0 }, { 0.0, 1.0 } });
    CHECK(t.covariates() == s.covariates());
  }

  TEST_CASE("constant column cannot be standardized")
  {
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(3, 1, 5.0);
    try {
      standardize(testing::sample(x));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("x1") != std::string::npos);
    }
  }

  TEST_CASE("standardize is idempotent under recorded stats")
  {
    Rng rng = make_rng(3);
    const Sample raw = testing::sample(testing::gaussian_matrix(20, 3, rng));
    const Sample a = standardize(raw);
    const Sample b = standardize(raw, a.standardization());
    CHECK((a.covariates() - b.covariates()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("rescale_response")
  {
    Eigen::VectorXd z(3);
    z << 0.0, 0.5, 1.0;
    CHECK(rescale_response(z, ResponseRange{ 0.0, 1.0 }).z == z);

    Eigen::VectorXd z2(2);
    z2 << 0.1, 0.3;
    const auto r = rescale_response(z2);
    CHECK(r.z(0) == 0.0);
    CHECK(r.z(1) == 1.0);

    Eigen::VectorXd z3(1);
    z3 << -0.1;
    const auto c = rescale_response(z3, ResponseRange{ 0.0, 1.0 });
    CHECK(c.z(0) == 0.0);
    CHECK(c.clipped == 1);

    CHECK_THROWS(rescale_response(Eigen::VectorXd::Constant(3, 2.0)));
  }

  TEST_CASE("rescale then inverse reproduces unclipped inputs")
  {
    Rng rng = make_rng(4);
    Eigen::VectorXd z = 3.0 * testing::unit_vector(50, rng).array() - 1.0;
    const auto r = rescale_response(z);
    CHECK((inverse_rescale(r.z, r.range) - z).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("split sizes")
  {
    const auto a = split_indices(10000, { 0.28, 0.12, 0.60, 1 });
    CHECK(a.train.size() == 2800);
    CHECK(a.validation.size() == 1200);
    CHECK(a.test.size() == 6000);
    const auto b = split_indices(15000, { 3500.0 / 15000, 1500.0 / 15000, 10000.0 / 15000, 1 });
    CHECK(b.train.size() == 3500);
    CHECK(b.validation.size() == 1500);
    CHECK(b.test.size() == 10000);
  }

  TEST_CASE("split is deterministic, disjoint and exhaustive")
  {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const SplitSpec spec{ 0.5, 0.3, 0.2, seed };
      const auto a = split_indices(137, spec);
      const auto b = split_indices(137, spec);
      CHECK(a.train == b.train);
      CHECK(a.validation == b.validation);
      CHECK(a.test == b.test);
      std::set<Index> all;
      for (const auto* part : { &a.train, &a.validation, &a.test })
        all.insert(part->begin(), part->end());
      CHECK(all.size() == 137);
      CHECK(a.train.size() + a.validation.size() + a.test.size() == 137);
    }
  }

  TEST_CASE("split rejects empty parts")
  {
    CHECK_THROWS(split_indices(3, { 0.9, 0.1, 0.0, 1 }));
  }
}
