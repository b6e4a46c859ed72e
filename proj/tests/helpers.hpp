#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/density_grid.hpp"
#include "cdeshift/estimator.hpp"
#include "cdeshift/random.hpp"
#include "oracles.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace testing {

inline std::vector<std::string> names(Eigen::Index d)
{
  std::vector<std::string> out;
  for (Eigen::Index k = 0; k < d; ++k)
    out.push_back("x" + std::to_string(k + 1));
  return out;
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index n, Eigen::Index d, cdeshift::Rng& rng)
{
  std::normal_distribution<double> nd;
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      x(i, j) = nd(rng);
  return x;
}

inline Eigen::VectorXd unit_vector(Eigen::Index n, cdeshift::Rng& rng)
{
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i)
    z(i) = cdeshift::uniform_unit(rng);
  return z;
}

inline cdeshift::Sample sample(const Eigen::MatrixXd& x, std::optional<Eigen::VectorXd> z = std::nullopt)
{
  return cdeshift::Sample(x, names(x.cols()), std::move(z));
}

inline oracle::Mat rows(const Eigen::MatrixXd& x)
{
  oracle::Mat out(static_cast<std::size_t>(x.rows()), oracle::Vec(static_cast<std::size_t>(x.cols())));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = x(i, j);
  return out;
}

inline oracle::Vec vec(const Eigen::VectorXd& v)
{
  return oracle::Vec(v.data(), v.data() + v.size());
}

inline oracle::Vec values(const cdeshift::DensityGrid& d)
{
  return oracle::Vec(d.values().begin(), d.values().end());
}

inline double max_abs_diff(const cdeshift::DensityGrid& d, const oracle::Vec& f)
{
  double m = 0.0;
  for (std::size_t g = 0; g < f.size(); ++g)
    m = std::max(m, std::abs(d[g] - f[g]));
  return m;
}

//! Estimator backed by a plain function of x.
class FunctionModel : public cdeshift::ConditionalDensityEstimator
{
public:
  FunctionModel(Eigen::Index dim, std::function<cdeshift::DensityGrid(const Eigen::VectorXd&)> f, std::size_t G = 200)
    : dim_(dim), f_(std::move(f)), G_(G)
  {}
  Eigen::Index input_dimension() const override { return dim_; }
  std::size_t grid_size() const override { return G_; }
  cdeshift::DensityGrid predict(const Eigen::VectorXd& x) const override { return f_(x); }
  std::string kind() const override { return "function"; }
  nlohmann::json to_json() const override { return { { "kind", "function" } }; }

private:
  Eigen::Index dim_;
  std::function<cdeshift::DensityGrid(const Eigen::VectorXd&)> f_;
  std::size_t G_;
};

inline FunctionModel uniform_model(Eigen::Index dim, std::size_t G = 200)
{
  return FunctionModel(dim, [G](const Eigen::VectorXd&) { return cdeshift::DensityGrid::uniform(G); }, G);
}

//! Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name)
{
  const auto p = std::filesystem::temp_directory_path() / ("cdeshift_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace testing
