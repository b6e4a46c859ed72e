#include "cdeshift/neighbors.hpp"

#include "cdeshift/error.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace cdeshift {

Eigen::VectorXd squared_distances(const Eigen::MatrixXd& points, const Eigen::VectorXd& query)
{
  if (points.cols() != query.size())
    throw ValidationError("query has dimension " + std::to_string(query.size()) +
                          ", expected " + std::to_string(points.cols()));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(points.rows());
  for (Eigen::Index j = 0; j < points.cols(); ++j)
    out.array() += (points.col(j).array() - query(j)).square();
  return out;
}

std::vector<Eigen::Index> nearest_rows(const Eigen::VectorXd& sq_dist, Eigen::Index k)
{
  const Eigen::Index n = sq_dist.size();
  k = std::clamp<Eigen::Index>(k, 0, n);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{ 0 });
  const auto closer = [&](Eigen::Index a, Eigen::Index b) {
    return sq_dist(a) < sq_dist(b) || (sq_dist(a) == sq_dist(b) && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), closer);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& subset)
{
  check_subset(subset, x.cols());
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(subset.size()));
  for (std::size_t j = 0; j < subset.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = x.col(subset[j]);
  return out;
}

Eigen::VectorXd select_entries(const Eigen::VectorXd& x, const std::vector<Eigen::Index>& subset)
{
  check_subset(subset, x.size());
  Eigen::VectorXd out(static_cast<Eigen::Index>(subset.size()));
  for (std::size_t j = 0; j < subset.size(); ++j)
    out(static_cast<Eigen::Index>(j)) = x(subset[j]);
  return out;
}

void check_subset(const std::vector<Eigen::Index>& subset, Eigen::Index dim)
{
  if (subset.empty())
    throw ValidationError("covariate subset is empty");
  for (auto j : subset)
    if (j < 0 || j >= dim)
      throw ValidationError("covariate index " + std::to_string(j) + " is out of range for " +
                            std::to_string(dim) + " columns");
}

std::vector<Eigen::Index> all_columns(Eigen::Index dim)
{
  std::vector<Eigen::Index> out(static_cast<std::size_t>(dim));
  std::iota(out.begin(), out.end(), Eigen::Index{ 0 });
  return out;
}

} // namespace cdeshift
