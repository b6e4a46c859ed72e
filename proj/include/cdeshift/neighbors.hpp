#pragma once

#include <Eigen/Dense>

#include <vector>

namespace cdeshift {

//! Squared Euclidean distance from `query` to every row of `points`.
Eigen::VectorXd squared_distances(const Eigen::MatrixXd& points, const Eigen::VectorXd& query);

//! Indices of the k rows nearest to the query ordered by (distance, row
//! index), so equal distances resolve toward the lower row.
std::vector<Eigen::Index> nearest_rows(const Eigen::VectorXd& sq_dist, Eigen::Index k);

//! Columns `subset` of `x`.
Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& subset);
Eigen::VectorXd select_entries(const Eigen::VectorXd& x, const std::vector<Eigen::Index>& subset);

//! Throws unless every entry of `subset` indexes one of `dim` columns and the
//! list is nonempty.
void check_subset(const std::vector<Eigen::Index>& subset, Eigen::Index dim);

//! 0, 1, ..., dim - 1.
std::vector<Eigen::Index> all_columns(Eigen::Index dim);

} // namespace cdeshift
