#pragma once

#include <Eigen/Dense>
#include <json.hpp>

namespace cdeshift::detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& x)
{
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      row.push_back(x(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows, Eigen::Index cols)
{
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(cols))
      throw nlohmann::json::other_error::create(501, "matrix row has the wrong width", nullptr);
    for (Eigen::Index j = 0; j < cols; ++j)
      x(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)].get<double>();
  }
  return x;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v)
{
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j)
{
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace cdeshift::detail
