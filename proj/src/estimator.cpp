#include "cdeshift/estimator.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/parallel.hpp"

namespace cdeshift {

std::vector<DensityGrid> ConditionalDensityEstimator::predict_all(const Eigen::MatrixXd& x) const
{
  if (x.rows() > 0 && x.cols() != input_dimension())
    throw ValidationError("input has " + std::to_string(x.cols()) + " covariates, model expects " +
                          std::to_string(input_dimension()));
  std::vector<DensityGrid> out(static_cast<std::size_t>(x.rows()));
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = predict(x.row(static_cast<Eigen::Index>(i)).transpose());
  });
  return out;
}

} // namespace cdeshift
