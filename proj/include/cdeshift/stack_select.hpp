#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/estimator.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdeshift {

//! Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

struct QpSolution
{
  Eigen::VectorXd alpha;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  //! For p = 2: |objective - closed-form segment minimum|.
  std::optional<double> closed_form_gap;
};

//! min a'Ba - 2a'b over the simplex. Projected gradient with step 1/L from
//! the uniform point, stopping at gradient-mapping norm 1e-10 or 1e5
//! iterations. Among (numerically) equivalent minimizers the one of minimal
//! Euclidean norm is returned.
QpSolution solve_simplex_qp(const Eigen::MatrixXd& B, const Eigen::VectorXd& b);

double qp_objective(const Eigen::MatrixXd& B, const Eigen::VectorXd& b, const Eigen::VectorXd& alpha);

//! Closed-form minimizer of the p = 2 problem over alpha_1 in [0, 1].
Eigen::Vector2d segment_minimizer(const Eigen::Matrix2d& B, const Eigen::Vector2d& b);

//! Convex combination of fitted estimators.
class StackedModel : public ConditionalDensityEstimator
{
public:
  StackedModel(std::vector<EstimatorPtr> components,
               Eigen::VectorXd alpha,
               Eigen::MatrixXd B,
               Eigen::VectorXd b,
               double objective);

  Index input_dimension() const override;
  std::size_t grid_size() const override;
  DensityGrid predict(const Eigen::VectorXd& x) const override;
  std::string kind() const override { return "stacked"; }
  nlohmann::json to_json() const override;

  const std::vector<EstimatorPtr>& components() const { return components_; }
  const Eigen::VectorXd& alpha() const { return alpha_; }
  const Eigen::MatrixXd& B() const { return B_; }
  const Eigen::VectorXd& b() const { return b_; }
  double objective() const { return objective_; }

private:
  std::vector<EstimatorPtr> components_;
  Eigen::VectorXd alpha_;
  Eigen::MatrixXd B_;
  Eigen::VectorXd b_;
  double objective_;
};

//! sum_k alpha_k grids_k, renormalized.
DensityGrid mix_densities(std::span<const DensityGrid> grids, const Eigen::VectorXd& alpha);

struct StackingSystem
{
  Eigen::MatrixXd B;
  Eigen::VectorXd b;
};

//! B_ij = mean over unlabeled rows of int f_i f_j; b_i = mean over labeled
//! rows of f_i(z | x) * weight. Indexed [component][row].
StackingSystem stacking_system(const std::vector<std::vector<DensityGrid>>& unlabeled_densities,
                               const std::vector<std::vector<DensityGrid>>& labeled_densities,
                               const Eigen::VectorXd& labeled_z,
                               const Eigen::VectorXd& labeled_weights);

StackedModel stack(std::vector<EstimatorPtr> components,
                   const Sample& labeled_val,
                   const Eigen::VectorXd& val_weights,
                   const Sample& unlabeled_val);

struct SelectionStep
{
  Index covariate;
  double loss;
};

struct SelectionTrace
{
  std::string mode; //!< "stepwise" or "exhaustive"
  double baseline;  //!< loss before any step (infinite when the first step is forced)
  std::vector<SelectionStep> steps;
  std::vector<Index> subset;
  double final_loss;
  std::size_t evaluations = 0;

  nlohmann::json to_json() const;
};

using SubsetScore = std::function<double(const std::vector<Index>&)>;

inline constexpr double kSelectionTolerance = 1e-6;

//! Greedy forward search from `baseline`: add the candidate with the largest
//! loss decrease while that decrease exceeds `tolerance`. Ties go to the
//! earlier candidate.
SelectionTrace forward_select(const SubsetScore& score,
                              const std::vector<Index>& candidates,
                              double baseline,
                              double tolerance = kSelectionTolerance);

//! Forward search whose first step (the best single covariate) is always
//! taken; used for the weight model, which has no empty-model score.
SelectionTrace forward_select_forced(const SubsetScore& score,
                                     const std::vector<Index>& candidates,
                                     double tolerance = kSelectionTolerance);

//! Scores every nonempty subset (at most 10 candidates); ties go to the
//! smaller subset, then the lexicographically smaller one. With a finite
//! baseline the empty subset is kept unless some subset beats it by more
//! than `tolerance`.
SelectionTrace exhaustive_select(const SubsetScore& score,
                                 const std::vector<Index>& candidates,
                                 std::optional<double> baseline = std::nullopt,
                                 double tolerance = kSelectionTolerance);

} // namespace cdeshift
