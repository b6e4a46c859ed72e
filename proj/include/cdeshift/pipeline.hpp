#pragma once

#include "cdeshift/cde_nn.hpp"
#include "cdeshift/cde_series.hpp"
#include "cdeshift/data.hpp"
#include "cdeshift/losses.hpp"
#include "cdeshift/stack_select.hpp"
#include "cdeshift/weights.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cdeshift {

enum class SelectionMode
{
  none,      //!< use every covariate
  stepwise,
  exhaustive
};

std::string to_string(SelectionMode m);
SelectionMode selection_mode_from_string(const std::string& s);

struct PipelineOptions
{
  std::vector<Index> m_grid{ 5, 10, 20, 40 };
  SelectionMode weight_selection = SelectionMode::none;
  SelectionMode cde_selection = SelectionMode::none;
  NnGrid ker_grid{ { 10, 20, 40, 80 }, {}, { 0.0005, 0.002, 0.008 } };
  SeriesGrid series_grid{ { 5, 10, 20 }, { 5, 10, 20, 40 }, { 0.05, 0.2, 1.0 } };
  ResponseBasis basis = ResponseBasis::cosine;
  //! false runs the same search with unit weights and labeled-only losses.
  bool corrected = true;
  std::size_t grid_size = kDefaultGridSize;
  std::size_t bootstrap_replicates = kDefaultBootstrapReplicates;
  std::uint64_t bootstrap_seed = 0;
};

//! Standardized, split data. Unlabeled parts may carry responses (simulation),
//! which enables oracle test losses.
struct PipelineData
{
  Sample labeled_train, labeled_val, labeled_test;
  Sample unlabeled_train, unlabeled_val, unlabeled_test;
};

//! Splits both samples with `split` (the
//! unlabeled split uses seed + 1) and standardizes everything with the
//! labeled-train statistics.
PipelineData prepare_data(const Sample& labeled,
                          const Sample& unlabeled,
                          const SplitSpec& split);

struct PipelineResult
{
  WeightModel weight_model;
  std::vector<std::pair<Index, double>> m_table;
  double weight_loss = 0.0;
  std::optional<SelectionTrace> weight_trace;

  std::shared_ptr<const StackedModel> model;
  std::vector<Index> cde_subset;
  std::optional<SelectionTrace> cde_trace;
  std::vector<SeriesTuningRow> series_table;
  std::vector<NnTuningRow> ker_table;
  double extrapolation_fraction = 0.0;

  LossReport validation_loss;
  std::map<std::string, double> component_validation_losses;
  LossReport test_loss;
  std::optional<LossReport> oracle_test_loss;
  std::map<std::string, double> component_oracle_test_losses;

  //! Everything except the fitted model itself.
  nlohmann::json to_json() const;
};

//! Select beta covariates and M, then for each CDE covariate subset tune the
//! series and kernel-NN estimators, stack them and score the stack; the best
//! subset's stacked model is returned with validation and test reports.
PipelineResult run_pipeline(const PipelineData& data, const PipelineOptions& options);

} // namespace cdeshift
