#pragma once

#include "cdeshift/data.hpp"
#include "cdeshift/estimator.hpp"
#include "cdeshift/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cdeshift::cli {

inline constexpr const char* kVersion = "0.1.0";

//! Runs one subcommand. `args` excludes the program name. Returns 0 on
//! success, 1 on a runtime error and 2 on a usage error; failures print a
//! JSON error object to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

//! A table whose last column, when named "z", is the (raw) response.
struct RawTable
{
  Sample covariates;
  std::optional<Eigen::VectorXd> z;
};

RawTable load_raw(const std::string& path);

//! Writes one density row per observation; returns the row count.
std::size_t emit_catalog(const ConditionalDensityEstimator& model,
                         const Sample& sample,
                         const std::string& path);

//! 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

//! Parsed pipeline configuration with paths resolved against the config
//! file's directory.
struct PipelineConfig
{
  std::string labeled;
  std::string unlabeled;
  std::optional<std::string> pool;
  std::optional<ResponseRange> response_range;
  SplitSpec split;
  PipelineOptions options;
  std::vector<Index> cleaning_m_grid;
  std::uint64_t cleaning_seed = 0;
  std::string output_dir;
};

//! Throws ConfigError naming the offending field.
PipelineConfig parse_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

} // namespace cdeshift::cli
