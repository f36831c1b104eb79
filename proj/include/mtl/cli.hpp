#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtl/training.hpp"

namespace mtl::cli {

// Stable process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericAbort = 3 };

struct CompareSpec {
  ExperimentConfig base;
  std::vector<CombinerConfig> combiners;
  std::vector<std::size_t> frames{1, 2};
  std::vector<std::vector<Task>> task_sets;
  std::vector<std::uint64_t> seeds;

  void validate() const;
};

CompareSpec compare_spec_from_json(const nlohmann::json& j);

std::string combiner_label(const CombinerConfig& c);
std::string task_set_label(const std::vector<Task>& tasks);

struct CompareRow {
  std::size_t task_set_index = 0;
  std::size_t combiner_index = 0;
  std::string task_set;
  std::string combiner;
  std::string label;  // "multinet++" for two-frame GLS runs
  std::size_t frames = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";  // or the error message of a failed run
  std::map<Task, TaskEpochMetrics> final_metrics;
  std::vector<MetricsRecord> history;
  ParamCountReport params;
};

struct CompareResult {
  std::vector<CompareRow> rows;  // sorted by (task set, combiner, frames, seed)
};

// Runs every (task set, combiner, frames, seed) combination on `dataset`,
// `jobs` runs at a time. A failing run is recorded in its row.
CompareResult run_compare(const CompareSpec& spec, const Dataset& dataset, std::size_t jobs = 1);

// Writes summary.csv, summary.txt (with per-group medians), curves.csv and
// params.csv into `dir`.
void write_compare_outputs(const CompareResult& result, const std::filesystem::path& dir);

// Entry point shared by the `mtl` binary and the tests. Returns an ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mtl::cli
