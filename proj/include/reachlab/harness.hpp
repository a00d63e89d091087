#pragma once
// Experiment orchestration: strict JSON configs, result bundles, CSV and
// plot-data emission.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace reachlab::harness {

inline constexpr const char* kToolVersion = "reachlab 0.3.0";

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {"kramers-sweep",   "label-sweep",     "batch-sweep",
                                                 "complexity-scatter", "finetune-matrix", "structure-curve",
                                                 "action-check"};
  return kinds;
}

// Thrown for any config that does not match the schema of its kind.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::string kind;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();

  // Validates the kind-specific parameters; throws ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Table {
  std::string file;    // e.g. "label_sweep.csv"
  std::string schema;  // name in csv::registry()
  std::string text;    // full CSV contents
};

struct PlotSeries {
  std::string file;  // under plots/
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ResultBundle {
  ExperimentConfig config;
  nlohmann::json records = nlohmann::json::array();
  nlohmann::json summary = nlohmann::json::object();
  // Cells or sweep points that failed, with messages.
  nlohmann::json flags = nlohmann::json::array();
  bool failed = false;  // the experiment as a whole did not finish
  std::string error;
  std::vector<Table> tables;
  std::vector<PlotSeries> plots;
  nlohmann::json timing = nlohmann::json::object();

  // Everything except timing.
  nlohmann::json deterministic_json() const;
  nlohmann::json to_json() const;
};

struct RunOptions {
  std::size_t workers = 1;
  // Per-cell checkpoint directory for matrix experiments; empty disables.
  std::filesystem::path checkpoint_dir;
};

// Runs the experiment; module errors are captured into the bundle
// (failed/flags), never thrown. ConfigError propagates.
ResultBundle run(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Writes bundle.json, every table, plots/*.dat and plots/manifest.json.
void write_bundle(const ResultBundle& b, const std::filesystem::path& dir);

// Exit status for the CLI: 0 clean, 3 failed or flagged.
int exit_code(const ResultBundle& b);

// Check every CSV in a bundle directory against its registered schema.
// Returns problems; empty means valid.
std::vector<std::string> validate_bundle_dir(const std::filesystem::path& dir);

}  // namespace reachlab::harness
