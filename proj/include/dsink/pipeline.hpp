#pragma once

// Pipeline commands behind the dsink command-line tool. Each command reads
// the config sections it needs, writes its artifacts under paths.out_dir and
// a manifest describing them, and reports progress on `out`.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dsink/config.hpp"
#include "dsink/eval_metrics.hpp"

namespace dsink::cli {

inline constexpr const char* kToolVersion = "0.3.0";

struct GlobalOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  bool debug_invariants = false;
};

/// Loads the config file and applies the command-line overrides.
ExperimentConfig resolve_config(const GlobalOptions& options);

struct ManifestEntry {
  std::string role;
  std::filesystem::path path;
  std::uint32_t crc32 = 0;  // of the whole file
};

struct RunManifest {
  std::string command;
  std::filesystem::path config_path;
  std::string resolved_config;
  std::vector<ManifestEntry> artifacts;
  std::string started_utc;
  std::string finished_utc;
  std::string tool_version = kToolVersion;

  void add(std::string role, const std::filesystem::path& path);
  std::string to_text() const;
};

/// Writes train and test datasets; echoes recipe and measured IR/NR.
RunManifest cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out);

/// Trains f_L and f_N (concurrently), writes both checkpoints and the
/// prediction cache bound to the training set.
RunManifest cmd_train_aux(const ExperimentConfig& cfg, std::ostream& out);

/// Runs cfg.train.arm; writes checkpoint and log for trainable arms and
/// appends the report row to the results table.
RunManifest cmd_train(const ExperimentConfig& cfg, std::ostream& out,
                      eval::EvalReport* report = nullptr);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
};

struct ArmSummary {
  std::string arm;
  std::size_t seeds = 0;
  // overall, many, medium, few, macro_f1, macro_auc, noise_correction_rate
  std::vector<MetricSummary> metrics;
};

const std::vector<std::string>& summary_metric_names();

/// One summary per arm in order of first appearance. When an (arm, seed)
/// pair occurs more than once the last row wins. NaN values are skipped.
std::vector<ArmSummary> summarize(const std::vector<eval::EvalReport>& rows);

/// Reads the results table, prints the mean +/- std table plus a
/// dsink-minus-ce margin row, and writes summary.csv and curves.csv next to
/// it (or into `report_dir` when given).
void cmd_report(const std::filesystem::path& results, std::ostream& out,
                const std::optional<std::filesystem::path>& report_dir = std::nullopt);

/// Writes `manifest` to out_dir/manifests/<name>.txt.
std::filesystem::path write_manifest(const RunManifest& manifest,
                                     const std::filesystem::path& out_dir,
                                     const std::string& name);

}  // namespace dsink::cli
