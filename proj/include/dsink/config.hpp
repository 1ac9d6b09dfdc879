#pragma once

// Experiment configuration and its flat key=value file format.
//
//   # comment
//   dataset.num_classes = 10
//   train.alpha = 1e-3
//
// Keys carry a section prefix (dataset., aux., train., paths.). Unknown keys
// and malformed values are config errors naming the key; commands read the
// sections they need.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsink/models.hpp"
#include "dsink/synth_data.hpp"

namespace dsink {

enum class Arm {
  kCe,
  kDsink,
  kNaiveDistill,
  kEnsemble,
  kDsinkNoBase,
  kDsinkNoFl,
  kAuxFl,  // the imbalance-robust auxiliary on its own
  kAuxFn,  // the noise-robust auxiliary on its own
};

std::string_view to_string(Arm arm);
Arm arm_from_string(std::string_view s);
const std::vector<std::string>& arm_names();

struct OptimizerConfig {
  int epochs = 120;
  int batch_size = 64;
  model::SgdHyper sgd;
  model::LrSchedule schedule;  // epoch_scale derived from epochs / 300 unless set
  model::Architecture arch = model::Architecture::kLinear;
  int hidden_width = 32;
};

struct AuxConfig {
  OptimizerConfig opt;
  std::uint64_t seed = 0;
  // Temperature on the log-prior shift of logit-adjusted training.
  double la_tau = 1.0;
  // Fraction of samples kept by small-loss selection; unset means
  // 1 - the recipe's nominal noise ratio.
  std::optional<double> keep_fraction;
  double warmup_fraction = 0.1;

  double resolved_keep_fraction(const data::DatasetRecipe& recipe) const;
};

struct TrainConfig {
  OptimizerConfig opt;
  std::uint64_t seed = 0;
  Arm arm = Arm::kDsink;
  double alpha = 1e-3;
  int sinkhorn_iters = 50;
  double lambda = 2.0;
  bool debug_invariants = false;
};

struct PathConfig {
  std::filesystem::path out_dir = "dsink_out";
  // Empty paths resolve to fixed names under out_dir.
  std::filesystem::path train_data;
  std::filesystem::path test_data;
  std::filesystem::path aux_cache;
  std::filesystem::path results;

  // Default file names carry the seed that produced them so one out_dir can
  // hold a whole seed loop.
  std::filesystem::path train_data_path(std::uint64_t dataset_seed) const;
  std::filesystem::path test_data_path(std::uint64_t dataset_seed) const;
  std::filesystem::path aux_cache_path(std::uint64_t aux_seed) const;
  std::filesystem::path fl_checkpoint_path(std::uint64_t aux_seed) const;
  std::filesystem::path fn_checkpoint_path(std::uint64_t aux_seed) const;
  std::filesystem::path results_path() const;
  std::filesystem::path checkpoint_path(Arm arm, std::uint64_t seed) const;
  std::filesystem::path log_path(Arm arm, std::uint64_t seed) const;
};

struct ExperimentConfig {
  data::DatasetRecipe dataset;
  AuxConfig aux;
  TrainConfig train;
  PathConfig paths;

  /// Throws Error(kConfig) naming the offending key.
  void validate() const;

  /// Sets every seed (dataset, aux, train) from one experiment seed.
  void set_seed(std::uint64_t seed);

  /// Canonical key=value dump of every setting.
  std::string echo() const;
};

/// Parses config text. `dataset.num_classes` is required.
ExperimentConfig parse_config(std::string_view text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace dsink
