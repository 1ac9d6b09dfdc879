#pragma once

// The two single-robustness auxiliary models and their cached predictions.
//
//   f_L: logit-adjusted cross-entropy. Training logits are shifted by
//        tau * log(prior_c), prior from observed labels; inference uses the
//        plain logits.
//   f_N: small-loss selection. After a warmup, each epoch trains only on the
//        keep_fraction of samples with the lowest current cross-entropy.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsink/config.hpp"
#include "dsink/models.hpp"
#include "dsink/synth_data.hpp"

namespace dsink::aux {

struct FitOptions {
  OptimizerConfig opt;
  std::uint64_t seed = 0;
  // Added to the logits during training only (length C, or empty).
  Eigen::VectorXd logit_shift;
  double keep_fraction = 1.0;
  int warmup_epochs = 0;
};

struct FitResult {
  model::ClassifierParams params;
  // 1 for samples trained on in the last epoch.
  std::vector<std::uint8_t> last_kept;
};

/// Mini-batch SGD on cross-entropy against the observed labels, with
/// optional logit shift and small-loss selection.
FitResult fit_classifier(const data::Dataset& ds, const FitOptions& options);

/// Indices of the round(keep_fraction * N) smallest losses, ascending by
/// index. Ties in loss go to the lower index. Throws if that count is 0.
std::vector<std::size_t> small_loss_selection(const Eigen::VectorXd& losses, double keep_fraction);

/// tau * log(observed_count_c / N). Throws if a class has no observed label.
Eigen::VectorXd log_prior_shift(const data::Dataset& ds, double tau);

std::uint64_t fl_seed(const ExperimentConfig& cfg);
std::uint64_t fn_seed(const ExperimentConfig& cfg);

FitOptions fl_options(const data::Dataset& ds, const ExperimentConfig& cfg);
FitOptions fn_options(const data::Dataset& ds, const ExperimentConfig& cfg);

model::ClassifierParams train_fl(const data::Dataset& ds, const ExperimentConfig& cfg);
/// `last_kept`, if given, receives the final epoch's selection mask.
model::ClassifierParams train_fn(const data::Dataset& ds, const ExperimentConfig& cfg,
                                 std::vector<std::uint8_t>* last_kept = nullptr);

struct AuxPredictionCache {
  Eigen::MatrixXd fl_probs;  // C x N over the training set
  Eigen::MatrixXd fn_probs;
  std::uint32_t dataset_checksum = 0;
  std::string config_echo;

  /// Throws Error(kChecksum) unless this cache was built from `ds`.
  void verify_binding(const data::Dataset& ds) const;
};

bool operator==(const AuxPredictionCache& a, const AuxPredictionCache& b);

AuxPredictionCache cache_predictions(const model::ClassifierParams& fl,
                                     const model::ClassifierParams& fn, const data::Dataset& ds,
                                     std::string config_echo = {});

inline constexpr char kCacheMagic[4] = {'D', 'S', 'N', 'C'};
inline constexpr std::uint16_t kCacheFormatVersion = 1;

std::vector<std::uint8_t> serialize(const AuxPredictionCache& cache);
AuxPredictionCache deserialize_cache(std::span<const std::uint8_t> bytes,
                                     const std::string& what = "prediction cache");
void save_cache(const AuxPredictionCache& cache, const std::filesystem::path& path);
AuxPredictionCache load_cache(const std::filesystem::path& path);

}  // namespace dsink::aux
