#pragma once

// Synthetic long-tailed, label-noisy classification data.
//
// Features are isotropic unit-variance Gaussian clusters whose means sit on
// random orthogonal directions, pairwise `class_separation` apart. Training
// class sizes decay exponentially from `base_per_class` down to
// `base_per_class / imbalance_ratio`; observed labels are the true labels
// corrupted by symmetric or asymmetric noise. The test split is balanced
// and clean.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dsink::data {

enum class NoiseMode : std::uint8_t { kNone = 0, kSymmetric = 1, kAsymmetric = 2 };
enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };

std::string_view to_string(NoiseMode mode);
NoiseMode noise_mode_from_string(std::string_view s);

struct DatasetRecipe {
  int num_classes = 10;
  int base_per_class = 500;
  double imbalance_ratio = 10.0;
  NoiseMode noise_mode = NoiseMode::kSymmetric;
  double noise_ratio = 0.4;
  int feature_dim = 16;
  double class_separation = 5.0;  // ~95% balanced clean linear accuracy at d=16, C=10
  std::uint64_t seed = 0;
  int test_per_class = 100;

  /// Throws Error(kConfig) naming the offending field.
  void validate() const;

  /// Newline-separated key=value lines; doubles in shortest round-trip form.
  std::string echo() const;
  static DatasetRecipe from_echo(std::string_view text);

  friend bool operator==(const DatasetRecipe&, const DatasetRecipe&) = default;
};

struct Dataset {
  Eigen::MatrixXd features;  // d x N, one column per sample
  std::vector<std::uint32_t> observed_labels;
  std::vector<std::uint32_t> true_labels;  // hidden from training code paths
  std::vector<std::size_t> class_counts;   // of true_labels
  Split split = Split::kTrain;
  DatasetRecipe recipe;

  std::size_t size() const noexcept { return true_labels.size(); }
  int num_classes() const noexcept { return static_cast<int>(class_counts.size()); }
  int feature_dim() const noexcept { return static_cast<int>(features.rows()); }
};

/// Field-for-field equality (features compared bitwise).
bool operator==(const Dataset& a, const Dataset& b);

/// counts[c] = max(1, round_half_up(base * IR^(-c / (C - 1)))).
std::vector<std::size_t> sample_longtail_counts(const DatasetRecipe& recipe);

/// Deterministic in (recipe, split). Both splits share cluster geometry.
Dataset generate(const DatasetRecipe& recipe, Split split = Split::kTrain);

/// Corrupts exactly round(ratio * N) labels, chosen uniformly at random.
/// Symmetric: the new label is uniform over the other C - 1 classes.
/// Asymmetric: c -> (c + 1) mod C.
std::vector<std::uint32_t> inject_noise(std::span<const std::uint32_t> labels, NoiseMode mode,
                                        double ratio, int num_classes, std::uint64_t seed);

/// Fraction of samples whose observed label differs from the true label.
double measure_nr(const Dataset& ds);
/// max over min per-class count of the true labels. Throws on an empty class.
double measure_ir(const Dataset& ds);

/// Per-class counts of the observed labels.
std::vector<std::size_t> observed_counts(const Dataset& ds);

inline constexpr char kDatasetMagic[4] = {'D', 'S', 'N', 'K'};
inline constexpr std::uint16_t kDatasetFormatVersion = 1;

std::vector<std::uint8_t> serialize(const Dataset& ds);
Dataset deserialize(std::span<const std::uint8_t> bytes, const std::string& what = "dataset");

void save(const Dataset& ds, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

/// CRC32 of the serialized file; binds prediction caches to a dataset.
std::uint32_t checksum(const Dataset& ds);

}  // namespace dsink::data
