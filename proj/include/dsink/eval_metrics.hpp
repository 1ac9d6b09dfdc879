#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsink/synth_data.hpp"

namespace dsink::eval {

/// Classes partitioned by descending training frequency: top 30% many,
/// bottom 30% few, the rest medium. Ties are broken by class index.
struct ClassSplits {
  std::vector<int> many;
  std::vector<int> medium;
  std::vector<int> few;
};

ClassSplits split_classes(std::span<const std::size_t> class_counts);

struct EvalReport {
  std::string arm;
  std::uint64_t seed = 0;
  std::string recipe;  // compact, comma-free echo of the dataset recipe
  double overall_acc = 0.0;  // percent
  double many_acc = 0.0;
  double medium_acc = 0.0;
  double few_acc = 0.0;
  double macro_f1 = 0.0;    // [0, 1]
  double macro_auc = 0.0;   // [0, 1]
  double noise_correction_rate = 0.0;  // [0, 1]; NaN when not measured
  std::string log_file;     // per-epoch log this row came from, may be empty
  std::vector<double> per_class_acc;  // percent; not serialized
};

/// Argmax per column; ties go to the lowest class index.
std::vector<std::uint32_t> predict_labels(const Eigen::MatrixXd& probs);

/// Scores a C x N probability matrix against clean labels. `train_counts`
/// defines the many/medium/few partition.
EvalReport evaluate(const Eigen::MatrixXd& probs, std::span<const std::uint32_t> true_labels,
                    std::span<const std::size_t> train_counts);

/// ROC AUC of `scores` for the positive set via the Mann-Whitney rank
/// statistic with average ranks (ties count 1/2). NaN if either class is
/// empty.
double rank_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// Among training samples whose observed label is wrong, the fraction whose
/// argmax prediction equals the true label. Throws if there are none.
double noise_correction_rate(const Eigen::MatrixXd& probs, const data::Dataset& ds);

/// Compact single-field description, e.g. "C=10;IR=10;noise=symmetric;NR=0.4;...".
std::string recipe_tag(const data::DatasetRecipe& recipe);

// Results table: header line then one row per report, fixed column order:
// arm,seed,overall_acc,many_acc,medium_acc,few_acc,macro_f1,macro_auc,
// noise_correction_rate,recipe,log_file
std::string csv_header();
std::string to_csv_row(const EvalReport& report);
/// Throws Error(kIo) naming `line_no` on a malformed row.
EvalReport parse_csv_row(const std::string& line, std::size_t line_no);

/// Appends one row, writing the header first if the file is new or empty.
void append_report(const std::filesystem::path& path, const EvalReport& report);
std::vector<EvalReport> read_reports(const std::filesystem::path& path);

}  // namespace dsink::eval
