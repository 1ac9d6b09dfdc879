#pragma once

// Target-model training for every comparison arm.
//
// Each mini-batch of the dsink arms runs two steps: with f fixed, allocate
// proxy labels Q from (f, f_N, f_L); with Q fixed, take one SGD step on
//
//   CE(f, observed labels) + alpha * (1/N_B) sum_i KL(q_i || f(x_i)).
//
// The KL(q || f_N) half of the allocation objective does not depend on f and
// contributes no gradient. The cost matrix is not differentiated through.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsink/auxiliaries.hpp"
#include "dsink/config.hpp"
#include "dsink/eval_metrics.hpp"
#include "dsink/models.hpp"
#include "dsink/synth_data.hpp"

namespace dsink::train {

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double base_loss = 0.0;   // sample-weighted mean CE on observed labels; NaN if not trained on
  double dsink_loss = 0.0;  // mean distillation loss of the arm; NaN for ce
  double test_acc = 0.0;    // percent; NaN without a test set
  double noise_correction_rate = 0.0;  // NaN without noisy samples
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::string checkpoint;  // where the final parameters were written, if anywhere
};

bool operator==(const EpochRecord& a, const EpochRecord& b);  // bitwise on doubles

/// Columns: epoch,lr,base_loss,dsink_loss,test_acc,noise_correction_rate
std::string log_csv_header();
std::string to_csv(const TrainingLog& log);
TrainingLog parse_log_csv(std::string_view text, const std::string& origin);
void save_log(const TrainingLog& log, const std::filesystem::path& path);
TrainingLog load_log(const std::filesystem::path& path);

struct TrainResult {
  model::ClassifierParams params;
  TrainingLog log;
};

/// Trains the target model for cfg.train.arm, which must be one of ce,
/// dsink, naive_distill, dsink_no_base, dsink_no_fl. `test` may be null.
/// Throws Error(kChecksum) if `cache` is not bound to `ds` and
/// Error(kNumerical) naming epoch and batch on a nonfinite loss.
TrainResult train_arm(const data::Dataset& ds, const aux::AuxPredictionCache& cache,
                      const ExperimentConfig& cfg, const data::Dataset* test = nullptr);

/// train_arm with the arm forced to dsink.
TrainResult train_dsink(const data::Dataset& ds, const aux::AuxPredictionCache& cache,
                        const ExperimentConfig& cfg, const data::Dataset* test = nullptr);

bool is_trainable(Arm arm);

struct AuxModels {
  model::ClassifierParams fl;
  model::ClassifierParams fn;
};

struct ArmOutcome {
  std::optional<model::ClassifierParams> params;  // empty for evaluation-only arms
  TrainingLog log;
  Eigen::MatrixXd train_probs;
  Eigen::MatrixXd test_probs;
  eval::EvalReport report;
};

/// Runs any arm and evaluates it. fl, fn and ensemble need `aux_models`
/// (ensemble averages the two auxiliaries' probabilities; fl and fn report
/// an auxiliary on its own) and update no parameters.
ArmOutcome run_arm(const data::Dataset& train, const data::Dataset& test,
                   const aux::AuxPredictionCache& cache, const AuxModels* aux_models,
                   const ExperimentConfig& cfg);

}  // namespace dsink::train
