#include <cmath>
#include <filesystem>
#include <functional>

#include <gtest/gtest.h>

#include "dsink/auxiliaries.hpp"
#include "dsink/error.hpp"
#include "dsink/eval_metrics.hpp"

using namespace dsink;
using namespace dsink::aux;

namespace {

ExperimentConfig small_config(double noise_ratio, double ir) {
  ExperimentConfig cfg;
  cfg.dataset.num_classes = 4;
  cfg.dataset.base_per_class = 150;
  cfg.dataset.imbalance_ratio = ir;
  cfg.dataset.noise_mode = noise_ratio > 0 ? data::NoiseMode::kSymmetric : data::NoiseMode::kNone;
  cfg.dataset.noise_ratio = noise_ratio;
  cfg.dataset.feature_dim = 6;
  cfg.dataset.class_separation = 4.0;
  cfg.dataset.seed = 3;
  cfg.aux.seed = 3;
  cfg.aux.opt.epochs = 20;
  cfg.aux.opt.schedule.epoch_scale = 20.0 / 300.0;
  return cfg;
}

FitOptions plain_ce(const ExperimentConfig& cfg) {
  FitOptions o;
  o.opt = cfg.aux.opt;
  o.seed = 99;
  return o;
}

double accuracy_gap(const model::ClassifierParams& p, const data::Dataset& train,
                    const data::Dataset& test) {
  const eval::EvalReport r =
      eval::evaluate(model::forward(p, test.features), test.true_labels, train.class_counts);
  return r.many_acc - r.few_acc;
}

}  // namespace

TEST(SmallLoss, SelectsLowestAscendingByIndex) {
  Eigen::VectorXd l(6);
  l << 0.5, 0.1, 0.9, 0.1, 0.3, 2.0;
  EXPECT_EQ(small_loss_selection(l, 0.5), (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_EQ(small_loss_selection(l, 1.0), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  // Ties in loss resolve to the lower index.
  EXPECT_EQ(small_loss_selection(l, 1.0 / 6.0), (std::vector<std::size_t>{1}));
  EXPECT_THROW(small_loss_selection(l, 0.01), Error);
}

TEST(LogPrior, ObservedFrequencies) {
  data::Dataset ds;
  ds.observed_labels = {0, 0, 0, 1};
  ds.true_labels = ds.observed_labels;
  ds.class_counts = {3, 1};
  const Eigen::VectorXd s = log_prior_shift(ds, 2.0);
  EXPECT_NEAR(s(0), 2.0 * std::log(0.75), 1e-15);
  EXPECT_NEAR(s(1), 2.0 * std::log(0.25), 1e-15);
  ds.class_counts = {4, 0, 0};
  ds.observed_labels = {0, 0, 0, 0};
  EXPECT_THROW(log_prior_shift(ds, 1.0), Error);
}

TEST(FitClassifier, KeepAllEqualsPlainCe) {
  const ExperimentConfig cfg = small_config(0.3, 3.0);
  const data::Dataset ds = data::generate(cfg.dataset);
  FitOptions ce = plain_ce(cfg);
  FitOptions keep = ce;
  keep.keep_fraction = 1.0;
  keep.warmup_epochs = 2;
  EXPECT_TRUE(fit_classifier(ds, ce).params == fit_classifier(ds, keep).params);

  FitOptions warm = ce;
  warm.keep_fraction = 0.5;
  warm.warmup_epochs = cfg.aux.opt.epochs;
  EXPECT_TRUE(fit_classifier(ds, ce).params == fit_classifier(ds, warm).params);
}

TEST(FitClassifier, Deterministic) {
  const ExperimentConfig cfg = small_config(0.3, 3.0);
  const data::Dataset ds = data::generate(cfg.dataset);
  EXPECT_TRUE(train_fn(ds, cfg) == train_fn(ds, cfg));
  EXPECT_TRUE(train_fl(ds, cfg) == train_fl(ds, cfg));
}

TEST(TrainFn, DiscardedSetEnrichedInNoise) {
  ExperimentConfig cfg = small_config(0.4, 10.0);
  cfg.dataset.num_classes = 10;
  cfg.dataset.base_per_class = 500;
  cfg.dataset.feature_dim = 16;
  cfg.dataset.class_separation = data::DatasetRecipe{}.class_separation;
  const data::Dataset ds = data::generate(cfg.dataset);
  std::vector<std::uint8_t> kept;
  train_fn(ds, cfg, &kept);
  ASSERT_EQ(kept.size(), ds.size());
  std::size_t discarded = 0, noisy_discarded = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (kept[i]) continue;
    ++discarded;
    noisy_discarded += ds.observed_labels[i] != ds.true_labels[i];
  }
  ASSERT_GT(discarded, 0u);
  const double frac = static_cast<double>(noisy_discarded) / static_cast<double>(discarded);
  EXPECT_GT(frac, data::measure_nr(ds));
}

TEST(TrainFl, NarrowsManyFewGapOnCleanImbalancedData) {
  ExperimentConfig cfg = small_config(0.0, 10.0);
  cfg.dataset.num_classes = 10;
  cfg.dataset.base_per_class = 500;
  cfg.dataset.feature_dim = 16;
  cfg.dataset.class_separation = data::DatasetRecipe{}.class_separation;
  const data::Dataset train = data::generate(cfg.dataset);
  const data::Dataset test = data::generate(cfg.dataset, data::Split::kTest);
  const model::ClassifierParams fl = train_fl(train, cfg);
  FitOptions ce = fl_options(train, cfg);
  ce.logit_shift = Eigen::VectorXd();
  const model::ClassifierParams base = fit_classifier(train, ce).params;
  EXPECT_LT(accuracy_gap(fl, train, test), accuracy_gap(base, train, test));
}

TEST(Cache, ColumnsAreDistributions) {
  const ExperimentConfig cfg = small_config(0.3, 3.0);
  const data::Dataset ds = data::generate(cfg.dataset);
  const AuxPredictionCache c = cache_predictions(train_fl(ds, cfg), train_fn(ds, cfg), ds);
  ASSERT_EQ(static_cast<std::size_t>(c.fl_probs.cols()), ds.size());
  EXPECT_LE((c.fl_probs.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_LE((c.fn_probs.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_EQ(c.dataset_checksum, data::checksum(ds));
}

TEST(Cache, RoundTripAndBinding) {
  const ExperimentConfig cfg = small_config(0.3, 3.0);
  const data::Dataset ds = data::generate(cfg.dataset);
  const AuxPredictionCache c =
      cache_predictions(train_fl(ds, cfg), train_fn(ds, cfg), ds, "aux.seed=3\n");
  const auto path = std::filesystem::temp_directory_path() / "dsink_test_cache.dsnc";
  save_cache(c, path);
  const AuxPredictionCache back = load_cache(path);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.config_echo, "aux.seed=3\n");
  EXPECT_NO_THROW(back.verify_binding(ds));

  ExperimentConfig other = cfg;
  other.dataset.seed = 4;
  try {
    back.verify_binding(data::generate(other.dataset));
    ADD_FAILURE() << "stale cache accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kChecksum);
  }

  auto bytes = serialize(c);
  bytes[bytes.size() / 3] ^= 0x10;
  try {
    deserialize_cache(bytes);
    ADD_FAILURE() << "corrupt cache accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kChecksum);
  }
}
