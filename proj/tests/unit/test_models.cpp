#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "dsink/error.hpp"
#include "dsink/models.hpp"
#include "oracles.hpp"

using namespace dsink::model;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen,
                              double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(gen);
  return m;
}

Eigen::MatrixXd random_probs(Eigen::Index c, Eigen::Index n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::MatrixXd m(c, n);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(gen);
  for (Eigen::Index j = 0; j < n; ++j) m.col(j) /= m.col(j).sum();
  return m;
}

std::vector<std::uint32_t> random_labels(std::size_t n, int c, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> u(0, c - 1);
  std::vector<std::uint32_t> y(n);
  for (auto& v : y) v = static_cast<std::uint32_t>(u(gen));
  return y;
}

// Biases start at zero; perturb them so their gradients are exercised too.
ClassifierParams random_params(Architecture arch, int d, int c, std::uint64_t seed) {
  ClassifierParams p = init_params(arch, d, c, arch == Architecture::kMlp1 ? 7 : 0, seed);
  std::mt19937_64 gen(seed ^ 0x9e37u);
  for (auto& l : p.layers) l.bias = random_matrix(l.bias.size(), 1, gen, 0.3);
  return p;
}

double relative_error(const GradientBuffer& a, const GradientBuffer& b) {
  const Eigen::VectorXd x = flatten(a.layers);
  const Eigen::VectorXd y = flatten(b.layers);
  const double denom = std::max({x.norm(), y.norm(), 1e-12});
  return (x - y).norm() / denom;
}

// Loss evaluated from probabilities only, written against the forward pass.
double mean_ce_from_probs(const Eigen::MatrixXd& p, std::span<const std::uint32_t> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s -= std::log(p(y[i], static_cast<Eigen::Index>(i)));
  return s / static_cast<double>(y.size());
}

double mean_kl_from_probs(const Eigen::MatrixXd& t, const Eigen::MatrixXd& p) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < t.size(); ++k)
    if (t.data()[k] > 0) s += t.data()[k] * (std::log(t.data()[k]) - std::log(p.data()[k]));
  return s / static_cast<double>(t.cols());
}

class GradientCheck : public ::testing::TestWithParam<Architecture> {};

}  // namespace

TEST(Forward, ZeroWeightsGiveUniform) {
  ClassifierParams p = init_params(Architecture::kLinear, 3, 4, 0, 1);
  for (auto& l : p.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  std::mt19937_64 gen(1);
  const Eigen::MatrixXd probs = forward(p, random_matrix(3, 5, gen));
  EXPECT_LE((probs.array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(Forward, LargeWeightSaturates) {
  ClassifierParams p = init_params(Architecture::kLinear, 2, 3, 0, 1);
  p.layers[0].weight.setZero();
  p.layers[0].weight(1, 0) = 100.0;
  Eigen::MatrixXd x(2, 1);
  x << 1.0, 0.0;
  EXPECT_GT(forward(p, x)(1, 0), 1.0 - 1e-12);
}

TEST(Forward, ColumnsSumToOne) {
  std::mt19937_64 gen(2);
  for (Architecture a : {Architecture::kLinear, Architecture::kMlp1}) {
    const ClassifierParams p = random_params(a, 6, 5, 3);
    const Eigen::MatrixXd probs = forward(p, random_matrix(6, 20, gen, 3.0));
    EXPECT_LE((probs.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_GT(probs.minCoeff(), 0.0);
  }
}

TEST(Forward, RejectsBadInput) {
  const ClassifierParams p = random_params(Architecture::kLinear, 3, 2, 1);
  EXPECT_THROW(forward(p, Eigen::MatrixXd::Zero(4, 2)), dsink::Error);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
  x(0, 0) = std::nan("");
  EXPECT_THROW(forward(p, x), dsink::Error);
}

TEST(Forward, LogitShiftAddsToLogits) {
  std::mt19937_64 gen(3);
  const ClassifierParams p = random_params(Architecture::kLinear, 4, 3, 5);
  const Eigen::MatrixXd x = random_matrix(4, 6, gen);
  Eigen::VectorXd shift(3);
  shift << 0.5, -1.0, 2.0;
  const ForwardCache plain = forward_cached(p, x);
  const ForwardCache shifted = forward_cached(p, x, shift);
  EXPECT_LE((shifted.logits - (plain.logits.colwise() + shift)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CeLoss, UniformOutputsHardTargetGiveLogC) {
  ClassifierParams p = init_params(Architecture::kLinear, 3, 5, 0, 1);
  p.layers[0].weight.setZero();
  std::mt19937_64 gen(4);
  const auto y = random_labels(7, 5, gen);
  EXPECT_NEAR(ce_loss_grad(p, random_matrix(3, 7, gen), y).loss, std::log(5.0), 1e-14);
}

TEST(CeLoss, SoftTargetsEqualToOutputs) {
  std::mt19937_64 gen(5);
  const ClassifierParams p = random_params(Architecture::kLinear, 4, 3, 2);
  const Eigen::MatrixXd x = random_matrix(4, 8, gen);
  const Eigen::MatrixXd f = forward(p, x);
  const LossGrad lg = ce_loss_grad(p, x, f);
  const double entropy = -(f.array() * f.array().log()).sum() / 8.0;
  EXPECT_NEAR(lg.loss, entropy, 1e-12);
  EXPECT_LE(flatten(lg.grad.layers).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KlLoss, ZeroWhenTargetsMatch) {
  std::mt19937_64 gen(6);
  const ClassifierParams p = random_params(Architecture::kMlp1, 4, 3, 2);
  const Eigen::MatrixXd x = random_matrix(4, 8, gen);
  const LossGrad lg = kl_to_target_grad(p, x, forward(p, x));
  EXPECT_NEAR(lg.loss, 0.0, 1e-14);
  EXPECT_LE(flatten(lg.grad.layers).cwiseAbs().maxCoeff(), 1e-14);

  ClassifierParams z = init_params(Architecture::kLinear, 4, 3, 0, 1);
  z.layers[0].weight.setZero();
  EXPECT_NEAR(kl_to_target_grad(z, x, Eigen::MatrixXd::Constant(3, 8, 1.0 / 3)).loss, 0.0, 1e-15);
}

TEST(KlLoss, SoftCeMinusTargetEntropy) {
  std::mt19937_64 gen(7);
  const ClassifierParams p = random_params(Architecture::kLinear, 4, 6, 8);
  const Eigen::MatrixXd x = random_matrix(4, 9, gen);
  const Eigen::MatrixXd t = random_probs(6, 9, gen);
  const double ent = -(t.array() * t.array().log()).sum() / 9.0;
  const LossGrad kl = kl_to_target_grad(p, x, t);
  const LossGrad ce = ce_loss_grad(p, x, t);
  EXPECT_NEAR(kl.loss, ce.loss - ent, 1e-12);
  EXPECT_LE(relative_error(kl.grad, ce.grad), 1e-12);
}

TEST_P(GradientCheck, HardLabelCeMatchesFiniteDifferences) {
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    std::mt19937_64 gen(100 + inst);
    const int d = 3 + static_cast<int>(inst % 4);
    const int c = 2 + static_cast<int>(inst % 5);
    const ClassifierParams p = random_params(GetParam(), d, c, inst);
    const Eigen::MatrixXd x = random_matrix(d, 6, gen);
    const auto y = random_labels(6, c, gen);
    Eigen::VectorXd shift;
    if (inst % 2) shift = random_matrix(c, 1, gen);
    const LossGrad lg = ce_loss_grad(p, x, y, shift);
    const GradientBuffer fd = dsink::oracle::fd_gradient(
        [&](const ClassifierParams& q) {
          const Eigen::MatrixXd probs = forward_cached(q, x, shift).probs;
          return mean_ce_from_probs(probs, y);
        },
        p, 1e-5);
    EXPECT_LE(relative_error(lg.grad, fd), 1e-4) << "instance " << inst;
  }
}

TEST_P(GradientCheck, KlToTargetMatchesFiniteDifferences) {
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    std::mt19937_64 gen(200 + inst);
    const int d = 2 + static_cast<int>(inst % 5);
    const int c = 2 + static_cast<int>(inst % 4);
    const ClassifierParams p = random_params(GetParam(), d, c, 50 + inst);
    const Eigen::MatrixXd x = random_matrix(d, 5, gen);
    const Eigen::MatrixXd t = random_probs(c, 5, gen);
    const LossGrad lg = kl_to_target_grad(p, x, t);
    const GradientBuffer fd = dsink::oracle::fd_gradient(
        [&](const ClassifierParams& q) { return mean_kl_from_probs(t, forward(q, x)); }, p, 1e-5);
    EXPECT_LE(relative_error(lg.grad, fd), 1e-4) << "instance " << inst;
  }
}

INSTANTIATE_TEST_SUITE_P(Architectures, GradientCheck,
                         ::testing::Values(Architecture::kLinear, Architecture::kMlp1),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Sgd, ZeroGradientZeroDecayIsNoop) {
  ClassifierParams p = random_params(Architecture::kMlp1, 3, 3, 1);
  const ClassifierParams before = p;
  GradientBuffer v = GradientBuffer::zeros_like(p);
  sgd_step(p, GradientBuffer::zeros_like(p), {0.1, 0.9, 0.0}, v);
  EXPECT_TRUE(p == before);
}

TEST(Sgd, FirstStepFromZeroVelocity) {
  std::mt19937_64 gen(9);
  ClassifierParams p = random_params(Architecture::kLinear, 3, 2, 4);
  const ClassifierParams before = p;
  GradientBuffer g = GradientBuffer::zeros_like(p);
  for (auto& l : g.layers) {
    l.weight = random_matrix(l.weight.rows(), l.weight.cols(), gen);
    l.bias = random_matrix(l.bias.size(), 1, gen);
  }
  GradientBuffer v = GradientBuffer::zeros_like(p);
  const SgdHyper h{0.05, 0.9, 1e-3};
  sgd_step(p, g, h, v);
  const Eigen::VectorXd expect =
      flatten(before.layers) - h.lr * (flatten(g.layers) + h.weight_decay * flatten(before.layers));
  EXPECT_LE((flatten(p.layers) - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sgd, ConvexQuadraticDecreasesMonotonically) {
  // Loss 0.5 ||theta - target||^2 with gradient theta - target.
  ClassifierParams p = random_params(Architecture::kLinear, 4, 3, 6);
  std::mt19937_64 gen(10);
  const Eigen::VectorXd target = random_matrix(flatten(p.layers).size(), 1, gen);
  auto loss = [&] { return 0.5 * (flatten(p.layers) - target).squaredNorm(); };
  GradientBuffer v = GradientBuffer::zeros_like(p);
  const SgdHyper h{0.05, 0.5, 0.0};
  double prev = loss();
  for (int step = 0; step < 100; ++step) {
    GradientBuffer g = GradientBuffer::zeros_like(p);
    unflatten(flatten(p.layers) - target, g.layers);
    sgd_step(p, g, h, v);
    const double now = loss();
    if (step >= 5) EXPECT_LT(now, prev) << step;
    prev = now;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(LrSchedule, StepDecayAtScaledEpochs) {
  LrSchedule s;
  s.initial = 0.1;
  EXPECT_DOUBLE_EQ(s.at(0), 0.1);
  EXPECT_DOUBLE_EQ(s.at(99), 0.1);
  EXPECT_NEAR(s.at(100), 0.01, 1e-15);
  EXPECT_NEAR(s.at(149), 0.01, 1e-15);
  EXPECT_NEAR(s.at(150), 0.001, 1e-16);
  EXPECT_NEAR(s.at(299), 1e-5, 1e-19);
  s.epoch_scale = 0.1;
  EXPECT_DOUBLE_EQ(s.at(9), 0.1);
  EXPECT_NEAR(s.at(10), 0.01, 1e-15);
  EXPECT_NEAR(s.at(15), 0.001, 1e-16);
}

TEST(PerSampleCe, MatchesForward) {
  std::mt19937_64 gen(11);
  const ClassifierParams p = random_params(Architecture::kMlp1, 3, 4, 9);
  const Eigen::MatrixXd x = random_matrix(3, 10, gen);
  const auto y = random_labels(10, 4, gen);
  const Eigen::VectorXd l = per_sample_ce(p, x, y);
  const Eigen::MatrixXd f = forward(p, x);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(l(i), -std::log(f(y[i], i)), 1e-12);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const ClassifierParams p = random_params(Architecture::kMlp1, 5, 3, 12);
  const auto path = std::filesystem::temp_directory_path() / "dsink_test_models.ckpt";
  save_checkpoint(p, path);
  EXPECT_TRUE(load_checkpoint(path) == p);
  auto bytes = serialize(p);
  bytes[bytes.size() / 2] ^= 1;
  try {
    deserialize_params(bytes);
    ADD_FAILURE() << "corrupt checkpoint accepted";
  } catch (const dsink::Error& e) {
    EXPECT_EQ(e.kind(), dsink::ErrorKind::kChecksum);
  }
}
