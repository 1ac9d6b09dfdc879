#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dsink/error.hpp"
#include "dsink/proxy_alloc.hpp"
#include "oracles.hpp"

using namespace dsink::proxy;
using dsink::ot::CostMatrix;
using dsink::ot::Marginals;

namespace {

Eigen::MatrixXd random_probs(Eigen::Index c, Eigen::Index n, std::mt19937_64& gen) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Eigen::MatrixXd m(c, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < c; ++i) m(i, j) = g(gen) + 1e-3;
    m.col(j) /= m.col(j).sum();
  }
  return m;
}

BatchPredictions random_batch(Eigen::Index c, Eigen::Index n, std::mt19937_64& gen) {
  return {random_probs(c, n, gen), random_probs(c, n, gen), random_probs(c, n, gen)};
}

BatchPredictions uniform_batch(Eigen::Index c, Eigen::Index n) {
  const Eigen::MatrixXd u = Eigen::MatrixXd::Constant(c, n, 1.0 / static_cast<double>(c));
  return {u, u, u};
}

// Independent double sum of KL(a_i || b_i) with the 1e-8 clamp on b.
double kl_sum(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (a(i, j) > 0) s += a(i, j) * (std::log(a(i, j)) - std::log(std::max(b(i, j), 1e-8)));
  return s;
}

}  // namespace

TEST(BuildCost, UniformColumns) {
  const CostMatrix cost = build_cost(uniform_batch(4, 3));
  for (Eigen::Index k = 0; k < cost.values().size(); ++k)
    EXPECT_NEAR(cost.values().data()[k], -2.0 * std::log(0.25), 1e-12);
}

TEST(BuildCost, ClampsZerosAndOnes) {
  BatchPredictions p;
  p.target = Eigen::MatrixXd(2, 1);
  p.target << 1.0, 0.0;
  p.noise_robust = p.target;
  p.noise_robust << 0.0, 1.0;
  p.imbalance_robust = Eigen::MatrixXd::Constant(2, 1, 0.5);
  const CostMatrix cost = build_cost(p);
  EXPECT_NEAR(cost.values()(0, 0), -std::log(1e-8) - 0.0, 1e-12);
  EXPECT_NEAR(cost.values()(1, 0), -std::log(1e-8), 1e-12);

  p.noise_robust = p.target;
  EXPECT_DOUBLE_EQ(build_cost(p).values()(0, 0), 0.0);
}

TEST(BuildCost, RejectsInvalidPredictions) {
  BatchPredictions p = uniform_batch(3, 2);
  p.target(0, 0) += 0.1;
  EXPECT_THROW(build_cost(p), dsink::Error);
  BatchPredictions q = uniform_batch(3, 2);
  q.noise_robust = Eigen::MatrixXd::Constant(3, 3, 1.0 / 3);
  EXPECT_THROW(build_cost(q), dsink::Error);
}

TEST(BuildMarginals, ColumnSums) {
  BatchPredictions p = uniform_batch(2, 2);
  p.imbalance_robust << 0.9, 0.5, 0.1, 0.5;
  const Marginals m = build_marginals(p);
  EXPECT_NEAR(m.row_target()(0), 1.4, 1e-15);
  EXPECT_NEAR(m.row_target()(1), 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(m.col_target()(0), 1.0);
  EXPECT_DOUBLE_EQ(m.col_target()(1), 1.0);

  const Marginals u = build_marginals(uniform_batch(5, 10));
  for (Eigen::Index c = 0; c < 5; ++c) EXPECT_NEAR(u.row_target()(c), 2.0, 1e-12);
}

TEST(AllocateProxies, SingleSampleBatchCopiesFl) {
  std::mt19937_64 gen(1);
  const BatchPredictions p = random_batch(4, 1, gen);
  const ProxyLabels q = allocate_proxies(p);
  EXPECT_LE((q.q - p.imbalance_robust).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AllocateProxies, UniformInputsGiveUniformQ) {
  const ProxyLabels q = allocate_proxies(uniform_batch(5, 7));
  EXPECT_LE((q.q.array() - 0.2).abs().maxCoeff(), 1e-12);
}

TEST(AllocateProxies, NearOneHotAgreementGivesNearIdentity) {
  BatchPredictions p;
  Eigen::MatrixXd m(2, 2);
  m << 0.98, 0.02, 0.02, 0.98;
  p.target = p.noise_robust = p.imbalance_robust = m;
  AllocateOptions o;
  o.iters = 10000;
  o.tol = 1e-12;
  const ProxyLabels q = allocate_proxies(p, o);
  // Reference: the oracle on the same normalized instance, scaled back by N_B.
  const auto ref = dsink::ot::ot_oracle(build_cost(p), build_marginals(p).normalized(), 2.0);
  EXPECT_LE((q.q - 2.0 * ref.values).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GT(q.q(0, 0), 0.9);
  EXPECT_GT(q.q(1, 1), 0.9);
}

TEST(AllocateProxies, TolModeMeetsConstraints) {
  std::mt19937_64 gen(2);
  const BatchPredictions p = random_batch(4, 8, gen);
  AllocateOptions o;
  o.iters = 100000;
  o.tol = 1e-6;
  const ProxyLabels q = allocate_proxies(p, o);
  EXPECT_LE(q.residual, 1e-6);
  const Eigen::VectorXd col = q.q.colwise().sum();
  const Eigen::VectorXd row = q.q.rowwise().sum();
  const Eigen::VectorXd fl = p.imbalance_robust.rowwise().sum();
  EXPECT_LE((col.array() - 1.0).abs().maxCoeff(), 1e-6);
  EXPECT_LE((row - fl).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(AllocateProxies, FixedCountDefaultsToFiftyIterations) {
  std::mt19937_64 gen(3);
  const ProxyLabels q = allocate_proxies(random_batch(3, 6, gen));
  EXPECT_EQ(q.iterations_used, 50);
}

TEST(AllocateProxies, PermutationEquivariant) {
  std::mt19937_64 gen(4);
  const BatchPredictions p = random_batch(3, 5, gen);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  BatchPredictions pp = p;
  for (int j = 0; j < 5; ++j) {
    pp.target.col(j) = p.target.col(perm[j]);
    pp.noise_robust.col(j) = p.noise_robust.col(perm[j]);
    pp.imbalance_robust.col(j) = p.imbalance_robust.col(perm[j]);
  }
  const ProxyLabels a = allocate_proxies(p);
  const ProxyLabels b = allocate_proxies(pp);
  for (int j = 0; j < 5; ++j) EXPECT_LE((b.q.col(j) - a.q.col(perm[j])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DsinkLoss, ZeroWhenEverythingAgrees) {
  std::mt19937_64 gen(5);
  const Eigen::MatrixXd f = random_probs(4, 6, gen);
  const BatchPredictions p{f, f, random_probs(4, 6, gen)};
  EXPECT_NEAR(dsink_loss_kl(f, p), 0.0, 1e-15);
  const BatchPredictions u = uniform_batch(3, 4);
  EXPECT_NEAR(dsink_loss_kl(u.target, u), 0.0, 1e-15);
}

TEST(DsinkLoss, KlAndOtFormsAgree) {
  std::mt19937_64 gen(6);
  const BatchPredictions p = random_batch(5, 9, gen);
  const ProxyLabels q = allocate_proxies(p);
  const double kl = dsink_loss_kl(q.q, p);
  const double ot = dsink_loss_ot(q.q, build_cost(p));
  EXPECT_NEAR(kl, ot, 1e-9 * std::abs(kl));
}

TEST(DsinkLoss, UniformTwoClassOtForm) {
  const BatchPredictions u = uniform_batch(2, 3);
  const CostMatrix cost = build_cost(u);
  // <Q, P> per sample = 2 log 2, entropy term = -2 log 2.
  EXPECT_NEAR(dsink_loss_ot(u.target, cost), 0.0, 1e-14);
}

TEST(DsinkLoss, OtFormRejectsNonpositiveQ) {
  const BatchPredictions u = uniform_batch(2, 2);
  Eigen::MatrixXd q = u.target;
  q(0, 0) = 0.0;
  EXPECT_THROW(dsink_loss_ot(q, build_cost(u)), dsink::Error);
}

TEST(DsinkLoss, ProxyBeatsSampledFeasiblePlans) {
  std::mt19937_64 gen(7);
  const BatchPredictions p = random_batch(3, 4, gen);
  AllocateOptions o;
  o.iters = 100000;
  o.tol = 1e-12;
  const ProxyLabels q = allocate_proxies(p, o);
  const double best = dsink_loss_kl(q.q, p);
  const Marginals m = build_marginals(p);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto sample = dsink::oracle::feasible_plan_sample(m, s);
    EXPECT_LE(best, dsink_loss_kl(sample.values, p) + 1e-12);
  }
}

TEST(NaiveDistill, ZeroWhenTeachersMatch) {
  std::mt19937_64 gen(8);
  const Eigen::MatrixXd f = random_probs(4, 5, gen);
  EXPECT_NEAR(naive_distill_loss({f, f, f}), 0.0, 1e-15);
}

TEST(NaiveDistill, OneHotTeachersUniformStudent) {
  const int c = 4;
  BatchPredictions p = uniform_batch(c, 3);
  p.noise_robust.setZero();
  p.noise_robust.row(1).setOnes();
  p.imbalance_robust = p.noise_robust;
  EXPECT_NEAR(naive_distill_loss(p), 2.0 * std::log(static_cast<double>(c)), 1e-12);
}

TEST(NaiveDistill, MatchesDirectSum) {
  std::mt19937_64 gen(9);
  const BatchPredictions p = random_batch(6, 11, gen);
  const double ref = (kl_sum(p.imbalance_robust, p.target) + kl_sum(p.noise_robust, p.target)) / 11;
  EXPECT_NEAR(naive_distill_loss(p), ref, 1e-12);
}
