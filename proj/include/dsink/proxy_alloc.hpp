#pragma once

// Proxy-label allocation for one mini-batch.
//
// The proxy labels Q (C x N_B, column-stochastic) stay close per sample to
// the noise-robust teacher f_N and the target model f, while their class
// totals Q 1 are pinned to the batch-aggregated prediction of the
// imbalance-robust teacher f_L. The allocation problem is entropic OT with
// cost P = -log f_N - log f and entropy weight 2.

#include <cstdint>

#include <Eigen/Dense>

#include "dsink/ot_solver.hpp"

namespace dsink::proxy {

/// Lower clamp applied to every probability before a log.
inline constexpr double kProbFloor = 1e-8;
/// Entropy weight of the allocation problem (one unit per KL term).
inline constexpr double kEntropyWeight = 2.0;
inline constexpr int kDefaultSinkhornIters = 50;

/// Column-stochastic C x N_B predictions of the three models on one batch.
struct BatchPredictions {
  Eigen::MatrixXd target;            // f
  Eigen::MatrixXd noise_robust;      // f_N
  Eigen::MatrixXd imbalance_robust;  // f_L

  Eigen::Index num_classes() const noexcept { return target.rows(); }
  Eigen::Index batch_size() const noexcept { return target.cols(); }

  /// Throws Error(kInvalidArgument) on shape mismatch or a column that is
  /// not a probability vector within 1e-9.
  void validate() const;
};

struct ProxyLabels {
  Eigen::MatrixXd q;
  std::int64_t batch_id = -1;
  int iterations_used = 0;
  // L1 marginal violation measured against the unnormalized targets
  // (row: sum of f_L columns, column: all ones).
  double residual = 0.0;
};

struct AllocateOptions {
  int iters = kDefaultSinkhornIters;
  // 0 keeps the fixed iteration count; > 0 stops once the residual of Q is
  // at most tol.
  double tol = 0.0;
  // Entropy weight handed to the solver. The two-KL objective fixes it at 2;
  // other values are for experiments only.
  double lambda = kEntropyWeight;
  std::int64_t batch_id = -1;
};

/// cost(c, i) = -log(max(f_N, eps)) - log(max(f, eps)).
ot::CostMatrix build_cost(const BatchPredictions& preds);

/// Row target = sum over the batch of f_L columns (total mass N_B);
/// column target = all ones.
ot::Marginals build_marginals(const BatchPredictions& preds);

/// Q = N_B * sinkhorn plan of (build_cost, build_marginals / N_B) at
/// options.lambda (2), starting from u = 1/C, v = 1/N_B.
ProxyLabels allocate_proxies(const BatchPredictions& preds, const AllocateOptions& options);
ProxyLabels allocate_proxies(const BatchPredictions& preds, int iters = kDefaultSinkhornIters);

/// (1/N_B) sum_i [ KL(q_i || f_N(x_i)) + KL(q_i || f(x_i)) ].
double dsink_loss_kl(const Eigen::MatrixXd& q, const BatchPredictions& preds);

/// (1/N_B) ( <Q, P> + 2 sum q log q ). Requires q > 0 entrywise.
double dsink_loss_ot(const Eigen::MatrixXd& q, const ot::CostMatrix& cost);

/// Equal-weight two-teacher distillation, averaged over the batch:
/// (1/N_B) sum_i [ KL(f_L(x_i) || f(x_i)) + KL(f_N(x_i) || f(x_i)) ].
double naive_distill_loss(const BatchPredictions& preds);

/// sum_c p_c (log p_c - log max(q_c, eps)), with 0 log 0 = 0.
double kl_divergence(const Eigen::Ref<const Eigen::VectorXd>& p,
                     const Eigen::Ref<const Eigen::VectorXd>& q);

}  // namespace dsink::proxy
