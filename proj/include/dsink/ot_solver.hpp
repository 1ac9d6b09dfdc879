#pragma once

// Entropically regularized optimal transport.
//
// Solves   min_P <P, M> + lambda * sum_ij P_ij log P_ij
//          s.t. P 1 = r,  P^T 1 = c,  P >= 0
// whose optimum has the scaling form P = diag(u) K diag(v), K = exp(-M / lambda).

#include <optional>

#include <Eigen/Dense>

namespace dsink::ot {

/// Finite C x N cost grid. Construction rejects NaN and infinities.
class CostMatrix {
 public:
  explicit CostMatrix(Eigen::MatrixXd values);

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  Eigen::Index rows() const noexcept { return values_.rows(); }
  Eigen::Index cols() const noexcept { return values_.cols(); }

 private:
  Eigen::MatrixXd values_;
};

/// Row and column targets of a transport problem. Entries must be
/// nonnegative and the two totals must agree within 1e-9 relative; exact
/// zeros are lifted to a tiny floor so the entropic plan stays interior.
class Marginals {
 public:
  static constexpr double kBalanceRelTol = 1e-9;
  static constexpr double kEntryFloor = 1e-12;

  Marginals(Eigen::VectorXd row_target, Eigen::VectorXd col_target);

  const Eigen::VectorXd& row_target() const noexcept { return row_; }
  const Eigen::VectorXd& col_target() const noexcept { return col_; }
  Eigen::Index rows() const noexcept { return row_.size(); }
  Eigen::Index cols() const noexcept { return col_.size(); }

  /// Total mass (row side).
  double mass() const noexcept { return row_.sum(); }

  /// Same shape, both sides rescaled to unit total mass.
  Marginals normalized() const;

 private:
  Eigen::VectorXd row_;
  Eigen::VectorXd col_;
};

struct ScalingState {
  Eigen::VectorXd u;  // length C
  Eigen::VectorXd v;  // length N
};

struct TransportPlan {
  Eigen::MatrixXd values;
  ScalingState scaling;
  int iterations_used = 0;
  double residual = 0.0;  // L1 row + column marginal violation
};

enum class KernelDomain {
  kAuto,    // log domain when lambda < kLogDomainThreshold
  kPrimal,  // multiply by K = exp(-M / lambda) directly
  kLog,     // stabilized log-sum-exp updates on log u, log v
};

inline constexpr double kLogDomainThreshold = 0.5;

struct SinkhornOptions {
  double lambda = 1.0;
  int max_iters = 1000;
  // Stop once the L1 residual is <= tol. tol = 0 runs exactly max_iters.
  double tol = 1e-6;
  KernelDomain domain = KernelDomain::kAuto;
  // Starting scaling vectors; defaults to u = 1/C, v = 1/N.
  std::optional<ScalingState> init;
};

/// Sinkhorn-Knopp scaling. Each iteration updates u, then v.
///
/// Throws Error(kInvalidArgument) for shape mismatch, lambda <= 0 or
/// max_iters < 1, and Error(kNumerical) if a scaling entry becomes
/// nonfinite or zero.
TransportPlan sinkhorn_solve(const CostMatrix& cost, const Marginals& marg,
                             const SinkhornOptions& options);

TransportPlan sinkhorn_solve(const CostMatrix& cost, const Marginals& marg, double lambda,
                             int max_iters, double tol);

/// ||P 1 - r||_1 + ||P^T 1 - c||_1.
double marginal_residual(const Eigen::MatrixXd& plan, const Marginals& marg);

/// <P, M> + lambda * sum P log P, with 0 log 0 = 0.
double entropic_objective(const Eigen::MatrixXd& plan, const CostMatrix& cost, double lambda);

/// Reference solver for small instances (C * N <= kOracleMaxEntries).
///
/// Maximizes the concave dual over the potentials (f, g) with damped Newton
/// steps, then reads the plan off P_ij = exp((f_i + g_j - M_ij) / lambda).
/// Shares no code with sinkhorn_solve. Converges to residual <= 1e-10 or
/// throws Error(kNumerical).
TransportPlan ot_oracle(const CostMatrix& cost, const Marginals& marg, double lambda);

inline constexpr Eigen::Index kOracleMaxEntries = 64;

}  // namespace dsink::ot
