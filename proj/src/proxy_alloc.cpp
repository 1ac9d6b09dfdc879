#include "dsink/proxy_alloc.hpp"

#include <cmath>
#include <string>

#include "dsink/error.hpp"

namespace dsink::proxy {

namespace {

constexpr double kColumnSumTol = 1e-9;

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, message);
}

void check_column_stochastic(const Eigen::MatrixXd& m, const char* name) {
  require(m.allFinite(), std::string(name) + " contains a nonfinite entry");
  require(m.size() == 0 || m.minCoeff() >= 0.0, std::string(name) + " has a negative entry");
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    const double s = m.col(i).sum();
    if (std::abs(s - 1.0) > kColumnSumTol) {
      throw Error(ErrorKind::kInvalidArgument, std::string(name) + " column " + std::to_string(i) +
                                                   " sums to " + std::to_string(s));
    }
  }
}

double clamped_log(double p) { return std::log(std::min(std::max(p, kProbFloor), 1.0)); }

}  // namespace

void BatchPredictions::validate() const {
  require(target.rows() > 0 && target.cols() > 0, "batch predictions are empty");
  require(noise_robust.rows() == target.rows() && noise_robust.cols() == target.cols() &&
              imbalance_robust.rows() == target.rows() &&
              imbalance_robust.cols() == target.cols(),
          "batch prediction matrices differ in shape");
  check_column_stochastic(target, "target predictions");
  check_column_stochastic(noise_robust, "noise-robust predictions");
  check_column_stochastic(imbalance_robust, "imbalance-robust predictions");
}

double kl_divergence(const Eigen::Ref<const Eigen::VectorXd>& p,
                     const Eigen::Ref<const Eigen::VectorXd>& q) {
  require(p.size() == q.size(), "kl_divergence: length mismatch");
  double kl = 0.0;
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    if (p(c) > 0.0) kl += p(c) * (std::log(p(c)) - clamped_log(q(c)));
  }
  return kl;
}

ot::CostMatrix build_cost(const BatchPredictions& preds) {
  preds.validate();
  Eigen::MatrixXd cost(preds.num_classes(), preds.batch_size());
  for (Eigen::Index i = 0; i < cost.cols(); ++i)
    for (Eigen::Index c = 0; c < cost.rows(); ++c)
      cost(c, i) = -clamped_log(preds.noise_robust(c, i)) - clamped_log(preds.target(c, i));
  return ot::CostMatrix(std::move(cost));
}

ot::Marginals build_marginals(const BatchPredictions& preds) {
  preds.validate();
  const auto n = static_cast<double>(preds.batch_size());
  Eigen::VectorXd row = preds.imbalance_robust.rowwise().sum();
  // Columns sum to 1 only within 1e-9; pin the total to exactly N_B.
  row *= n / row.sum();
  return ot::Marginals(std::move(row), Eigen::VectorXd::Ones(preds.batch_size()));
}

ProxyLabels allocate_proxies(const BatchPredictions& preds, const AllocateOptions& options) {
  require(options.iters >= 1, "allocate_proxies: iters must be at least 1");
  require(options.tol >= 0.0, "allocate_proxies: tol must be nonnegative");
  const ot::CostMatrix cost = build_cost(preds);
  const ot::Marginals marg = build_marginals(preds);
  const auto n = static_cast<double>(preds.batch_size());

  ot::SinkhornOptions so;
  so.lambda = options.lambda;
  so.max_iters = options.iters;
  so.tol = options.tol / n;  // solver works at unit mass
  so.domain = ot::KernelDomain::kPrimal;
  const ot::TransportPlan plan = ot::sinkhorn_solve(cost, marg.normalized(), so);

  ProxyLabels out;
  out.q = n * plan.values;
  out.batch_id = options.batch_id;
  out.iterations_used = plan.iterations_used;
  out.residual = ot::marginal_residual(out.q, marg);
  return out;
}

ProxyLabels allocate_proxies(const BatchPredictions& preds, int iters) {
  AllocateOptions options;
  options.iters = iters;
  return allocate_proxies(preds, options);
}

double dsink_loss_kl(const Eigen::MatrixXd& q, const BatchPredictions& preds) {
  preds.validate();
  require(q.rows() == preds.num_classes() && q.cols() == preds.batch_size(),
          "dsink_loss_kl: proxy labels do not match the batch shape");
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    total += kl_divergence(q.col(i), preds.noise_robust.col(i));
    total += kl_divergence(q.col(i), preds.target.col(i));
  }
  return total / static_cast<double>(q.cols());
}

double dsink_loss_ot(const Eigen::MatrixXd& q, const ot::CostMatrix& cost) {
  require(q.rows() == cost.rows() && q.cols() == cost.cols(),
          "dsink_loss_ot: proxy labels do not match the cost shape");
  require(q.size() > 0 && q.minCoeff() > 0.0, "dsink_loss_ot: proxy labels must be positive");
  double transport = 0.0;
  double neg_entropy = 0.0;
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    for (Eigen::Index c = 0; c < q.rows(); ++c) {
      transport += q(c, i) * cost.values()(c, i);
      neg_entropy += q(c, i) * std::log(q(c, i));
    }
  }
  return (transport + kEntropyWeight * neg_entropy) / static_cast<double>(q.cols());
}

double naive_distill_loss(const BatchPredictions& preds) {
  preds.validate();
  double total = 0.0;
  for (Eigen::Index i = 0; i < preds.batch_size(); ++i) {
    total += kl_divergence(preds.imbalance_robust.col(i), preds.target.col(i));
    total += kl_divergence(preds.noise_robust.col(i), preds.target.col(i));
  }
  return total / static_cast<double>(preds.batch_size());
}

}  // namespace dsink::proxy
