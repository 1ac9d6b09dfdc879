#include "dsink/ot_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dsink/error.hpp"

namespace dsink::ot {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, message);
}

void check_shapes(const CostMatrix& cost, const Marginals& marg) {
  require(cost.rows() == marg.rows() && cost.cols() == marg.cols(),
          "cost matrix is " + std::to_string(cost.rows()) + "x" + std::to_string(cost.cols()) +
              " but marginals are " + std::to_string(marg.rows()) + "x" +
              std::to_string(marg.cols()));
}

bool all_positive_finite(const Eigen::VectorXd& x) {
  return std::all_of(x.begin(), x.end(), [](double e) { return std::isfinite(e) && e > 0.0; });
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

double row_col_residual(const Eigen::VectorXd& row_sums, const Eigen::VectorXd& col_sums,
                        const Marginals& marg) {
  return (row_sums - marg.row_target()).lpNorm<1>() + (col_sums - marg.col_target()).lpNorm<1>();
}

TransportPlan solve_primal(const CostMatrix& cost, const Marginals& marg,
                           const SinkhornOptions& opt) {
  const Eigen::MatrixXd kernel = (-cost.values() / opt.lambda).array().exp().matrix();
  const Eigen::VectorXd& r = marg.row_target();
  const Eigen::VectorXd& c = marg.col_target();

  TransportPlan out;
  Eigen::VectorXd& u = out.scaling.u;
  Eigen::VectorXd& v = out.scaling.v;
  if (opt.init) {
    u = opt.init->u;
    v = opt.init->v;
  } else {
    u = Eigen::VectorXd::Constant(r.size(), 1.0 / static_cast<double>(r.size()));
    v = Eigen::VectorXd::Constant(c.size(), 1.0 / static_cast<double>(c.size()));
  }

  for (int t = 1; t <= opt.max_iters; ++t) {
    u = r.cwiseQuotient(kernel * v);
    v = c.cwiseQuotient(kernel.transpose() * u);
    if (!all_positive_finite(u) || !all_positive_finite(v)) {
      throw Error(ErrorKind::kNumerical,
                  "sinkhorn scaling vector left (0, inf) at iteration " + std::to_string(t) +
                      " (lambda=" + std::to_string(opt.lambda) + ")");
    }
    out.iterations_used = t;
    if (opt.tol > 0.0) {
      const Eigen::VectorXd rows = u.cwiseProduct(kernel * v);
      const Eigen::VectorXd cols = v.cwiseProduct(kernel.transpose() * u);
      if (row_col_residual(rows, cols, marg) <= opt.tol) break;
    }
  }

  out.values = u.asDiagonal() * kernel * v.asDiagonal();
  out.residual = marginal_residual(out.values, marg);
  return out;
}

TransportPlan solve_log(const CostMatrix& cost, const Marginals& marg, const SinkhornOptions& opt) {
  const Eigen::MatrixXd log_kernel = -cost.values() / opt.lambda;
  const Eigen::VectorXd log_r = marg.row_target().array().log();
  const Eigen::VectorXd log_c = marg.col_target().array().log();
  const Eigen::Index rows = log_kernel.rows();
  const Eigen::Index cols = log_kernel.cols();

  Eigen::VectorXd log_u;
  Eigen::VectorXd log_v;
  if (opt.init) {
    log_u = opt.init->u.array().log();
    log_v = opt.init->v.array().log();
  } else {
    log_u = Eigen::VectorXd::Constant(rows, -std::log(static_cast<double>(rows)));
    log_v = Eigen::VectorXd::Constant(cols, -std::log(static_cast<double>(cols)));
  }

  auto plan_from_logs = [&]() {
    Eigen::MatrixXd p(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        p(i, j) = std::exp(log_u(i) + log_kernel(i, j) + log_v(j));
    return p;
  };

  TransportPlan out;
  for (int t = 1; t <= opt.max_iters; ++t) {
    for (Eigen::Index i = 0; i < rows; ++i)
      log_u(i) = log_r(i) - log_sum_exp(log_kernel.row(i).transpose() + log_v);
    for (Eigen::Index j = 0; j < cols; ++j)
      log_v(j) = log_c(j) - log_sum_exp(log_kernel.col(j) + log_u);
    if (!log_u.allFinite() || !log_v.allFinite()) {
      throw Error(ErrorKind::kNumerical,
                  "log-domain sinkhorn potential became nonfinite at iteration " +
                      std::to_string(t));
    }
    out.iterations_used = t;
    if (opt.tol > 0.0 && marginal_residual(plan_from_logs(), marg) <= opt.tol) break;
  }

  out.values = plan_from_logs();
  // exp of the potentials may saturate for very small lambda; the plan above
  // is assembled from the logs and does not depend on these.
  out.scaling.u = log_u.array().exp();
  out.scaling.v = log_v.array().exp();
  out.residual = marginal_residual(out.values, marg);
  return out;
}

}  // namespace

CostMatrix::CostMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
  require(values_.size() > 0, "cost matrix must be nonempty");
  require(values_.allFinite(), "cost matrix contains a nonfinite entry");
}

Marginals::Marginals(Eigen::VectorXd row_target, Eigen::VectorXd col_target)
    : row_(std::move(row_target)), col_(std::move(col_target)) {
  require(row_.size() > 0 && col_.size() > 0, "marginals must be nonempty");
  require(row_.allFinite() && col_.allFinite(), "marginals contain a nonfinite entry");
  require(row_.minCoeff() >= 0.0 && col_.minCoeff() >= 0.0, "marginals must be nonnegative");
  const double row_mass = row_.sum();
  const double col_mass = col_.sum();
  require(row_mass > 0.0, "marginals have zero total mass");
  if (std::abs(row_mass - col_mass) > kBalanceRelTol * std::max(row_mass, col_mass)) {
    throw Error(ErrorKind::kInvalidArgument,
                "unbalanced marginals: row mass " + std::to_string(row_mass) +
                    " vs column mass " + std::to_string(col_mass));
  }
  const double floor = kEntryFloor * row_mass;
  row_ = row_.cwiseMax(floor);
  col_ = col_.cwiseMax(floor);
}

Marginals Marginals::normalized() const {
  return Marginals(row_ / row_.sum(), col_ / col_.sum());
}

TransportPlan sinkhorn_solve(const CostMatrix& cost, const Marginals& marg,
                             const SinkhornOptions& options) {
  check_shapes(cost, marg);
  require(options.lambda > 0.0 && std::isfinite(options.lambda), "lambda must be positive");
  require(options.max_iters >= 1, "max_iters must be at least 1");
  require(options.tol >= 0.0, "tol must be nonnegative");
  if (options.init) {
    require(options.init->u.size() == marg.rows() && options.init->v.size() == marg.cols(),
            "initial scaling vectors do not match the problem shape");
    require(all_positive_finite(options.init->u) && all_positive_finite(options.init->v),
            "initial scaling vectors must be positive and finite");
  }

  const bool use_log =
      options.domain == KernelDomain::kLog ||
      (options.domain == KernelDomain::kAuto && options.lambda < kLogDomainThreshold);
  return use_log ? solve_log(cost, marg, options) : solve_primal(cost, marg, options);
}

TransportPlan sinkhorn_solve(const CostMatrix& cost, const Marginals& marg, double lambda,
                             int max_iters, double tol) {
  SinkhornOptions options;
  options.lambda = lambda;
  options.max_iters = max_iters;
  options.tol = tol;
  return sinkhorn_solve(cost, marg, options);
}

double marginal_residual(const Eigen::MatrixXd& plan, const Marginals& marg) {
  require(plan.rows() == marg.rows() && plan.cols() == marg.cols(),
          "plan shape does not match marginals");
  return row_col_residual(plan.rowwise().sum(), plan.colwise().sum().transpose(), marg);
}

double entropic_objective(const Eigen::MatrixXd& plan, const CostMatrix& cost, double lambda) {
  require(plan.rows() == cost.rows() && plan.cols() == cost.cols(),
          "plan shape does not match cost");
  double linear = 0.0;
  double neg_entropy = 0.0;
  for (Eigen::Index j = 0; j < plan.cols(); ++j) {
    for (Eigen::Index i = 0; i < plan.rows(); ++i) {
      const double p = plan(i, j);
      linear += p * cost.values()(i, j);
      if (p > 0.0) neg_entropy += p * std::log(p);
    }
  }
  return linear + lambda * neg_entropy;
}

TransportPlan ot_oracle(const CostMatrix& cost, const Marginals& marg, double lambda) {
  check_shapes(cost, marg);
  require(lambda > 0.0 && std::isfinite(lambda), "lambda must be positive");
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();
  if (m * n > kOracleMaxEntries) {
    throw Error(ErrorKind::kInvalidArgument,
                "ot_oracle instance too large: " + std::to_string(m) + "x" + std::to_string(n));
  }
  constexpr double kTarget = 1e-10;
  constexpr int kMaxNewton = 500;

  const Eigen::MatrixXd& cm = cost.values();
  const Eigen::VectorXd& r = marg.row_target();
  const Eigen::VectorXd& c = marg.col_target();

  // Potentials, with g(n-1) pinned to 0 to remove the (f + t, g - t) gauge.
  Eigen::VectorXd f = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);

  auto plan_of = [&](const Eigen::VectorXd& ff, const Eigen::VectorXd& gg) {
    Eigen::MatrixXd p(m, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < m; ++i) p(i, j) = std::exp((ff(i) + gg(j) - cm(i, j)) / lambda);
    return p;
  };
  auto dual_of = [&](const Eigen::VectorXd& ff, const Eigen::VectorXd& gg,
                     const Eigen::MatrixXd& p) {
    return ff.dot(r) + gg.dot(c) - lambda * p.sum();
  };
  auto residual_of = [&](const Eigen::MatrixXd& p) {
    return (p.rowwise().sum() - r).lpNorm<1>() + (p.colwise().sum().transpose() - c).lpNorm<1>();
  };

  // Start from potentials that already carry the right order of magnitude.
  for (Eigen::Index i = 0; i < m; ++i) f(i) = lambda * std::log(r(i)) + cm.row(i).minCoeff();

  Eigen::MatrixXd p = plan_of(f, g);
  double dual = dual_of(f, g, p);
  double res = residual_of(p);
  int it = 0;
  const Eigen::Index dim = m + n - 1;
  for (; it < kMaxNewton && !(res <= kTarget); ++it) {
    // Ascent direction from the reduced Newton system (1/lambda) H d = grad.
    Eigen::VectorXd grad(dim);
    grad.head(m) = r - p.rowwise().sum();
    grad.tail(n - 1) = (c - p.colwise().sum().transpose()).head(n - 1);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    hess.topLeftCorner(m, m) = p.rowwise().sum().asDiagonal();
    const Eigen::VectorXd col_sums = p.colwise().sum().transpose();
    for (Eigen::Index j = 0; j + 1 < n; ++j) hess(m + j, m + j) = col_sums(j);
    hess.block(0, m, m, n - 1) = p.leftCols(n - 1);
    hess.block(m, 0, n - 1, m) = p.leftCols(n - 1).transpose();
    hess /= lambda;
    hess.diagonal().array() += 1e-300;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) break;

    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls, t *= 0.5) {
      Eigen::VectorXd f2 = f + t * step.head(m);
      Eigen::VectorXd g2 = g;
      g2.head(n - 1) += t * step.tail(n - 1);
      Eigen::MatrixXd p2 = plan_of(f2, g2);
      if (!p2.allFinite()) continue;
      const double dual2 = dual_of(f2, g2, p2);
      const double res2 = residual_of(p2);
      const bool armijo = dual2 >= dual + 1e-4 * t * grad.dot(step);
      if (armijo || res2 < res) {
        f = std::move(f2);
        g = std::move(g2);
        p = std::move(p2);
        dual = dual2;
        res = res2;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  if (!(res <= kTarget)) {
    throw Error(ErrorKind::kNumerical,
                "ot_oracle did not converge: residual " + std::to_string(res) + " after " +
                    std::to_string(it) + " Newton steps");
  }

  TransportPlan out;
  out.values = std::move(p);
  out.iterations_used = it;
  out.residual = res;
  out.scaling.u = (f / lambda).array().exp();
  out.scaling.v = (g / lambda).array().exp();
  return out;
}

}  // namespace dsink::ot
