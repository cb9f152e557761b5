#include "fastgp/solver.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "fastgp/error.hpp"

namespace fastgp {

LinearOperator covariance_operator(const MvmPlan& plan, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("nugget sd must be finite and >= 0");
  const double s2 = sigma * sigma;
  return LinearOperator{plan.size(), [plan, s2](const Eigen::MatrixXd& b) -> Eigen::MatrixXd {
                          Eigen::MatrixXd out = mvm_fast(plan, b);
                          out += s2 * b;
                          return out;
                        }};
}

LinearOperator dense_operator(Eigen::MatrixXd matrix) {
  if (matrix.rows() != matrix.cols()) throw InvalidArgument("dense_operator: matrix must be square");
  const Index n = matrix.rows();
  return LinearOperator{n, [m = std::move(matrix)](const Eigen::MatrixXd& b) -> Eigen::MatrixXd { return m * b; }};
}

Eigen::MatrixXd pivoted_cholesky(const KernelSpec& kernel, const Eigen::MatrixXd& points, Index rank) {
  validate(kernel);
  check_points(points);
  const Index n = points.rows();
  const Index d = points.cols();
  if (rank < 1 || rank > n) {
    throw InvalidArgument("pivoted Cholesky rank must be in [1, N], got " + std::to_string(rank));
  }
  const double s2 = kernel.outputscale * kernel.outputscale;
  const double neg_tol = -1e-10 * s2;
  const double stop_tol = 1e-12 * s2;

  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, rank);
  std::vector<double> u(static_cast<std::size_t>(d));
  std::vector<double> zero(static_cast<std::size_t>(d), 0.0);
  Eigen::VectorXd diag = Eigen::VectorXd::Constant(n, kernel_eval_multi(kernel, zero));
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd row(n);
  Index k = 0;
  for (; k < rank; ++k) {
    Index piv = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      if (!used[static_cast<std::size_t>(i)] && diag(i) > best) {
        best = diag(i);
        piv = i;
      }
    }
    if (best < neg_tol) {
      std::ostringstream os;
      os << "pivoted Cholesky: negative pivot " << best << " at step " << k << "; kernel matrix is not PSD";
      throw NumericalError(os.str());
    }
    if (best <= stop_tol) break;
    used[static_cast<std::size_t>(piv)] = 1;
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < d; ++c) u[static_cast<std::size_t>(c)] = points(i, c) - points(piv, c);
      row(i) = kernel_eval_multi(kernel, u);
    }
    if (k > 0) row.noalias() -= l.leftCols(k) * l.row(piv).head(k).transpose();
    const double root = std::sqrt(best);
    l.col(k) = row / root;
    for (Index i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) {
        diag(i) = 0.0;
      } else {
        diag(i) -= l(i, k) * l(i, k);
      }
    }
  }
  return l.leftCols(k);
}

Preconditioner::Preconditioner(Eigen::MatrixXd factor, double sigma)
    : identity_(false), factor_(std::move(factor)), sigma_(sigma) {
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) {
    throw InvalidArgument("preconditioner needs sigma > 0 (Woodbury form), got " + std::to_string(sigma_));
  }
  const Index k = factor_.cols();
  Eigen::MatrixXd cap = Eigen::MatrixXd::Identity(k, k);
  if (k > 0) cap.noalias() += factor_.transpose() * factor_ / (sigma_ * sigma_);
  capacitance_.compute(cap);
  if (capacitance_.info() != Eigen::Success) throw NumericalError("preconditioner capacitance matrix is not SPD");
}

Eigen::MatrixXd Preconditioner::solve(const Eigen::MatrixXd& b) const {
  if (identity_) return b;
  if (b.rows() != factor_.rows()) throw InvalidArgument("preconditioner solve: row count mismatch");
  const double s2 = sigma_ * sigma_;
  Eigen::MatrixXd out = b / s2;
  if (factor_.cols() > 0) {
    const Eigen::MatrixXd ltb = factor_.transpose() * b;
    out.noalias() -= factor_ * capacitance_.solve(ltb) / (s2 * s2);
  }
  return out;
}

Eigen::MatrixXd Preconditioner::apply(const Eigen::MatrixXd& b) const {
  if (identity_) return b;
  Eigen::MatrixXd out = sigma_ * sigma_ * b;
  if (factor_.cols() > 0) out.noalias() += factor_ * (factor_.transpose() * b);
  return out;
}

double Preconditioner::logdet() const {
  if (identity_) return 0.0;
  const auto n = static_cast<double>(factor_.rows());
  double inner = 0.0;
  if (factor_.cols() > 0) {
    const Eigen::MatrixXd lmat = capacitance_.matrixL();
    inner = 2.0 * lmat.diagonal().array().log().sum();
  }
  return 2.0 * n * std::log(sigma_) + inner;
}

Preconditioner make_preconditioner(const KernelSpec& kernel, const Eigen::MatrixXd& points, Index rank, double sigma) {
  const Index r = std::min(rank, points.rows());
  return Preconditioner(pivoted_cholesky(kernel, points, r), sigma);
}

Eigen::MatrixXd precond_solve(const Preconditioner& precond, const Eigen::MatrixXd& b) { return precond.solve(b); }

Eigen::MatrixXd LanczosTridiag::dense() const {
  const Index m = size();
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
  for (Index i = 0; i < m; ++i) t(i, i) = diag[static_cast<std::size_t>(i)];
  for (Index i = 0; i + 1 < m; ++i) {
    t(i + 1, i) = offdiag[static_cast<std::size_t>(i)];
    t(i, i + 1) = offdiag[static_cast<std::size_t>(i)];
  }
  return t;
}

double LanczosTridiag::log_quadratic_e1() const {
  if (diag.empty()) throw NumericalError("empty Lanczos tridiagonal matrix");
  const Index m = size();
  Eigen::VectorXd dv(m);
  Eigen::VectorXd ov(std::max<Index>(m - 1, 0));
  for (Index i = 0; i < m; ++i) dv(i) = diag[static_cast<std::size_t>(i)];
  for (Index i = 0; i + 1 < m; ++i) ov(i) = offdiag[static_cast<std::size_t>(i)];
  if (!dv.allFinite() || !ov.allFinite()) throw NumericalError("Lanczos tridiagonal matrix has non-finite entries");
  // Eigen's deflation test is not scale invariant; solve for T / max|T|
  const double scale = std::max(dv.cwiseAbs().maxCoeff(), m > 1 ? ov.cwiseAbs().maxCoeff() : 0.0);
  if (!(scale > 0.0)) throw NumericalError("Lanczos tridiagonal matrix is zero");
  dv /= scale;
  ov /= scale;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(dv, ov, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) throw NumericalError("tridiagonal eigensolver failed");
  double acc = 0.0;
  for (Index i = 0; i < m; ++i) {
    const double lambda = es.eigenvalues()(i) * scale;
    if (!(lambda > 0.0)) {
      std::ostringstream os;
      os << "Lanczos tridiagonal matrix has eigenvalue " << lambda
         << "; increase the Lanczos size or add jitter to the nugget";
      throw NumericalError(os.str());
    }
    const double q = es.eigenvectors()(0, i);
    acc += q * q * std::log(lambda);
  }
  return acc;
}

CgResult cg_lanczos(const LinearOperator& op, const Eigen::MatrixXd& b, const Preconditioner& precond,
                    const CgOptions& options, const Eigen::MatrixXd* x0) {
  const Index n = op.size;
  if (b.rows() != n) throw InvalidArgument("cg_lanczos: right-hand side has the wrong row count");
  if (b.cols() < 1) throw InvalidArgument("cg_lanczos: empty right-hand side");
  if (!(options.tol > 0.0)) throw InvalidArgument("cg_lanczos: tol must be > 0");
  if (options.max_iter < 1) throw InvalidArgument("cg_lanczos: max_iter must be >= 1");
  const Index l = b.cols();

  CgResult res;
  if (x0 != nullptr) {
    if (x0->rows() != n || x0->cols() != l) throw InvalidArgument("cg_lanczos: initial guess has the wrong shape");
    res.solution = *x0;
  } else {
    res.solution = Eigen::MatrixXd::Zero(n, l);
  }
  Eigen::MatrixXd r = (x0 != nullptr) ? Eigen::MatrixXd(b - op.apply(*x0)) : b;
  Eigen::MatrixXd p = precond.solve(r);
  Eigen::VectorXd k(l);
  for (Index j = 0; j < l; ++j) k(j) = p.col(j).dot(r.col(j));
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(l);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(l);
  Eigen::VectorXd alpha_prev = Eigen::VectorXd::Ones(l);
  Eigen::VectorXd beta_prev = Eigen::VectorXd::Zero(l);
  // a column whose residual is exactly zero stays put
  std::vector<char> frozen(static_cast<std::size_t>(l), 0);
  for (Index j = 0; j < l; ++j) frozen[static_cast<std::size_t>(j)] = (k(j) == 0.0);
  if (options.record_tridiag) res.tridiags.resize(static_cast<std::size_t>(l));

  res.residual_sq = r.squaredNorm();
  if (res.residual_sq == 0.0) {
    res.converged = true;
    return res;
  }
  Index n_iter = 0;
  while (n_iter < options.max_iter) {
    const Eigen::MatrixXd t = op.apply(p);
    ++res.iterations;
    for (Index j = 0; j < l; ++j) {
      if (frozen[static_cast<std::size_t>(j)]) {
        alpha(j) = 0.0;
        continue;
      }
      const double denom = p.col(j).dot(t.col(j));
      if (!(denom > 0.0)) {
        std::ostringstream os;
        os << "CG breakdown at iteration " << n_iter << ", column " << j << ": p^T A p = " << denom
           << " (operator not positive definite)";
        throw NumericalError(os.str());
      }
      alpha(j) = k(j) / denom;
      res.solution.col(j) += alpha(j) * p.col(j);
      r.col(j) -= alpha(j) * t.col(j);
    }
    res.residual_sq = r.squaredNorm();
    if (options.observer) options.observer(n_iter, res.solution, r);
    if (!std::isfinite(res.residual_sq)) throw NumericalError("CG residual became non-finite");
    if (res.residual_sq < options.tol) {
      if (options.record_tridiag) {
        for (Index j = 0; j < l; ++j) {
          if (frozen[static_cast<std::size_t>(j)]) continue;
          res.tridiags[static_cast<std::size_t>(j)].diag.push_back(1.0 / alpha(j) + beta_prev(j) / alpha_prev(j));
        }
      }
      res.converged = true;
      break;
    }
    const Eigen::MatrixXd z = precond.solve(r);
    const Eigen::VectorXd k_prev = k;
    ++n_iter;
    for (Index j = 0; j < l; ++j) {
      if (frozen[static_cast<std::size_t>(j)]) continue;
      k(j) = z.col(j).dot(r.col(j));
      if (k(j) == 0.0) {
        frozen[static_cast<std::size_t>(j)] = 1;
      }
      beta(j) = k(j) / k_prev(j);
      p.col(j) = z.col(j) + beta(j) * p.col(j);
      if (options.record_tridiag) {
        auto& tri = res.tridiags[static_cast<std::size_t>(j)];
        tri.diag.push_back(1.0 / alpha(j) + beta_prev(j) / alpha_prev(j));
        tri.offdiag.push_back(std::sqrt(beta(j)) / alpha(j));
      }
    }
    alpha_prev = alpha;
    beta_prev = beta;
  }
  if (options.record_tridiag) {
    for (auto& tri : res.tridiags) {
      if (tri.offdiag.size() >= tri.diag.size() && !tri.offdiag.empty()) tri.offdiag.resize(tri.diag.size() - 1);
    }
  }
  return res;
}

ProbeSet ProbeSet::gaussian(Index n, Index n_probe, std::uint64_t seed) {
  if (n < 1 || n_probe < 1) throw InvalidArgument("probe set needs N >= 1 and n_probe >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ProbeSet out;
  out.seed = seed;
  out.z.resize(n, n_probe);
  for (Index j = 0; j < n_probe; ++j) {
    for (Index i = 0; i < n; ++i) out.z(i, j) = normal(rng);
  }
  return out;
}

ProbeSet ProbeSet::preconditioned(const Preconditioner& precond, Index n, Index n_probe, std::uint64_t seed) {
  if (precond.is_identity()) return gaussian(n, n_probe, seed);
  const Index k = precond.rank();
  ProbeSet g = gaussian(n + k, n_probe, seed);
  ProbeSet out;
  out.seed = seed;
  out.z = precond.sigma() * g.z.topRows(n);
  if (k > 0) out.z.noalias() += precond.factor() * g.z.bottomRows(k);
  return out;
}

double logdet_from_tridiags(const std::vector<LanczosTridiag>& tridiags, Index n) {
  if (tridiags.empty()) throw InvalidArgument("no Lanczos matrices");
  double acc = 0.0;
  for (const auto& t : tridiags) acc += t.log_quadratic_e1();
  return static_cast<double>(n) / static_cast<double>(tridiags.size()) * acc;
}

double logdet_estimate(const LinearOperator& op, const Preconditioner& precond, Index n_probe, Index lanczos_m,
                       std::uint64_t seed) {
  if (n_probe < 1) throw InvalidArgument("logdet_estimate: n_probe must be >= 1");
  if (lanczos_m < 1) throw InvalidArgument("logdet_estimate: lanczos_m must be >= 1");
  const ProbeSet probes = ProbeSet::preconditioned(precond, op.size, n_probe, seed);
  CgOptions opt;
  opt.max_iter = lanczos_m;
  // run the full m steps unless the Krylov space is numerically exhausted
  opt.tol = 1e-26 * probes.z.squaredNorm();
  opt.record_tridiag = true;
  const CgResult cg = cg_lanczos(op, probes.z, precond, opt);
  return logdet_from_tridiags(cg.tridiags, op.size) + precond.logdet();
}

double trace_term_estimate(const LinearOperator& op,
                           const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& grad_mvm,
                           const ProbeSet& probes, const Preconditioner& precond, const CgOptions& options) {
  if (probes.z.rows() != op.size) throw InvalidArgument("trace_term_estimate: probe length mismatch");
  const Eigen::MatrixXd dz = grad_mvm(probes.z);
  if (dz.isZero(0.0)) return 0.0;
  const CgResult cg = cg_lanczos(op, probes.z, precond, options);
  if (!cg.converged) {
    std::ostringstream os;
    os << "trace estimate: CG did not converge in " << cg.iterations << " iterations (residual^2 " << cg.residual_sq
       << ", tol " << options.tol << ")";
    throw NumericalError(os.str());
  }
  double acc = 0.0;
  for (Index j = 0; j < probes.z.cols(); ++j) acc += cg.solution.col(j).dot(dz.col(j));
  return acc / static_cast<double>(probes.z.cols());
}

}  // namespace fastgp
