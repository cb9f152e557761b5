#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "fastgp/matern.hpp"
#include "fastgp/mvm.hpp"

namespace fastgp {

/// Matrix-free symmetric positive definite operator acting on N x l blocks.
struct LinearOperator {
  Index size = 0;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> apply;
};

/// (K + sigma^2 I) through the fast MVM.
[[nodiscard]] LinearOperator covariance_operator(const MvmPlan& plan, double sigma);
/// Wraps an explicit matrix; used for small problems and reference checks.
[[nodiscard]] LinearOperator dense_operator(Eigen::MatrixXd matrix);

/// Greedy largest-diagonal pivoted Cholesky of the kernel matrix: returns
/// N x k' with k' <= rank (fewer when the residual diagonal vanishes).
/// Throws NumericalError on a pivot below -1e-10 sigma^2.
[[nodiscard]] Eigen::MatrixXd pivoted_cholesky(const KernelSpec& kernel, const Eigen::MatrixXd& points, Index rank);

/// P = L L^T + sigma^2 I, applied and inverted through the k x k capacitance
/// matrix I_k + L^T L / sigma^2. A default-constructed preconditioner is the
/// identity.
class Preconditioner {
 public:
  Preconditioner() = default;
  Preconditioner(Eigen::MatrixXd factor, double sigma);

  [[nodiscard]] bool is_identity() const { return identity_; }
  [[nodiscard]] const Eigen::MatrixXd& factor() const { return factor_; }
  [[nodiscard]] double sigma() const { return sigma_; }
  [[nodiscard]] Index rank() const { return factor_.cols(); }

  /// P^{-1} B (Woodbury).
  [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  /// P B.
  [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& b) const;
  /// log det P = 2 N log sigma + log det(I_k + L^T L / sigma^2). 0 for identity.
  [[nodiscard]] double logdet() const;

 private:
  bool identity_ = true;
  Eigen::MatrixXd factor_;
  double sigma_ = 1.0;
  Eigen::LLT<Eigen::MatrixXd> capacitance_;
};

[[nodiscard]] Preconditioner make_preconditioner(const KernelSpec& kernel, const Eigen::MatrixXd& points, Index rank,
                                                 double sigma);
[[nodiscard]] Eigen::MatrixXd precond_solve(const Preconditioner& precond, const Eigen::MatrixXd& b);

/// Symmetric tridiagonal matrix from the CG coefficient recurrences.
struct LanczosTridiag {
  std::vector<double> diag;
  std::vector<double> offdiag;

  [[nodiscard]] Index size() const { return static_cast<Index>(diag.size()); }
  [[nodiscard]] Eigen::MatrixXd dense() const;
  /// e_1^T log(T) e_1 through the eigendecomposition of T. Throws on a
  /// non-positive eigenvalue.
  [[nodiscard]] double log_quadratic_e1() const;
};

struct CgOptions {
  Index max_iter = 1000;
  /// Stop once the squared Frobenius norm of the residual block drops below.
  double tol = 1e-5;
  bool record_tridiag = false;
  /// Called after every update with (iteration, current solution, residual).
  std::function<void(Index, const Eigen::MatrixXd&, const Eigen::MatrixXd&)> observer;
};

struct CgResult {
  Eigen::MatrixXd solution;
  /// Operator applications performed.
  Index iterations = 0;
  bool converged = false;
  double residual_sq = 0.0;
  std::vector<LanczosTridiag> tridiags;
};

/// Multi-column preconditioned CG. With `record_tridiag`, also returns one
/// Lanczos tridiagonal matrix per column; those are only meaningful with the
/// zero initial guess, which is what a null `x0` selects.
[[nodiscard]] CgResult cg_lanczos(const LinearOperator& op, const Eigen::MatrixXd& b, const Preconditioner& precond,
                                  const CgOptions& options, const Eigen::MatrixXd* x0 = nullptr);

/// Gaussian probe vectors, reproducible from the seed.
struct ProbeSet {
  Eigen::MatrixXd z;
  std::uint64_t seed = 0;

  /// i.i.d. standard normal entries, N x n_probe.
  static ProbeSet gaussian(Index n, Index n_probe, std::uint64_t seed);
  /// Columns distributed as N(0, P): L g1 + sigma g2.
  static ProbeSet preconditioned(const Preconditioner& precond, Index n, Index n_probe, std::uint64_t seed);
};

/// (N / l) sum_i e_1^T log(T_i) e_1.
[[nodiscard]] double logdet_from_tridiags(const std::vector<LanczosTridiag>& tridiags, Index n);

/// Stochastic Lanczos estimate of log det(op). With a preconditioner the
/// probes follow N(0, P), the Lanczos part estimates log det(P^{-1} op) and
/// the exact log det P is added.
[[nodiscard]] double logdet_estimate(const LinearOperator& op, const Preconditioner& precond, Index n_probe,
                                     Index lanczos_m, std::uint64_t seed);

/// Hutchinson estimate of tr(op^{-1} D), D given by its block product.
/// Throws NumericalError if CG does not reach `options.tol`.
[[nodiscard]] double trace_term_estimate(const LinearOperator& op,
                                         const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& grad_mvm,
                                         const ProbeSet& probes, const Preconditioner& precond,
                                         const CgOptions& options);

}  // namespace fastgp
