#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fastgp/dataset.hpp"
#include "fastgp/matern.hpp"
#include "fastgp/mvm.hpp"
#include "fastgp/solver.hpp"

namespace fastgp {

struct SolverConfig {
  double cg_tol = 1e-5;
  Index cg_max_iter = 1000;
  /// 0 disables preconditioning.
  Index precond_rank = 100;
  Index n_probe = 10;
  Index lanczos_m = 50;
  MvmOptions mvm;
};

/// Progress of one ADAM step, for logging.
struct StepInfo {
  Index outer = 0;
  Index iteration = 0;
  double outputscale = 0.0;
  double lengthscale = 0.0;
  double sigma = 0.0;
  double grad_norm = 0.0;
  Index cg_iterations = 0;
};

struct OptimizerConfig {
  double lr_init = 0.005;
  double lr_final = 0.0005;
  Index max_iter = 20000;
  double grad_tol = 1e-3;
  double param_stall_tol = 1e-4;
  Index stall_window = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  SolverConfig solver;
  /// Joint estimation: cap on GLS rounds and the beta stability threshold,
  /// relative to the norm of the OLS coefficients.
  Index max_outer = 10;
  double beta_tol_rel = 1e-3;
  /// Reuse the first descent's probes in every later descent instead of
  /// drawing a fresh set per round.
  bool fixed_probes = false;
  std::function<void(const StepInfo&)> on_step;
};

void validate(const OptimizerConfig& config);

/// Points, responses and the presort shared by every plan on them.
class GpData {
 public:
  GpData(Eigen::MatrixXd points, Eigen::VectorXd responses, MvmOptions options = {});

  [[nodiscard]] const Dataset& dataset() const { return data_; }
  [[nodiscard]] const Eigen::MatrixXd& points() const { return data_.points; }
  [[nodiscard]] const Eigen::VectorXd& responses() const { return data_.responses; }
  [[nodiscard]] Index size() const { return data_.size(); }
  [[nodiscard]] Index dim() const { return data_.dim(); }
  [[nodiscard]] const MvmOptions& mvm_options() const { return options_; }
  [[nodiscard]] MvmPlan plan(const KernelSpec& kernel) const;

 private:
  Dataset data_;
  MvmOptions options_;
  std::shared_ptr<const MvmGeometry> geometry_;
};

/// Kernel, nugget sd and, when present, affine mean coefficients
/// (intercept first, then one slope per design column after the ones).
struct GpModel {
  KernelSpec kernel;
  double sigma = 1.0;
  Eigen::VectorXd beta;
};

/// Column of ones followed by the coordinates.
[[nodiscard]] Eigen::MatrixXd design_matrix(const Eigen::MatrixXd& points);

/// -1/2 y^T (K + sigma^2 I)^{-1} y - 1/2 log det(K + sigma^2 I) - N/2 log(2 pi),
/// stochastic log-det with `seed`. y is expected to be centered already.
[[nodiscard]] double log_likelihood(const GpData& data, const GpModel& model, const Eigen::VectorXd& y,
                                    const SolverConfig& config, std::uint64_t seed);

struct LikelihoodGradient {
  double d_outputscale = 0.0;
  double d_lengthscale = 0.0;
  Eigen::VectorXd alpha;
  Index cg_iterations = 0;
  /// Pivoted Cholesky factor used as preconditioner (empty if none).
  Eigen::MatrixXd precond_factor;
};

/// Stochastic gradient of the log-likelihood in (outputscale, lengthscale).
[[nodiscard]] LikelihoodGradient likelihood_gradient(const GpData& data, const GpModel& model,
                                                     const Eigen::VectorXd& y, const ProbeSet& probes,
                                                     const SolverConfig& config);

/// (1/N) r^T (Kt + I)^{-1} r where Kt has outputscale model.kernel.outputscale
/// / model.sigma. `precond_factor` (optional) is a pivoted Cholesky factor of
/// Kt reused as preconditioner.
[[nodiscard]] double sigma_update(const GpData& data, const GpModel& model, const Eigen::VectorXd& r,
                                  const SolverConfig& config, const Eigen::MatrixXd& precond_factor = {});

/// Least squares coefficients; throws on a rank-deficient design.
[[nodiscard]] Eigen::VectorXd ols_estimate(const Eigen::MatrixXd& h, const Eigen::VectorXd& y);

/// (H^T A^{-1} H)^{-1} H^T A^{-1} y with A = K + sigma^2 I.
[[nodiscard]] Eigen::VectorXd gls_estimate(const GpData& data, const GpModel& model, const Eigen::MatrixXd& h,
                                           const Eigen::VectorXd& y, const SolverConfig& config);

struct FitReport {
  GpModel model;
  /// ADAM steps over all descents.
  Index iterations = 0;
  double seconds = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  std::string stop_reason;
  /// Joint estimation only.
  Index outer_iterations = 0;
  bool beta_converged = false;
  std::vector<Eigen::VectorXd> beta_history;
  std::vector<Index> descent_iterations;
};

/// ADAM ascent on (outputscale, lengthscale) at fixed sigma, y centered.
[[nodiscard]] FitReport fit_scale_params(const GpData& data, const Eigen::VectorXd& y, const GpModel& initial,
                                         const OptimizerConfig& config);

/// Successive descents with a nugget update at every step and GLS updates
/// of the affine mean between descents. A numerical failure after the first
/// round stops the loop and returns the last completed round with
/// beta_converged = false and stop_reason "numerical: ...".
[[nodiscard]] FitReport fit_joint(const GpData& data, const Eigen::MatrixXd& h, const GpModel& initial,
                                  const OptimizerConfig& config);

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// Posterior mean (and latent variance) at the rows of z. Caches
/// (K + sigma^2 I)^{-1}(y - m(x)).
class Predictor {
 public:
  Predictor(const GpData& data, GpModel model, SolverConfig config);

  [[nodiscard]] Prediction predict(const Eigen::MatrixXd& z, bool want_variance) const;
  [[nodiscard]] const Eigen::VectorXd& alpha() const { return alpha_; }

 private:
  const GpData& data_;
  GpModel model_;
  SolverConfig config_;
  Preconditioner precond_;
  Eigen::VectorXd alpha_;
};

[[nodiscard]] Prediction predict(const GpData& data, const GpModel& model, const Eigen::MatrixXd& z,
                                 bool want_variance, const SolverConfig& config);

/// y = H beta + chol(K) g + sigma g', dense, reproducible from the seed.
/// An outputscale of 0 drops the kernel part.
[[nodiscard]] Eigen::VectorXd simulate_gp(const KernelSpec& kernel, double sigma, const Eigen::VectorXd& beta,
                                          const Eigen::MatrixXd& h, const Eigen::MatrixXd& points, std::uint64_t seed,
                                          Index dense_cap = 8000);

}  // namespace fastgp
