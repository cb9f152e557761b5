#include "fastgp/gp.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "fastgp/error.hpp"

namespace fastgp {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 step
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void check_vector(const GpData& data, const Eigen::VectorXd& y, const char* what) {
  if (y.size() != data.size()) {
    throw InvalidArgument(std::string(what) + " has " + std::to_string(y.size()) + " entries, expected " +
                          std::to_string(data.size()));
  }
  if (!y.allFinite()) throw InvalidArgument(std::string(what) + " contains non-finite values");
}

void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("nugget sd sigma must be positive and finite, got " + std::to_string(sigma));
  }
}

Preconditioner build_precond(const GpData& data, const KernelSpec& kernel, double sigma, const SolverConfig& config) {
  if (config.precond_rank <= 0) return {};
  return make_preconditioner(kernel, data.points(), config.precond_rank, sigma);
}

CgOptions cg_options(const SolverConfig& config) {
  CgOptions opt;
  opt.tol = config.cg_tol;
  opt.max_iter = config.cg_max_iter;
  return opt;
}

CgResult solve_or_throw(const LinearOperator& op, const Eigen::MatrixXd& b, const Preconditioner& precond,
                        const SolverConfig& config, const char* what) {
  CgResult cg = cg_lanczos(op, b, precond, cg_options(config));
  if (!cg.converged) {
    std::ostringstream os;
    os << what << ": CG did not converge in " << cg.iterations << " iterations (residual^2 " << cg.residual_sq
       << ", tol " << config.cg_tol << ")";
    throw NumericalError(os.str());
  }
  return cg;
}

}  // namespace

void validate(const OptimizerConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(name) + " must be positive");
  };
  positive(c.lr_init, "lr_init");
  positive(c.lr_final, "lr_final");
  positive(c.grad_tol, "grad_tol");
  positive(c.param_stall_tol, "param_stall_tol");
  positive(c.solver.cg_tol, "cg_tol");
  positive(c.beta_tol_rel, "beta_tol_rel");
  if (c.max_iter < 1) throw InvalidArgument("max_iter must be >= 1");
  if (c.stall_window < 1) throw InvalidArgument("stall_window must be >= 1");
  if (c.solver.n_probe < 1) throw InvalidArgument("n_probe must be >= 1");
  if (c.solver.lanczos_m < 1) throw InvalidArgument("lanczos_m must be >= 1");
  if (c.solver.cg_max_iter < 1) throw InvalidArgument("cg_max_iter must be >= 1");
  if (c.solver.precond_rank < 0) throw InvalidArgument("precond_rank must be >= 0");
  if (c.max_outer < 1) throw InvalidArgument("max_outer must be >= 1");
}

GpData::GpData(Eigen::MatrixXd points, Eigen::VectorXd responses, MvmOptions options)
    : data_(make_dataset(std::move(points), std::move(responses))),
      options_(options),
      geometry_(make_geometry(data_.points, options.leaf_size)) {}

MvmPlan GpData::plan(const KernelSpec& kernel) const { return MvmPlan(kernel, geometry_, options_); }

Eigen::MatrixXd design_matrix(const Eigen::MatrixXd& points) {
  Eigen::MatrixXd h(points.rows(), points.cols() + 1);
  h.col(0).setOnes();
  h.rightCols(points.cols()) = points;
  return h;
}

double log_likelihood(const GpData& data, const GpModel& model, const Eigen::VectorXd& y, const SolverConfig& config,
                      std::uint64_t seed) {
  check_vector(data, y, "y");
  check_sigma(model.sigma);
  const MvmPlan plan = data.plan(model.kernel);
  const LinearOperator op = covariance_operator(plan, model.sigma);
  const Preconditioner precond = build_precond(data, model.kernel, model.sigma, config);
  const CgResult cg = solve_or_throw(op, y, precond, config, "log_likelihood");
  const double quad = y.dot(cg.solution.col(0));
  const double logdet = logdet_estimate(op, precond, config.n_probe, config.lanczos_m, seed);
  const auto n = static_cast<double>(data.size());
  return -0.5 * quad - 0.5 * logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

LikelihoodGradient likelihood_gradient(const GpData& data, const GpModel& model, const Eigen::VectorXd& y,
                                       const ProbeSet& probes, const SolverConfig& config) {
  check_vector(data, y, "y");
  check_sigma(model.sigma);
  const Index n = data.size();
  if (probes.z.rows() != n || probes.z.cols() < 1) throw InvalidArgument("probe set does not match the data");
  const Index np = probes.z.cols();
  const MvmPlan plan = data.plan(model.kernel);
  const LinearOperator op = covariance_operator(plan, model.sigma);
  const Preconditioner precond = build_precond(data, model.kernel, model.sigma, config);

  Eigen::MatrixXd b(n, np + 1);
  b.col(0) = y;
  b.rightCols(np) = probes.z;
  const CgResult cg = solve_or_throw(op, b, precond, config, "likelihood_gradient");

  Eigen::MatrixXd v(n, np + 1);
  v.col(0) = cg.solution.col(0);
  v.rightCols(np) = probes.z;
  const MvmWithGrad prod = mvm_fast_with_grad(plan, v);

  LikelihoodGradient out;
  out.alpha = cg.solution.col(0);
  out.cg_iterations = cg.iterations;
  if (!precond.is_identity()) out.precond_factor = precond.factor();
  double trace_k = 0.0;
  double trace_l = 0.0;
  for (Index j = 0; j < np; ++j) {
    trace_k += cg.solution.col(j + 1).dot(prod.ky.col(j + 1));
    trace_l += cg.solution.col(j + 1).dot(prod.dky_dl.col(j + 1));
  }
  trace_k /= static_cast<double>(np);
  trace_l /= static_cast<double>(np);
  const double fit_k = out.alpha.dot(prod.ky.col(0));
  const double fit_l = out.alpha.dot(prod.dky_dl.col(0));
  const double s = model.kernel.outputscale;
  out.d_outputscale = (2.0 / s) * (0.5 * fit_k - 0.5 * trace_k);
  out.d_lengthscale = 0.5 * fit_l - 0.5 * trace_l;
  return out;
}

double sigma_update(const GpData& data, const GpModel& model, const Eigen::VectorXd& r, const SolverConfig& config,
                    const Eigen::MatrixXd& precond_factor) {
  check_vector(data, r, "residual");
  check_sigma(model.sigma);
  KernelSpec tilde = model.kernel;
  tilde.outputscale = model.kernel.outputscale / model.sigma;
  const MvmPlan plan = data.plan(tilde);
  const LinearOperator op = covariance_operator(plan, 1.0);
  Preconditioner precond;
  if (precond_factor.size() > 0) {
    precond = Preconditioner(precond_factor, 1.0);
  } else {
    precond = build_precond(data, tilde, 1.0, config);
  }
  const CgResult cg = solve_or_throw(op, r, precond, config, "sigma_update");
  return r.dot(cg.solution.col(0)) / static_cast<double>(data.size());
}

Eigen::VectorXd ols_estimate(const Eigen::MatrixXd& h, const Eigen::VectorXd& y) {
  if (h.rows() != y.size()) throw InvalidArgument("ols_estimate: H and y row counts differ");
  if (h.cols() < 1 || h.rows() < h.cols()) throw InvalidArgument("ols_estimate: design matrix has too few rows");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(h);
  qr.setThreshold(1e-10);
  if (qr.rank() < h.cols()) {
    throw InvalidArgument("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                          std::to_string(h.cols()) + ")");
  }
  return qr.solve(y);
}

Eigen::VectorXd gls_estimate(const GpData& data, const GpModel& model, const Eigen::MatrixXd& h,
                             const Eigen::VectorXd& y, const SolverConfig& config) {
  check_vector(data, y, "y");
  check_sigma(model.sigma);
  if (h.rows() != data.size() || h.cols() < 1) throw InvalidArgument("gls_estimate: design matrix shape mismatch");
  const Index n = data.size();
  const Index p = h.cols();
  const MvmPlan plan = data.plan(model.kernel);
  const LinearOperator op = covariance_operator(plan, model.sigma);
  const Preconditioner precond = build_precond(data, model.kernel, model.sigma, config);
  Eigen::MatrixXd b(n, p + 1);
  b.leftCols(p) = h;
  b.col(p) = y;
  const CgResult cg = solve_or_throw(op, b, precond, config, "gls_estimate");
  Eigen::MatrixXd m = h.transpose() * cg.solution.leftCols(p);
  m = 0.5 * (m + m.transpose()).eval();
  const Eigen::VectorXd rhs = h.transpose() * cg.solution.col(p);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw NumericalError("GLS normal matrix is singular");
  return qr.solve(rhs);
}

namespace {

struct Descent {
  GpModel model;
  Index iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  std::string reason;
};

// One gradient descent (ADAM, log parameters) on (outputscale, lengthscale);
// optionally refreshes sigma after every step.
Descent run_descent(const GpData& data, const Eigen::VectorXd& y, GpModel model, bool update_sigma,
                    const ProbeSet& probes, const OptimizerConfig& cfg, Index outer) {
  Descent out;
  Eigen::Vector2d m1 = Eigen::Vector2d::Zero();
  Eigen::Vector2d m2 = Eigen::Vector2d::Zero();
  std::deque<Eigen::Vector3d> history;
  const double span = cfg.max_iter > 1 ? static_cast<double>(cfg.max_iter - 1) : 1.0;
  out.reason = "max_iter";
  for (Index t = 1; t <= cfg.max_iter; ++t) {
    const LikelihoodGradient g = likelihood_gradient(data, model, y, probes, cfg.solver);
    const double s_old = model.kernel.outputscale;
    const double l_old = model.kernel.lengthscale;
    if (!std::isfinite(g.d_outputscale) || !std::isfinite(g.d_lengthscale)) {
      std::ostringstream os;
      os << "non-finite gradient at iteration " << t << " (outputscale " << s_old << ", lengthscale " << l_old
         << ", sigma " << model.sigma << ", gradient " << g.d_outputscale << ", " << g.d_lengthscale << ")";
      throw NumericalError(os.str());
    }
    out.grad_norm = std::hypot(g.d_outputscale, g.d_lengthscale);

    const double lr = cfg.lr_init + (cfg.lr_final - cfg.lr_init) * static_cast<double>(t - 1) / span;
    const Eigen::Vector2d glog(s_old * g.d_outputscale, l_old * g.d_lengthscale);
    m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * glog;
    m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * glog.cwiseProduct(glog);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    Eigen::Vector2d theta(std::log(s_old), std::log(l_old));
    for (int k = 0; k < 2; ++k) theta(k) += lr * (m1(k) / c1) / (std::sqrt(m2(k) / c2) + cfg.adam_eps);
    model.kernel.outputscale = std::exp(theta(0));
    model.kernel.lengthscale = std::exp(theta(1));

    if (update_sigma) {
      Eigen::MatrixXd factor;
      if (g.precond_factor.size() > 0) {
        // pivoted factor of K(s_old) rescaled to K(s_new) / sigma^2; still a valid preconditioner
        factor = g.precond_factor * (model.kernel.outputscale / (s_old * model.sigma));
      }
      const double s2 = sigma_update(data, model, y, cfg.solver, factor);
      if (!(s2 > 0.0) || !std::isfinite(s2)) {
        throw NumericalError("nugget update produced sigma^2 = " + std::to_string(s2) + " at iteration " +
                             std::to_string(t));
      }
      model.sigma = std::sqrt(s2);
    }
    out.iterations = t;
    if (cfg.on_step) {
      cfg.on_step(StepInfo{outer, t, model.kernel.outputscale, model.kernel.lengthscale, model.sigma, out.grad_norm,
                           g.cg_iterations});
    }
    if (out.grad_norm < cfg.grad_tol) {
      out.converged = true;
      out.reason = "gradient";
      break;
    }
    history.emplace_back(model.kernel.outputscale, model.kernel.lengthscale, update_sigma ? model.sigma : 0.0);
    if (static_cast<Index>(history.size()) > cfg.stall_window) {
      const double change = (history.back() - history.front()).norm();
      history.pop_front();
      if (change < cfg.param_stall_tol) {
        out.converged = true;
        out.reason = "stall";
        break;
      }
    }
  }
  out.model = model;
  return out;
}

}  // namespace

FitReport fit_scale_params(const GpData& data, const Eigen::VectorXd& y, const GpModel& initial,
                           const OptimizerConfig& config) {
  validate(config);
  validate(initial.kernel);
  check_sigma(initial.sigma);
  check_vector(data, y, "y");
  const auto start = std::chrono::steady_clock::now();
  const ProbeSet probes = ProbeSet::gaussian(data.size(), config.solver.n_probe, derive_seed(config.seed, 0));
  const Descent d = run_descent(data, y, initial, false, probes, config, 0);
  FitReport rep;
  rep.model = d.model;
  rep.model.beta = initial.beta;
  rep.iterations = d.iterations;
  rep.grad_norm = d.grad_norm;
  rep.converged = d.converged;
  rep.stop_reason = d.reason;
  rep.descent_iterations.push_back(d.iterations);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

FitReport fit_joint(const GpData& data, const Eigen::MatrixXd& h, const GpModel& initial,
                    const OptimizerConfig& config) {
  validate(config);
  validate(initial.kernel);
  check_sigma(initial.sigma);
  if (h.rows() != data.size()) throw InvalidArgument("design matrix row count does not match the data");
  const auto start = std::chrono::steady_clock::now();
  const Eigen::VectorXd& y = data.responses();
  const Index n = data.size();

  FitReport rep;
  const Eigen::VectorXd beta_ols = ols_estimate(h, y);
  const double eps_beta = config.beta_tol_rel * std::max(beta_ols.norm(), 1e-300);
  const Eigen::VectorXd y_ols = y - h * beta_ols;

  Index outer = 0;
  ProbeSet probes = ProbeSet::gaussian(n, config.solver.n_probe, derive_seed(config.seed, 0));
  Descent d = run_descent(data, y_ols, initial, true, probes, config, outer);
  rep.iterations += d.iterations;
  rep.descent_iterations.push_back(d.iterations);

  Eigen::VectorXd beta_avg = Eigen::VectorXd::Zero(h.cols());
  Eigen::VectorXd beta_old = beta_ols;
  Eigen::VectorXd beta_gls;
  double change = 0.0;
  std::string failure;
  do {
    beta_gls = gls_estimate(data, d.model, h, y, config.solver);
    ++outer;
    const auto i = static_cast<double>(outer);
    beta_avg = (i - 1.0) / i * beta_avg + beta_gls / i;
    const Eigen::VectorXd y_avg = y - h * beta_avg;
    if (!config.fixed_probes) {
      probes = ProbeSet::gaussian(n, config.solver.n_probe, derive_seed(config.seed, static_cast<std::uint64_t>(outer)));
    }
    try {
      d = run_descent(data, y_avg, d.model, true, probes, config, outer);
    } catch (const NumericalError& e) {
      rep.beta_history.push_back(beta_gls);
      failure = e.what();
      break;
    }
    rep.iterations += d.iterations;
    rep.descent_iterations.push_back(d.iterations);
    rep.beta_history.push_back(beta_gls);
    change = (beta_gls - beta_old).norm();
    beta_old = beta_gls;
  } while (change > eps_beta && outer < config.max_outer);

  rep.model = d.model;
  rep.model.beta = beta_gls;
  rep.outer_iterations = outer;
  rep.beta_converged = failure.empty() && change <= eps_beta;
  rep.grad_norm = d.grad_norm;
  rep.converged = d.converged && rep.beta_converged;
  if (!failure.empty()) {
    rep.stop_reason = "numerical: " + failure;
  } else {
    rep.stop_reason = rep.beta_converged ? d.reason : "max_outer";
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

Predictor::Predictor(const GpData& data, GpModel model, SolverConfig config)
    : data_(data), model_(std::move(model)), config_(std::move(config)) {
  validate(model_.kernel);
  check_sigma(model_.sigma);
  Eigen::VectorXd r = data_.responses();
  if (model_.beta.size() > 0) {
    if (model_.beta.size() != data_.dim() + 1) {
      throw InvalidArgument("beta has " + std::to_string(model_.beta.size()) + " entries, expected " +
                            std::to_string(data_.dim() + 1));
    }
    r -= design_matrix(data_.points()) * model_.beta;
  }
  const MvmPlan plan = data_.plan(model_.kernel);
  const LinearOperator op = covariance_operator(plan, model_.sigma);
  precond_ = build_precond(data_, model_.kernel, model_.sigma, config_);
  alpha_ = solve_or_throw(op, r, precond_, config_, "predict").solution.col(0);
}

Prediction Predictor::predict(const Eigen::MatrixXd& z, bool want_variance) const {
  check_points(z);
  if (z.cols() != data_.dim()) throw InvalidArgument("prediction points have the wrong dimension");
  Prediction out;
  out.mean = mvm_cross(model_.kernel, data_.points(), z, alpha_, config_.mvm).col(0);
  if (model_.beta.size() > 0) out.mean += design_matrix(z) * model_.beta;
  if (!want_variance) return out;

  const MvmPlan plan = data_.plan(model_.kernel);
  const LinearOperator op = covariance_operator(plan, model_.sigma);
  const double prior = model_.kernel.outputscale * model_.kernel.outputscale;
  out.variance.resize(z.rows());
  constexpr Index kChunk = 32;
  for (Index start = 0; start < z.rows(); start += kChunk) {
    const Index len = std::min(kChunk, z.rows() - start);
    const Eigen::MatrixXd kc = kernel_matrix(model_.kernel, data_.points(), z.middleRows(start, len));
    const CgResult cg = solve_or_throw(op, kc, precond_, config_, "predict variance");
    for (Index j = 0; j < len; ++j) {
      out.variance(start + j) = std::max(0.0, prior - kc.col(j).dot(cg.solution.col(j)));
    }
  }
  return out;
}

Prediction predict(const GpData& data, const GpModel& model, const Eigen::MatrixXd& z, bool want_variance,
                   const SolverConfig& config) {
  const Predictor p(data, model, config);
  return p.predict(z, want_variance);
}

Eigen::VectorXd simulate_gp(const KernelSpec& kernel, double sigma, const Eigen::VectorXd& beta,
                            const Eigen::MatrixXd& h, const Eigen::MatrixXd& points, std::uint64_t seed,
                            Index dense_cap) {
  check_points(points);
  const Index n = points.rows();
  if (n > dense_cap) {
    throw InvalidArgument("simulate_gp samples densely and is capped at N = " + std::to_string(dense_cap) +
                          "; supply external data for larger N");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be finite and >= 0");
  if (beta.size() > 0 && (h.rows() != n || h.cols() != beta.size())) {
    throw InvalidArgument("design matrix shape does not match beta and the points");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd g(n);
  Eigen::VectorXd g2(n);
  for (Index i = 0; i < n; ++i) g(i) = normal(rng);
  for (Index i = 0; i < n; ++i) g2(i) = normal(rng);

  Eigen::VectorXd y = sigma * g2;
  if (beta.size() > 0) y += h * beta;
  if (kernel.outputscale == 0.0) return y;
  validate(kernel);
  Eigen::MatrixXd k = kernel_matrix(kernel, points);
  const double s2 = kernel.outputscale * kernel.outputscale;
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) {
      y += llt.matrixL() * g;
      return y;
    }
    jitter = jitter == 0.0 ? 1e-12 * s2 : jitter * 10.0;
  }
  throw NumericalError("kernel matrix is not numerically positive definite");
}

}  // namespace fastgp
