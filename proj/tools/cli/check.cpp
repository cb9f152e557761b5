#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "fastgp/cdf.hpp"
#include "fastgp/error.hpp"
#include "fastgp_cli.hpp"

namespace fastgp::cli {

namespace {

struct Ctx {
  std::mt19937_64 rng;
  MvmOptions mvm;
};

Eigen::MatrixXd uniform_points(Ctx& c, Index n, Index d, bool ties = false) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) x(i, k) = ties ? std::floor(u(c.rng) * 12.0) / 12.0 : u(c.rng);
  return x;
}

Eigen::MatrixXd gaussian(Ctx& c, Index n, Index m) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd z(n, m);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < n; ++i) z(i, j) = g(c.rng);
  return z;
}

KernelSpec kspec(int order, KernelForm form, double s, double l) {
  KernelSpec k;
  k.order = order;
  k.form = form;
  k.outputscale = s;
  k.lengthscale = l;
  return k;
}

const std::vector<std::pair<int, KernelForm>>& supported() {
  static const std::vector<std::pair<int, KernelForm>> s = {
      {0, KernelForm::L1}, {1, KernelForm::L1}, {2, KernelForm::L1}, {0, KernelForm::Product}, {1, KernelForm::Product}};
  return s;
}

std::string label(int order, KernelForm form) {
  KernelSpec k = kspec(order, form, 1.0, 1.0);
  return kernel_name(k) + (form == KernelForm::L1 ? "/l1" : "/product");
}

double rel_inf(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

// Every suite returns an empty string on success, else the failure detail.
using Suite = std::function<std::string(Ctx&, std::string&)>;

std::string orthant_partition(Ctx& c, std::string& info) {
  double worst = 0.0;
  for (Index d = 1; d <= 4; ++d) {
    const Eigen::MatrixXd x = uniform_points(c, 1500, d, true);
    const Eigen::VectorXd w = gaussian(c, 1500, 1);
    const PresortIndex p = build_presort(x);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(1500);
    for (unsigned bits = 0; bits < (1u << d); ++bits) total += weighted_cdf_multi(p, SignVector::from_bits(bits, d), w);
    worst = std::max(worst, (total.array() - w.sum()).abs().maxCoeff() / w.cwiseAbs().sum());
  }
  info = "max rel deviation " + sci(worst);
  return worst <= 1e-12 ? "" : "orthant sums do not add up to the total mass: " + sci(worst);
}

std::string decomposition_identity(Ctx& c, std::string& info) {
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  double worst = 0.0;
  for (int order = 0; order <= 2; ++order) {
    const KernelSpec k = kspec(order, KernelForm::L1, 1.0, 1.0);
    const PhiDecomposition kd = phi_factors(k);
    const PhiDecomposition gd = lengthscale_phi_factors(k);
    for (int t = 0; t < 200; ++t) {
      double a = u(c.rng);
      double b = u(c.rng);
      if (a < b) std::swap(a, b);
      double sk = 0.0;
      double sg = 0.0;
      for (std::size_t p = 0; p < kd.size(); ++p) sk += kd.phi1(p, a) * kd.phi2(p, b);
      for (std::size_t p = 0; p < gd.size(); ++p) sg += gd.phi1(p, a) * gd.phi2(p, b);
      const double r = a - b;
      const double kr = matern_standard(order, r);
      const double gr = -r * matern_standard_derivative(order, r);
      worst = std::max(worst, std::abs(sk - kr) / std::max(1.0, std::abs(kr)));
      worst = std::max(worst, std::abs(sg - gr) / std::max(1.0, std::abs(gr)));
    }
  }
  info = "max error " + sci(worst);
  return worst <= 1e-12 ? "" : "phi factors do not reproduce the kernel: " + sci(worst);
}

std::string mvm_oracle(Ctx& c, std::string& info) {
  double worst = 0.0;
  std::string where;
  for (const auto& [order, form] : supported()) {
    for (Index d = 1; d <= 3; ++d) {
      for (Index n : {50, 500, 1500}) {
        std::uniform_real_distribution<double> ul(0.03, 0.5);
        const KernelSpec k = kspec(order, form, 1.0, ul(c.rng));
        const Eigen::MatrixXd x = uniform_points(c, n, d);
        const Eigen::MatrixXd y = gaussian(c, n, 1);
        const double e = rel_inf(mvm_fast(MvmPlan::create(k, x, c.mvm), y), mvm_naive(k, x, y));
        if (e > worst) {
          worst = e;
          where = label(order, form) + " d=" + std::to_string(d) + " N=" + std::to_string(n);
        }
      }
    }
  }
  info = "max rel error " + sci(worst) + " (" + where + ")";
  return worst <= 1e-10 ? "" : "fast MVM disagrees with the direct sum: " + sci(worst) + " at " + where;
}

std::string gradient_check(Ctx& c, std::string& info) {
  double worst_dense = 0.0;
  double worst_fd = 0.0;
  for (const auto& [order, form] : supported()) {
    for (Index d = 1; d <= 3; ++d) {
      std::uniform_real_distribution<double> ul(0.05, 0.5);
      const double l = ul(c.rng);
      const KernelSpec k = kspec(order, form, 1.3, l);
      const Eigen::MatrixXd x = uniform_points(c, 300, d);
      const Eigen::VectorXd y = gaussian(c, 300, 1);
      const auto geo = make_geometry(x);
      const Eigen::VectorXd g = mvm_grad_lengthscale(MvmPlan(k, geo, c.mvm), y);
      Eigen::MatrixXd dense(300, 300);
      std::vector<double> u(static_cast<std::size_t>(d));
      for (Index i = 0; i < 300; ++i)
        for (Index j = 0; j < 300; ++j) {
          for (Index q = 0; q < d; ++q) u[static_cast<std::size_t>(q)] = x(i, q) - x(j, q);
          dense(i, j) = kernel_grad_lengthscale_multi(k, u);
        }
      worst_dense = std::max(worst_dense, rel_inf(g, dense * y));
      const double h = 1e-6 * l;
      const Eigen::VectorXd fd = (mvm_fast(MvmPlan(k.with_scales(1.3, l + h), geo, c.mvm), y) -
                                  mvm_fast(MvmPlan(k.with_scales(1.3, l - h), geo, c.mvm), y)) /
                                 (2.0 * h);
      worst_fd = std::max(worst_fd, rel_inf(g, fd));
    }
  }
  info = "vs dense " + sci(worst_dense) + ", vs finite differences " + sci(worst_fd);
  if (worst_dense > 1e-10) return "lengthscale gradient disagrees with the dense gradient: " + sci(worst_dense);
  if (worst_fd > 1e-6) return "lengthscale gradient disagrees with finite differences: " + sci(worst_fd);
  return "";
}

std::string cg_monotonicity(Ctx& c, std::string& info) {
  // CG minimises the A-norm of the error over growing Krylov spaces, so it
  // can never increase; this holds with and without preconditioning.
  Index steps = 0;
  double worst = 0.0;
  for (int t = 0; t < 4; ++t) {
    const KernelSpec k = kspec(0, KernelForm::L1, 1.0, 0.2);
    const double sigma = 0.3;
    const Eigen::MatrixXd x = uniform_points(c, 400, 2);
    Eigen::MatrixXd a = kernel_matrix(k, x);
    a.diagonal().array() += sigma * sigma;
    const Eigen::VectorXd b = gaussian(c, 400, 1);
    const Eigen::VectorXd exact = a.llt().solve(b);
    const LinearOperator op = covariance_operator(MvmPlan::create(k, x, c.mvm), sigma);
    const Preconditioner pre = t % 2 == 0 ? Preconditioner{} : make_preconditioner(k, x, 40, sigma);
    std::vector<double> err;
    CgOptions opt;
    opt.tol = 1e-20 * b.squaredNorm();
    opt.max_iter = 400;
    opt.observer = [&](Index, const Eigen::MatrixXd& xk, const Eigen::MatrixXd&) {
      const Eigen::VectorXd e = xk.col(0) - exact;
      err.push_back(std::sqrt(std::max(0.0, e.dot(a * e))));
    };
    const CgResult r = cg_lanczos(op, b, pre, opt);
    for (std::size_t i = 1; i < err.size(); ++i) {
      worst = std::max(worst, (err[i] - err[i - 1]) / err.front());
      ++steps;
    }
    const double sol_err = (r.solution.col(0) - exact).norm() / exact.norm();
    if (sol_err > 1e-6) return "CG solution off by " + sci(sol_err);
  }
  info = std::to_string(steps) + " steps, max relative increase " + sci(std::max(worst, 0.0));
  return worst <= 1e-10 ? "" : "A-norm error increased by " + sci(worst);
}

std::string pd_proxy(Ctx& c, std::string& info) {
  std::uniform_int_distribution<Index> un(20, 200);
  std::uniform_int_distribution<Index> ud(1, 3);
  std::uniform_real_distribution<double> ul(0.05, 1.0);
  std::ostringstream bad;
  std::ostringstream all;
  bool ok = true;
  for (const auto& [order, form] : supported()) {
    double worst = INFINITY;
    Index fails = 0;
    std::map<Index, std::pair<Index, Index>> by_dim;  // d -> (failed, total)
    for (int t = 0; t < 50; ++t) {
      const Index n = un(c.rng);
      const Index d = ud(c.rng);
      const KernelSpec k = kspec(order, form, 1.0, ul(c.rng));
      const Eigen::MatrixXd km = kernel_matrix(k, uniform_points(c, n, d));
      const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(km, Eigen::EigenvaluesOnly).eigenvalues()(0);
      worst = std::min(worst, lo / static_cast<double>(n));
      ++by_dim[d].second;
      if (lo < -1e-8 * static_cast<double>(n)) {
        ++fails;
        ++by_dim[d].first;
      }
    }
    all << label(order, form) << " min eig/N " << sci(worst) << "; ";
    if (fails > 0) {
      ok = false;
      bad << label(order, form) << " negative in " << fails << "/50 datasets (";
      for (const auto& [d, ft] : by_dim) bad << "d=" << d << ": " << ft.first << "/" << ft.second << " ";
      bad << "min eig/N " << sci(worst) << "); ";
    }
  }
  info = all.str();
  return ok ? "" : "kernel matrices not positive semidefinite: " + bad.str();
}

std::string seed_determinism(Ctx& c, std::string& info) {
  const Eigen::MatrixXd x = uniform_points(c, 200, 2);
  const KernelSpec k = kspec(0, KernelForm::L1, 1.0, 0.2);
  if (simulate_gp(k, 1.0, {}, {}, x, 11) != simulate_gp(k, 1.0, {}, {}, x, 11)) return "simulate_gp not reproducible";
  if (ProbeSet::gaussian(200, 5, 3).z != ProbeSet::gaussian(200, 5, 3).z) return "probe draw not reproducible";
  const LinearOperator op = covariance_operator(MvmPlan::create(k, x, c.mvm), 0.5);
  if (logdet_estimate(op, Preconditioner{}, 5, 20, 4) != logdet_estimate(op, Preconditioner{}, 5, 20, 4)) {
    return "log-det estimate not reproducible";
  }
  MvmOptions one = c.mvm;
  one.threads = 1;
  MvmOptions many = c.mvm;
  many.threads = 4;
  const Eigen::MatrixXd y = gaussian(c, 200, 2);
  if (mvm_fast(MvmPlan::create(k, x, one), y) != mvm_fast(MvmPlan::create(k, x, many), y)) {
    return "MVM depends on the thread count";
  }
  const Eigen::VectorXd yy = simulate_gp(k, 0.5, {}, {}, x, 12);
  const GpData data(x, yy, c.mvm);
  OptimizerConfig opt;
  opt.max_iter = 15;
  opt.seed = 5;
  opt.solver.precond_rank = 20;
  opt.solver.mvm = c.mvm;
  const GpModel init{kspec(0, KernelForm::L1, 0.5, 1.0), 0.5, {}};
  const FitReport a = fit_scale_params(data, yy, init, opt);
  const FitReport b = fit_scale_params(data, yy, init, opt);
  if (a.model.kernel.outputscale != b.model.kernel.outputscale ||
      a.model.kernel.lengthscale != b.model.kernel.lengthscale || a.iterations != b.iterations) {
    return "ADAM fit not reproducible";
  }
  info = "simulate, probes, log-det, MVM threads 1/4, 15-step fit";
  return "";
}

std::string likelihood_oracle(Ctx& c, std::string& info) {
  const Eigen::MatrixXd x = uniform_points(c, 400, 2);
  const KernelSpec k = kspec(0, KernelForm::L1, 1.0, 0.15);
  const double sigma = 1.0;
  const Eigen::VectorXd y = simulate_gp(k, sigma, {}, {}, x, 21);
  Eigen::MatrixXd a = kernel_matrix(k, x);
  a.diagonal().array() += sigma * sigma;
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = y.dot(llt.solve(y));
  const double exact = -0.5 * quad - 0.5 * logdet - 200.0 * std::log(2.0 * 3.14159265358979323846);
  SolverConfig sc;
  sc.precond_rank = 100;
  sc.n_probe = 30;
  sc.cg_tol = 1e-12;
  sc.mvm = c.mvm;
  const double est = log_likelihood(GpData(x, y, c.mvm), GpModel{k, sigma, {}}, y, sc, 22);
  const double allowed = 0.5 * 0.02 * std::abs(logdet) + 1e-6 * 400.0;
  info = "stochastic " + std::to_string(est) + " vs dense " + std::to_string(exact);
  return std::abs(est - exact) <= allowed ? "" : "likelihood off by " + sci(std::abs(est - exact));
}

std::string io_roundtrip(Ctx& c, std::string& info) {
  Eigen::MatrixXd t = gaussian(c, 50, 3);
  t(0, 0) = 1.0 / 3.0;
  t(1, 1) = 5e-310;
  t(2, 2) = -1.2345678901234567e300;
  std::ostringstream os;
  write_csv(os, {"x1", "x2", "y"}, t);
  std::istringstream is(os.str());
  const Table back = parse_csv(is, "roundtrip", true);
  if (back.coords != t.leftCols(2) || back.response != t.col(2)) return "CSV round trip is not bitwise";
  const Eigen::MatrixXd x = uniform_points(c, 30, 2) * 2e6;
  const UnitTransform tf = UnitTransform::fit(x);
  const Eigen::Vector3d beta(-53.0, -8.4e-6, 4.5e-6);
  const Eigen::VectorXd back_beta = tf.beta_to_user(tf.beta_to_unit(beta));
  const double eb = ((back_beta - beta).array() / beta.array()).abs().maxCoeff();
  const double el = std::abs(tf.lengthscale_to_user(tf.lengthscale_to_unit(4e5)) - 4e5) / 4e5;
  const double ex = rel_inf(tf.from_unit(tf.to_unit(x)), x);
  info = "beta " + sci(eb) + ", lengthscale " + sci(el) + ", coords " + sci(ex);
  if (std::max({eb, el, ex}) > 1e-12) return "unit transform round trip error " + sci(std::max({eb, el, ex}));
  return "";
}

const std::vector<std::pair<std::string, Suite>>& registry() {
  static const std::vector<std::pair<std::string, Suite>> r = {
      {"orthant-partition", orthant_partition}, {"decomposition-identity", decomposition_identity},
      {"mvm-oracle", mvm_oracle},               {"gradient-check", gradient_check},
      {"cg-monotonicity", cg_monotonicity},     {"pd-proxy", pd_proxy},
      {"seed-determinism", seed_determinism},   {"likelihood-oracle", likelihood_oracle},
      {"io-roundtrip", io_roundtrip}};
  return r;
}

}  // namespace

std::vector<std::string> check_suite_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

std::vector<CheckResult> run_checks(const std::vector<std::string>& suites, bool inject_fault, std::uint64_t seed) {
  for (const auto& s : suites) {
    const auto& r = registry();
    if (std::none_of(r.begin(), r.end(), [&](const auto& e) { return e.first == s; })) {
      std::string names;
      for (const auto& n : check_suite_names()) names += " " + n;
      throw InvalidArgument("unknown check suite '" + s + "'; available:" + names);
    }
  }
  std::vector<CheckResult> out;
  std::uint64_t stream = 0;
  for (const auto& [name, fn] : registry()) {
    ++stream;
    if (!suites.empty() && std::find(suites.begin(), suites.end(), name) == suites.end()) continue;
    Ctx ctx{std::mt19937_64(seed * 1000003ULL + stream), MvmOptions{}};
    ctx.mvm.fault_flip_weight_sign = inject_fault;
    CheckResult res;
    res.suite = name;
    const auto t0 = std::chrono::steady_clock::now();
    std::string info;
    try {
      const std::string failure = fn(ctx, info);
      res.passed = failure.empty();
      res.detail = res.passed ? info : failure;
    } catch (const std::exception& e) {
      res.passed = false;
      res.detail = std::string("exception: ") + e.what();
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace fastgp::cli
