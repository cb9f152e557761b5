#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fastgp/error.hpp"
#include "fastgp_cli.hpp"

namespace fastgp::cli {

using json = nlohmann::ordered_json;

namespace {

std::vector<std::string> coord_header(Index d) {
  std::vector<std::string> h;
  for (Index k = 0; k < d; ++k) h.push_back("x" + std::to_string(k + 1));
  return h;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void emit_json(const json& j, const RunConfig& config, std::ostream& out) {
  if (config.output.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(config.output);
  if (!f) throw InvalidArgument("cannot open '" + config.output + "' for writing");
  f << j.dump(2) << '\n';
}

MvmOptions mvm_from(const RunConfig& config) {
  MvmOptions m;
  m.threads = config.threads;
  return m;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint64_t out = 0;
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

json config_json(const RunConfig& c) {
  json j;
  j["lr_init"] = c.lr_init;
  j["lr_final"] = c.lr_final;
  j["max_iter"] = c.max_iter;
  j["grad_tol"] = c.grad_tol;
  j["cg_tol"] = c.cg_tol;
  j["precond_rank"] = c.precond_rank;
  j["probes"] = c.probes;
  j["lanczos_m"] = c.lanczos_m;
  j["seed"] = c.seed;
  return j;
}

std::function<void(const StepInfo&)> step_logger(const RunConfig& config, const UnitTransform& tf, std::ostream& err) {
  if (config.log_every <= 0) return {};
  const Index every = config.log_every;
  return [every, tf, &err](const StepInfo& s) {
    if (s.iteration % every != 0) return;
    err << "outer " << s.outer << " iter " << s.iteration << " outputscale " << s.outputscale << " lengthscale "
        << tf.lengthscale_to_user(s.lengthscale) << " sigma " << s.sigma << " |grad| " << s.grad_norm << " cg "
        << s.cg_iterations << '\n';
  };
}

json fit_json(const char* command, const RunConfig& config, const FitReport& rep, const UnitTransform& tf, Index n,
              Index d) {
  json j;
  j["schema"] = 1;
  j["command"] = command;
  j["kernel"] = config.kernel;
  j["form"] = config.form;
  j["n"] = n;
  j["dim"] = d;
  j["seed"] = config.seed;
  json est;
  est["outputscale"] = rep.model.kernel.outputscale;
  est["lengthscale"] = tf.lengthscale_to_user(rep.model.kernel.lengthscale);
  est["sigma"] = rep.model.sigma;
  if (rep.model.beta.size() > 0) est["beta"] = to_std(tf.beta_to_user(rep.model.beta));
  j["estimates"] = est;
  j["iterations"] = rep.iterations;
  if (!config.no_timing) j["seconds"] = rep.seconds;
  j["grad_norm"] = rep.grad_norm;
  j["converged"] = rep.converged;
  j["stop_reason"] = rep.stop_reason;
  j["descent_iterations"] = rep.descent_iterations;
  j["unit_scale"] = tf.scale();
  j["unit_offset"] = to_std(tf.offset().transpose());
  j["config"] = config_json(config);
  return j;
}

}  // namespace

KernelSpec kernel_from(const RunConfig& config, double outputscale, double lengthscale) {
  KernelSpec k;
  k.order = parse_matern_order(config.kernel);
  k.form = parse_kernel_form(config.form);
  k.outputscale = outputscale;
  k.lengthscale = lengthscale;
  if (!fast_mvm_supported(k)) {
    throw InvalidArgument("--form " + config.form + " does not support --kernel " + config.kernel +
                          " (product: matern12, matern32; l1: matern12, matern32, matern52)");
  }
  return k;
}

OptimizerConfig optimizer_from(const RunConfig& config) {
  OptimizerConfig o;
  o.lr_init = config.lr_init;
  o.lr_final = config.lr_final;
  o.max_iter = config.max_iter;
  o.grad_tol = config.grad_tol;
  o.seed = config.seed;
  o.max_outer = config.max_outer;
  o.fixed_probes = config.fixed_probes;
  o.solver.cg_tol = config.cg_tol;
  o.solver.precond_rank = config.precond_rank;
  o.solver.n_probe = config.probes;
  o.solver.lanczos_m = config.lanczos_m;
  o.solver.mvm = mvm_from(config);
  validate(o);
  return o;
}

int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (config.n < 1) throw InvalidArgument("--n must be >= 1");
  if (config.dim < 1) throw InvalidArgument("--dim must be >= 1");
  if (!(config.domain_hi > config.domain_lo)) throw InvalidArgument("--domain-hi must exceed --domain-lo");
  if (!(config.outputscale >= 0.0)) throw InvalidArgument("--outputscale must be >= 0");
  if (!config.beta.empty() && static_cast<Index>(config.beta.size()) != config.dim + 1) {
    throw InvalidArgument("--beta needs dim + 1 = " + std::to_string(config.dim + 1) + " values");
  }
  KernelSpec k;
  if (config.outputscale > 0.0) {
    k = kernel_from(config, config.outputscale, config.lengthscale);
  } else {
    k = kernel_from(config, 1.0, config.lengthscale);
    k.outputscale = 0.0;
  }

  std::mt19937_64 rng(stream_seed(config.seed, 0));
  std::uniform_real_distribution<double> unif(config.domain_lo, config.domain_hi);
  Eigen::MatrixXd x(config.n, config.dim);
  for (Index i = 0; i < config.n; ++i)
    for (Index c = 0; c < config.dim; ++c) x(i, c) = unif(rng);
  Eigen::VectorXd beta;
  Eigen::MatrixXd h;
  if (!config.beta.empty()) {
    beta = Eigen::Map<const Eigen::VectorXd>(config.beta.data(), static_cast<Index>(config.beta.size()));
    h = design_matrix(x);
  }
  const Eigen::VectorXd y = simulate_gp(k, config.sigma, beta, h, x, stream_seed(config.seed, 1));

  Eigen::MatrixXd table(config.n, config.dim + 1);
  table.leftCols(config.dim) = x;
  table.col(config.dim) = y;
  std::vector<std::string> header = coord_header(config.dim);
  header.emplace_back("y");

  json j;
  j["schema"] = 1;
  j["command"] = "simulate";
  j["seed"] = config.seed;
  j["n"] = config.n;
  j["dim"] = config.dim;
  j["kernel"] = config.kernel;
  j["form"] = config.form;
  j["outputscale"] = config.outputscale;
  j["lengthscale"] = config.lengthscale;
  j["sigma"] = config.sigma;
  j["beta"] = config.beta;
  j["domain"] = {config.domain_lo, config.domain_hi};
  if (config.output.empty()) {
    write_csv(out, header, table);
    err << j.dump(2) << '\n';
  } else {
    write_csv_file(config.output, header, table);
    j["output"] = config.output;
    out << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_fit(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const Table t = read_csv(config.input, true);
  if (t.coords.rows() < 2) throw InvalidArgument("fit needs at least 2 rows");
  const UnitTransform tf = UnitTransform::fit(t.coords);
  const double mean = t.response.mean();
  const Eigen::VectorXd yc = t.response.array() - mean;
  const GpData data(tf.to_unit(t.coords), yc, mvm_from(config));

  OptimizerConfig opt = optimizer_from(config);
  opt.on_step = step_logger(config, tf, err);
  GpModel init;
  init.kernel = kernel_from(config, config.init_outputscale.value_or(0.5),
                            config.init_lengthscale ? tf.lengthscale_to_unit(*config.init_lengthscale) : 1.0);
  init.sigma = config.sigma;
  const FitReport rep = fit_scale_params(data, yc, init, opt);

  json j = fit_json("fit", config, rep, tf, data.size(), data.dim());
  j["estimates"]["response_mean"] = mean;
  emit_json(j, config, out);
  return 0;
}

int cmd_fit_joint(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const Table t = read_csv(config.input, true);
  if (t.coords.rows() < t.coords.cols() + 2) throw InvalidArgument("fit-joint needs at least dim + 2 rows");
  const UnitTransform tf = UnitTransform::fit(t.coords);
  const GpData data(tf.to_unit(t.coords), t.response, mvm_from(config));
  const Eigen::MatrixXd h = design_matrix(data.points());

  const Eigen::VectorXd r = t.response - h * ols_estimate(h, t.response);
  const double half_sd = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()) / 2.0);
  const double start = half_sd > 0.0 ? half_sd : 1.0;
  OptimizerConfig opt = optimizer_from(config);
  opt.on_step = step_logger(config, tf, err);
  GpModel init;
  init.kernel = kernel_from(config, config.init_outputscale.value_or(start),
                            config.init_lengthscale ? tf.lengthscale_to_unit(*config.init_lengthscale) : 0.1);
  init.sigma = config.init_sigma.value_or(start);
  const FitReport rep = fit_joint(data, h, init, opt);

  json j = fit_json("fit-joint", config, rep, tf, data.size(), data.dim());
  j["config"]["max_outer"] = config.max_outer;
  j["config"]["fixed_probes"] = config.fixed_probes;
  j["outer_iterations"] = rep.outer_iterations;
  j["beta_converged"] = rep.beta_converged;
  json hist = json::array();
  for (const auto& b : rep.beta_history) hist.push_back(to_std(tf.beta_to_user(b)));
  j["beta_history"] = hist;
  emit_json(j, config, out);
  return 0;
}

int cmd_predict(const RunConfig& config, std::ostream& out, std::ostream&) {
  const Table train = read_csv(config.input, true);
  const UnitTransform tf = UnitTransform::fit(train.coords);
  const Index d = train.coords.cols();

  RunConfig kc = config;
  double s = config.outputscale;
  double l = config.lengthscale;
  double sigma = config.sigma;
  Eigen::VectorXd beta;
  if (!config.beta.empty()) {
    beta = Eigen::Map<const Eigen::VectorXd>(config.beta.data(), static_cast<Index>(config.beta.size()));
  } else {
    beta = Eigen::VectorXd::Zero(d + 1);
    beta(0) = train.response.mean();
  }
  if (!config.model.empty()) {
    std::ifstream f(config.model);
    if (!f) throw InvalidArgument("cannot open model '" + config.model + "'");
    json m;
    try {
      m = json::parse(f);
    } catch (const json::exception& e) {
      throw InvalidArgument("model '" + config.model + "' is not valid JSON: " + e.what());
    }
    if (m.value("schema", 0) != 1) throw InvalidArgument("model '" + config.model + "' has unsupported schema");
    kc.kernel = m.at("kernel").get<std::string>();
    kc.form = m.at("form").get<std::string>();
    const json& e = m.at("estimates");
    s = e.at("outputscale").get<double>();
    l = e.at("lengthscale").get<double>();
    sigma = e.at("sigma").get<double>();
    if (e.contains("beta")) {
      const auto b = e.at("beta").get<std::vector<double>>();
      beta = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Index>(b.size()));
    } else if (e.contains("response_mean")) {
      beta = Eigen::VectorXd::Zero(d + 1);
      beta(0) = e.at("response_mean").get<double>();
    }
  }
  if (beta.size() != d + 1) throw InvalidArgument("--beta needs dim + 1 = " + std::to_string(d + 1) + " values");

  Table pts = read_csv(config.points, false);
  if (pts.coords.cols() == d + 1) pts.coords.conservativeResize(Eigen::NoChange, d);
  if (pts.coords.cols() != d) {
    throw InvalidArgument("--points has " + std::to_string(pts.coords.cols()) + " columns, training data has " +
                          std::to_string(d) + " coordinates");
  }

  SolverConfig sc;
  sc.cg_tol = config.cg_tol;
  sc.precond_rank = config.precond_rank;
  sc.mvm = mvm_from(config);
  const GpData data(tf.to_unit(train.coords), train.response, sc.mvm);
  const GpModel model{kernel_from(kc, s, tf.lengthscale_to_unit(l)), sigma, tf.beta_to_unit(beta)};
  const Predictor pred(data, model, sc);
  const Prediction p = pred.predict(tf.to_unit(pts.coords), config.variance);

  Eigen::MatrixXd table(pts.coords.rows(), d + (config.variance ? 2 : 1));
  table.leftCols(d) = pts.coords;
  table.col(d) = p.mean;
  std::vector<std::string> header = coord_header(d);
  header.emplace_back("mean");
  if (config.variance) {
    table.col(d + 1) = p.variance;
    header.emplace_back("variance");
  }
  if (config.output.empty()) {
    write_csv(out, header, table);
  } else {
    write_csv_file(config.output, header, table);
  }
  return 0;
}

int cmd_bench_mvm(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (config.n_min < 1 || config.n_max < config.n_min) throw InvalidArgument("need 1 <= --n-min <= --n-max");
  if (config.reps < 1) throw InvalidArgument("--reps must be >= 1");
  if (config.dim < 1) throw InvalidArgument("--dim must be >= 1");
  const KernelSpec k = kernel_from(config, 1.0, 0.1);
  MvmOptions mo = mvm_from(config);
  mo.threads = resolve_threads(config.threads);
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };

  std::ostringstream table;
  table << "n,dim,kernel,form,threads,presort_seconds,fast_seconds,naive_seconds,rel_err,ratio\n";
  double prev = 0.0;
  for (Index n = config.n_min; n <= config.n_max; n *= 2) {
    std::mt19937_64 rng(stream_seed(config.seed, static_cast<std::uint64_t>(n)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(n, config.dim);
    Eigen::VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < config.dim; ++c) x(i, c) = unif(rng);
      y(i) = normal(rng);
    }
    auto t0 = clock::now();
    const MvmPlan plan(k, make_geometry(x, mo.leaf_size), mo);
    const double presort = secs(t0, clock::now());
    double best = INFINITY;
    Eigen::VectorXd fast;
    for (Index r = 0; r < config.reps; ++r) {
      t0 = clock::now();
      fast = mvm_fast(plan, y);
      best = std::min(best, secs(t0, clock::now()));
    }
    table << n << ',' << config.dim << ',' << config.kernel << ',' << config.form << ',' << mo.threads << ','
          << format_double(presort) << ',' << format_double(best) << ',';
    if (n <= config.naive_max) {
      t0 = clock::now();
      const Eigen::VectorXd naive = mvm_naive(k, x, y);
      const double tn = secs(t0, clock::now());
      const double rel = (fast - naive).cwiseAbs().maxCoeff() / naive.cwiseAbs().maxCoeff();
      table << format_double(tn) << ',' << format_double(rel) << ',';
    } else {
      table << ",,";
    }
    if (prev > 0.0) table << format_double(best / prev);
    table << '\n';
    prev = best;
    err << "n=" << n << " fast " << best << " s\n";
  }
  if (config.output.empty()) {
    out << table.str();
  } else {
    std::ofstream f(config.output);
    if (!f) throw InvalidArgument("cannot open '" + config.output + "' for writing");
    f << table.str();
  }
  return 0;
}

int cmd_check(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto results = run_checks(config.suites, config.inject_fault, config.seed);
  bool ok = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.suite << " (" << std::fixed << std::setprecision(2) << r.seconds
        << " s) " << r.detail << '\n';
    if (!r.passed) {
      err << "check failed: " << r.suite << ": " << r.detail << '\n';
      ok = false;
    }
  }
  return ok ? 0 : 1;
}

}  // namespace fastgp::cli
