#include <iostream>

#include <CLI11.hpp>

#include "fastgp/error.hpp"
#include "fastgp_cli.hpp"

using fastgp::cli::RunConfig;

namespace {

void kernel_flags(CLI::App* app, RunConfig& c) {
  app->add_option("--kernel", c.kernel, "Matern smoothness")
      ->check(CLI::IsMember({"matern12", "matern32", "matern52"}))
      ->capture_default_str();
  app->add_option("--form", c.form, "Multivariate form")->check(CLI::IsMember({"l1", "product"}))->capture_default_str();
}

void solver_flags(CLI::App* app, RunConfig& c) {
  app->add_option("--cg-tol", c.cg_tol, "CG stopping threshold on the squared residual norm")->capture_default_str();
  app->add_option("--precond-rank", c.precond_rank, "Pivoted Cholesky rank (0 = none)")->capture_default_str();
  app->add_option("--threads", c.threads, "MVM worker threads (0 = FASTGP_THREADS or hardware)");
}

void optimizer_flags(CLI::App* app, RunConfig& c) {
  app->add_option("--lr-init", c.lr_init, "Initial ADAM learning rate")->capture_default_str();
  app->add_option("--lr-final", c.lr_final, "Final ADAM learning rate")->capture_default_str();
  app->add_option("--max-iter", c.max_iter, "ADAM steps per descent")->capture_default_str();
  app->add_option("--grad-tol", c.grad_tol, "Stop when the gradient norm drops below")->capture_default_str();
  app->add_option("--probes", c.probes, "Probe vectors for trace and log-det estimates")->capture_default_str();
  app->add_option("--lanczos-m", c.lanczos_m, "Lanczos steps for the log-det estimate")->capture_default_str();
  app->add_option("--init-outputscale", c.init_outputscale, "Starting outputscale");
  app->add_option("--init-lengthscale", c.init_lengthscale, "Starting lengthscale (data units)");
  app->add_option("--log-every", c.log_every, "Print optimizer progress to stderr every k steps");
  app->add_flag("--no-timing", c.no_timing, "Omit wall time from the report");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian process regression with fast exact kernel matrix-vector products"};
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig c;
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--output", c.output, "Output file (default stdout)");

  auto* sim = app.add_subcommand("simulate", "Sample a GP dataset and write it as CSV");
  kernel_flags(sim, c);
  sim->add_option("--dim", c.dim, "Input dimension")->capture_default_str();
  sim->add_option("--n", c.n, "Number of points")->capture_default_str();
  sim->add_option("--outputscale", c.outputscale, "True outputscale (0 = noise only)")->capture_default_str();
  sim->add_option("--lengthscale", c.lengthscale, "True lengthscale")->capture_default_str();
  sim->add_option("--sigma", c.sigma, "Nugget standard deviation")->capture_default_str();
  sim->add_option("--beta", c.beta, "Affine mean: intercept then one slope per coordinate");
  sim->add_option("--domain-lo", c.domain_lo, "Lower bound of the coordinate box")->capture_default_str();
  sim->add_option("--domain-hi", c.domain_hi, "Upper bound of the coordinate box")->capture_default_str();

  auto* fit = app.add_subcommand("fit", "Estimate outputscale and lengthscale at a fixed nugget");
  kernel_flags(fit, c);
  solver_flags(fit, c);
  optimizer_flags(fit, c);
  fit->add_option("--input", c.input, "Training CSV")->required();
  fit->add_option("--sigma", c.sigma, "Fixed nugget standard deviation")->capture_default_str();

  auto* joint = app.add_subcommand("fit-joint", "Estimate affine mean, nugget, outputscale and lengthscale");
  kernel_flags(joint, c);
  solver_flags(joint, c);
  optimizer_flags(joint, c);
  joint->add_option("--input", c.input, "Training CSV")->required();
  joint->add_option("--init-sigma", c.init_sigma, "Starting nugget standard deviation");
  joint->add_option("--max-outer", c.max_outer, "Cap on mean-update rounds")->capture_default_str();
  joint->add_flag("--fixed-probes", c.fixed_probes, "Keep the first round's probe vectors in every later round");

  auto* pred = app.add_subcommand("predict", "Posterior mean and variance at new points");
  kernel_flags(pred, c);
  solver_flags(pred, c);
  pred->add_option("--input", c.input, "Training CSV")->required();
  pred->add_option("--points", c.points, "CSV of evaluation coordinates")->required();
  pred->add_option("--model", c.model, "JSON report from fit or fit-joint");
  pred->add_option("--outputscale", c.outputscale, "Outputscale when no model is given");
  pred->add_option("--lengthscale", c.lengthscale, "Lengthscale when no model is given");
  pred->add_option("--sigma", c.sigma, "Nugget sd when no model is given");
  pred->add_option("--beta", c.beta, "Affine mean when no model is given (default: response mean)");
  pred->add_flag("--variance", c.variance, "Also output the latent posterior variance");

  auto* bench = app.add_subcommand("bench-mvm", "Time fast against direct MVM over doubling N");
  kernel_flags(bench, c);
  bench->add_option("--dim", c.dim, "Input dimension")->capture_default_str();
  bench->add_option("--n-min", c.n_min, "Smallest N")->capture_default_str();
  bench->add_option("--n-max", c.n_max, "Largest N")->capture_default_str();
  bench->add_option("--reps", c.reps, "Repetitions per size (minimum time kept)")->capture_default_str();
  bench->add_option("--naive-max", c.naive_max, "Largest N timed with the direct sum")->capture_default_str();
  bench->add_option("--threads", c.threads, "MVM worker threads (0 = FASTGP_THREADS or hardware)");

  auto* check = app.add_subcommand("check", "Run the embedded oracle and property suites");
  check->add_option("--suite", c.suites, "Run only these suites")->check(CLI::IsMember(fastgp::cli::check_suite_names()));
  check->add_flag("--inject-fault", c.inject_fault, "Corrupt the MVM weights; suites must fail");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return fastgp::cli::cmd_simulate(c, std::cout, std::cerr);
    if (fit->parsed()) return fastgp::cli::cmd_fit(c, std::cout, std::cerr);
    if (joint->parsed()) return fastgp::cli::cmd_fit_joint(c, std::cout, std::cerr);
    if (pred->parsed()) return fastgp::cli::cmd_predict(c, std::cout, std::cerr);
    if (bench->parsed()) return fastgp::cli::cmd_bench_mvm(c, std::cout, std::cerr);
    if (check->parsed()) return fastgp::cli::cmd_check(c, std::cout, std::cerr);
  } catch (const fastgp::Error& e) {
    std::cerr << "fastgp: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fastgp: unexpected error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
