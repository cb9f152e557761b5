#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fastgp/gp.hpp"

namespace fastgp::cli {

/// Coordinates (and, when present, the trailing response column) of a CSV.
struct Table {
  std::vector<std::string> header;
  Eigen::MatrixXd coords;
  Eigen::VectorXd response;
};

/// Parses comma-separated numeric rows under one header line. With
/// `has_response` the last column is the response. Errors carry the line number.
[[nodiscard]] Table parse_csv(std::istream& in, const std::string& name, bool has_response);
[[nodiscard]] Table read_csv(const std::string& path, bool has_response);

/// 17 significant digits; round-trips every double.
[[nodiscard]] std::string format_double(double v);
void write_csv(std::ostream& out, const std::vector<std::string>& header, const Eigen::MatrixXd& columns);
void write_csv_file(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& columns);

/// x_unit = (x - offset) / scale with one scale for every coordinate (the
/// largest range), so an isotropic kernel stays isotropic.
class UnitTransform {
 public:
  UnitTransform() = default;
  UnitTransform(Eigen::RowVectorXd offset, double scale);
  static UnitTransform fit(const Eigen::MatrixXd& points);

  [[nodiscard]] Eigen::MatrixXd to_unit(const Eigen::MatrixXd& points) const;
  [[nodiscard]] Eigen::MatrixXd from_unit(const Eigen::MatrixXd& points) const;
  [[nodiscard]] double lengthscale_to_user(double l) const { return l * scale_; }
  [[nodiscard]] double lengthscale_to_unit(double l) const { return l / scale_; }
  /// Affine-mean coefficients, intercept first.
  [[nodiscard]] Eigen::VectorXd beta_to_user(const Eigen::VectorXd& beta) const;
  [[nodiscard]] Eigen::VectorXd beta_to_unit(const Eigen::VectorXd& beta) const;

  [[nodiscard]] const Eigen::RowVectorXd& offset() const { return offset_; }
  [[nodiscard]] double scale() const { return scale_; }

 private:
  Eigen::RowVectorXd offset_;
  double scale_ = 1.0;
};

struct RunConfig {
  std::string kernel = "matern12";
  std::string form = "l1";
  Index dim = 1;
  Index n = 1000;

  double lr_init = 0.005;
  double lr_final = 0.0005;
  Index max_iter = 20000;
  double grad_tol = 1e-3;
  double cg_tol = 1e-5;
  Index precond_rank = 100;
  Index probes = 10;
  Index lanczos_m = 50;
  Index max_outer = 10;
  bool fixed_probes = false;
  std::uint64_t seed = 0;
  int threads = 0;

  std::string input;
  std::string output;

  // simulate: true parameters; fit: sigma is the fixed nugget
  double outputscale = 1.0;
  double lengthscale = 0.1054;
  double sigma = 1.0;
  std::vector<double> beta;
  double domain_lo = 0.0;
  double domain_hi = 1.0;

  // starting values in user units
  std::optional<double> init_outputscale;
  std::optional<double> init_lengthscale;
  std::optional<double> init_sigma;
  bool no_timing = false;
  Index log_every = 0;

  // predict
  std::string points;
  std::string model;
  bool variance = false;

  // bench-mvm
  Index n_min = 16;
  Index n_max = 131072;
  Index reps = 3;
  Index naive_max = 10000;

  // check
  std::vector<std::string> suites;
  bool inject_fault = false;
};

[[nodiscard]] KernelSpec kernel_from(const RunConfig& config, double outputscale, double lengthscale);
[[nodiscard]] OptimizerConfig optimizer_from(const RunConfig& config);

/// Each command writes its primary output (JSON, CSV) to `out` unless
/// `config.output` names a file, logs to `err`, and returns the exit status.
int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_fit(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_fit_joint(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_predict(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_bench_mvm(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_check(const RunConfig& config, std::ostream& out, std::ostream& err);

struct CheckResult {
  std::string suite;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

[[nodiscard]] std::vector<std::string> check_suite_names();
/// Runs the named suites (all when empty). `inject_fault` turns on the MVM
/// weight-sign fault so the oracle suites must fail.
[[nodiscard]] std::vector<CheckResult> run_checks(const std::vector<std::string>& suites, bool inject_fault,
                                                  std::uint64_t seed);

}  // namespace fastgp::cli
