#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fastgp/error.hpp"
#include "fastgp_cli.hpp"

using namespace fastgp;
using namespace fastgp::cli;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("fastgp_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Table parse(const std::string& text, bool has_response = true) {
  std::istringstream is(text);
  return parse_csv(is, "mem", has_response);
}

RunConfig simulate_config(const std::string& out, Index n, Index d, std::uint64_t seed) {
  RunConfig c;
  c.output = out;
  c.n = n;
  c.dim = d;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Csv, ParsesHeaderCoordinatesAndResponse) {
  const Table t = parse("x1,x2,y\n0.5,1e-3,2\n-1,+3,4.25\n");
  ASSERT_EQ(t.header.size(), 3u);
  EXPECT_EQ(t.coords.rows(), 2);
  EXPECT_EQ(t.coords.cols(), 2);
  EXPECT_EQ(t.coords(1, 1), 3.0);
  EXPECT_EQ(t.response(1), 4.25);
}

TEST(Csv, MalformedRowReportsLineNumber) {
  try {
    (void)parse("x,y\n1,2\n3,abc\n");
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("mem:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)parse("x,y\n1,2,3\n"), InvalidArgument);
  EXPECT_THROW((void)parse("x,y\n1,nan\n"), InvalidArgument);
  EXPECT_THROW((void)parse("x,y\n1,\n"), InvalidArgument);
}

TEST(Csv, HeaderRequired) {
  EXPECT_THROW((void)parse("1,2\n3,4\n"), InvalidArgument);
  EXPECT_THROW((void)parse(""), InvalidArgument);
  EXPECT_THROW((void)parse("x,y\n"), InvalidArgument);
}

TEST(Csv, RoundTripIsBitwise) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(200, 3);
  for (Index i = 0; i < 200; ++i)
    for (Index j = 0; j < 3; ++j) m(i, j) = g(rng) * std::pow(10.0, static_cast<double>(i % 40) - 20.0);
  m(0, 0) = 0.1;
  m(1, 1) = 4.9e-324;
  std::ostringstream os;
  write_csv(os, {"x1", "x2", "y"}, m);
  const Table t = parse(os.str());
  EXPECT_EQ(t.coords, m.leftCols(2));
  EXPECT_EQ(t.response, m.col(2));
}

TEST(UnitTransform, RoundTripsWithinTolerance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(1e5, 2e6);
  Eigen::MatrixXd x(100, 2);
  for (Index i = 0; i < 100; ++i) x.row(i) << u(rng), 0.5 * u(rng);
  const UnitTransform tf = UnitTransform::fit(x);
  const Eigen::MatrixXd xu = tf.to_unit(x);
  EXPECT_GE(xu.minCoeff(), 0.0);
  EXPECT_LE(xu.maxCoeff(), 1.0);
  EXPECT_NEAR(xu.col(0).maxCoeff() - xu.col(0).minCoeff(), 1.0, 1e-15);
  const Eigen::Vector3d beta(-53.0, -8.4e-6, 4.5e-6);
  const Eigen::VectorXd back = tf.beta_to_user(tf.beta_to_unit(beta));
  EXPECT_LE(((back - beta).array() / beta.array()).abs().maxCoeff(), 1e-12);
  EXPECT_NEAR(tf.lengthscale_to_user(tf.lengthscale_to_unit(4e5)), 4e5, 4e5 * 1e-12);
  // the affine mean takes the same values in both coordinate systems
  const Eigen::VectorXd bu = tf.beta_to_unit(beta);
  for (Index i = 0; i < 5; ++i) {
    const double user = beta(0) + beta(1) * x(i, 0) + beta(2) * x(i, 1);
    const double unit = bu(0) + bu(1) * xu(i, 0) + bu(2) * xu(i, 1);
    EXPECT_NEAR(user, unit, 1e-12 * std::abs(user));
  }
}

TEST(CmdSimulate, WritesRowsAndIsReproducible) {
  TempDir dir;
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(cmd_simulate(simulate_config(dir.file("a.csv"), 100, 2, 7), out, err), 0);
  std::ostringstream out2;
  ASSERT_EQ(cmd_simulate(simulate_config(dir.file("b.csv"), 100, 2, 7), out2, err), 0);
  const Table t = read_csv(dir.file("a.csv"), true);
  EXPECT_EQ(t.coords.rows(), 100);
  EXPECT_EQ(t.header, (std::vector<std::string>{"x1", "x2", "y"}));
  EXPECT_EQ(slurp(dir.file("a.csv")), slurp(dir.file("b.csv")));
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j.at("schema"), 1);
  EXPECT_EQ(j.at("seed"), 7);
}

TEST(CmdSimulate, NoiseOnlyVariance) {
  TempDir dir;
  RunConfig c = simulate_config(dir.file("n.csv"), 1000, 1, 3);
  c.outputscale = 0.0;
  c.sigma = 1.0;
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(cmd_simulate(c, out, err), 0);
  const Table t = read_csv(dir.file("n.csv"), true);
  const double mean = t.response.mean();
  const double var = (t.response.array() - mean).square().sum() / 999.0;
  EXPECT_GE(var, 0.8);
  EXPECT_LE(var, 1.2);
}

TEST(CmdSimulate, UnwritablePathFails) {
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_THROW((void)cmd_simulate(simulate_config("/nonexistent/dir/x.csv", 10, 1, 1), out, err), InvalidArgument);
}

TEST(CmdFit, MinimalTwoPointFitCompletes) {
  TempDir dir;
  {
    std::ofstream f(dir.file("two.csv"));
    f << "x1,y\n0.1,0.3\n0.7,-0.2\n";
  }
  RunConfig c;
  c.input = dir.file("two.csv");
  c.max_iter = 50;
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(cmd_fit(c, out, err), 0);
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j.at("schema"), 1);
  EXPECT_GT(j.at("estimates").at("lengthscale").get<double>(), 0.0);
}

TEST(CmdFit, SameSeedSameReport) {
  TempDir dir;
  std::ostringstream sink;
  ASSERT_EQ(cmd_simulate(simulate_config(dir.file("d.csv"), 300, 2, 4), sink, sink), 0);
  RunConfig c;
  c.input = dir.file("d.csv");
  c.max_iter = 30;
  c.seed = 5;
  c.no_timing = true;
  std::ostringstream a;
  std::ostringstream b;
  ASSERT_EQ(cmd_fit(c, a, sink), 0);
  ASSERT_EQ(cmd_fit(c, b, sink), 0);
  EXPECT_EQ(a.str(), b.str());
  const auto j = nlohmann::json::parse(a.str());
  for (const char* key : {"iterations", "grad_norm", "converged", "stop_reason", "estimates"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_FALSE(j.contains("seconds"));
}

TEST(CmdFit, RejectsUnsupportedKernelForm) {
  TempDir dir;
  std::ostringstream sink;
  ASSERT_EQ(cmd_simulate(simulate_config(dir.file("d.csv"), 20, 2, 4), sink, sink), 0);
  RunConfig c;
  c.input = dir.file("d.csv");
  c.kernel = "matern52";
  c.form = "product";
  EXPECT_THROW((void)cmd_fit(c, sink, sink), InvalidArgument);
}

TEST(CmdFitJoint, ReportsBetaInUserUnits) {
  TempDir dir;
  RunConfig s = simulate_config(dir.file("j.csv"), 300, 2, 8);
  s.domain_lo = 1000.0;
  s.domain_hi = 5000.0;
  s.outputscale = 0.3;
  s.lengthscale = 800.0;
  s.sigma = 0.5;
  s.beta = {4.0, 1e-3, -2e-3};
  std::ostringstream sink;
  ASSERT_EQ(cmd_simulate(s, sink, sink), 0);
  RunConfig c;
  c.input = dir.file("j.csv");
  c.max_iter = 100;
  c.lr_init = 0.05;
  c.lr_final = 0.005;
  c.max_outer = 2;
  c.precond_rank = 30;
  std::ostringstream out;
  ASSERT_EQ(cmd_fit_joint(c, out, sink), 0);
  const auto j = nlohmann::json::parse(out.str());
  const auto beta = j.at("estimates").at("beta").get<std::vector<double>>();
  ASSERT_EQ(beta.size(), 3u);
  EXPECT_NEAR(beta[1], 1e-3, 5e-4);
  EXPECT_NEAR(beta[2], -2e-3, 5e-4);
  EXPECT_GE(j.at("outer_iterations").get<int>(), 1);
  EXPECT_EQ(j.at("beta_history").size(), j.at("outer_iterations").get<std::size_t>());
}

TEST(CmdPredict, UsesModelReport) {
  TempDir dir;
  std::ostringstream sink;
  ASSERT_EQ(cmd_simulate(simulate_config(dir.file("t.csv"), 200, 1, 9), sink, sink), 0);
  {
    std::ofstream m(dir.file("model.json"));
    m << R"({"schema": 1, "kernel": "matern12", "form": "l1",
             "estimates": {"outputscale": 1.0, "lengthscale": 0.1, "sigma": 1.0, "response_mean": 0.0}})";
    std::ofstream p(dir.file("p.csv"));
    p << "x1\n0.25\n0.5\n5.0\n";
  }
  RunConfig c;
  c.input = dir.file("t.csv");
  c.points = dir.file("p.csv");
  c.model = dir.file("model.json");
  c.variance = true;
  std::ostringstream out;
  ASSERT_EQ(cmd_predict(c, out, sink), 0);
  const Table t = parse(out.str(), false);
  ASSERT_EQ(t.coords.rows(), 3);
  ASSERT_EQ(t.coords.cols(), 3);
  // far from every training point: prior mean and prior variance
  EXPECT_NEAR(t.coords(2, 1), 0.0, 1e-10);
  EXPECT_NEAR(t.coords(2, 2), 1.0, 1e-10);
  EXPECT_LT(t.coords(0, 2), 1.0);
}

TEST(CmdBenchMvm, SmallGridIsExact) {
  RunConfig c;
  c.n_min = 16;
  c.n_max = 256;
  c.reps = 1;
  c.dim = 2;
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(cmd_bench_mvm(c, out, err), 0);
  std::istringstream is(out.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("n,dim,", 0), 0u);
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    ASSERT_GE(cells.size(), 9u);
    EXPECT_LE(std::stod(cells[8]), 1e-10) << line;
    if (rows == 1) EXPECT_EQ(cells[0], "16");
  }
  EXPECT_EQ(rows, 5);
}

TEST(CmdCheck, SelectedSuitesPassAndFaultFails) {
  RunConfig c;
  c.suites = {"orthant-partition", "decomposition-identity", "mvm-oracle"};
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(cmd_check(c, out, err), 0) << out.str();
  c.inject_fault = true;
  std::ostringstream out2;
  EXPECT_NE(cmd_check(c, out2, err), 0);
  EXPECT_NE(out2.str().find("FAIL mvm-oracle"), std::string::npos);
}

TEST(CmdCheck, UnknownSuiteRejected) {
  RunConfig c;
  c.suites = {"nope"};
  std::ostringstream sink;
  EXPECT_THROW((void)cmd_check(c, sink, sink), InvalidArgument);
}
