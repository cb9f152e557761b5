#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fastgp/error.hpp"
#include "fastgp/mvm.hpp"

using namespace fastgp;

namespace {

Eigen::MatrixXd random_points(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) x(i, k) = unif(rng);
  return x;
}

Eigen::VectorXd random_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

KernelSpec spec(int order, KernelForm form, double s, double l) {
  KernelSpec k;
  k.order = order;
  k.form = form;
  k.outputscale = s;
  k.lengthscale = l;
  return k;
}

// Dense lengthscale-gradient matrix from the derivative profiles.
Eigen::MatrixXd dense_grad_l(const KernelSpec& k, const Eigen::MatrixXd& x) {
  const Index n = x.rows();
  Eigen::MatrixXd g(n, n);
  std::vector<double> u(static_cast<std::size_t>(x.cols()));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      for (Index c = 0; c < x.cols(); ++c) u[static_cast<std::size_t>(c)] = x(i, c) - x(j, c);
      g(i, j) = kernel_grad_lengthscale_multi(k, u);
    }
  return g;
}

double rel_inf(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

struct Case {
  int order;
  KernelForm form;
};

const std::vector<Case> kSupported = {{0, KernelForm::L1}, {1, KernelForm::L1},      {2, KernelForm::L1},
                                      {0, KernelForm::Product}, {1, KernelForm::Product}};

}  // namespace

TEST(MvmNaive, SinglePointGivesOutputscaleSquared) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 2, 0.3);
  Eigen::VectorXd y(1);
  y << 2.5;
  EXPECT_DOUBLE_EQ(mvm_naive(spec(1, KernelForm::L1, 1.5, 0.2), x, y)(0), 2.5 * 2.25);
}

TEST(MvmNaive, Symmetry) {
  const Eigen::MatrixXd x = random_points(200, 2, 1);
  const auto k = spec(1, KernelForm::L1, 1.0, 0.3);
  const Eigen::VectorXd y = random_vector(200, 2);
  const Eigen::VectorXd w = random_vector(200, 3);
  EXPECT_NEAR(mvm_naive(k, x, y).dot(w), mvm_naive(k, x, w).dot(y), 1e-10 * y.norm() * w.norm());
}

TEST(MvmFast, HandWorkedTwoPointSystem) {
  Eigen::MatrixXd x(2, 1);
  x << 0.0, 1.0;
  Eigen::VectorXd y(2);
  y << 1.0, 1.0;
  const auto plan = MvmPlan::create(spec(0, KernelForm::L1, 1.0, 1.0), x);
  const Eigen::VectorXd out = mvm_fast(plan, y);
  EXPECT_NEAR(out(0), 1.0 + std::exp(-1.0), 1e-15);
  EXPECT_NEAR(out(1), 1.0 + std::exp(-1.0), 1e-15);
}

TEST(MvmFast, UnitVectorGivesKernelColumn) {
  const Eigen::MatrixXd x = random_points(120, 2, 4);
  const auto k = spec(2, KernelForm::L1, 1.3, 0.25);
  const auto plan = MvmPlan::create(k, x);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(120);
  e(17) = 1.0;
  const Eigen::VectorXd col = mvm_fast(plan, e);
  for (Index i = 0; i < 120; ++i) {
    const std::vector<double> u{x(i, 0) - x(17, 0), x(i, 1) - x(17, 1)};
    EXPECT_NEAR(col(i), kernel_eval_multi(k, u), 1e-13);
  }
}

TEST(MvmFast, ZeroVectorGivesZero) {
  const auto plan = MvmPlan::create(spec(1, KernelForm::Product, 1.0, 0.3), random_points(50, 2, 5));
  EXPECT_EQ(mvm_fast(plan, Eigen::VectorXd(Eigen::VectorXd::Zero(50))).cwiseAbs().maxCoeff(), 0.0);
}

class MvmExactness : public ::testing::TestWithParam<int> {};

TEST_P(MvmExactness, MatchesNaive) {
  const int inst = GetParam();
  const Index d = 1 + inst % 3;
  const Index n = 400 + 37 * inst;
  const Eigen::MatrixXd x = random_points(n, d, 100 + static_cast<std::uint64_t>(inst));
  const Eigen::VectorXd y = random_vector(n, 200 + static_cast<std::uint64_t>(inst));
  const auto geo = make_geometry(x);
  for (const auto& c : kSupported) {
    const auto k = spec(c.order, c.form, 0.7 + 0.1 * inst, 0.05 + 0.02 * inst);
    const MvmPlan plan(k, geo);
    EXPECT_LE(rel_inf(mvm_fast(plan, y), mvm_naive(k, x, y)), 1e-10)
        << "order " << c.order << " form " << static_cast<int>(c.form) << " d=" << d;
  }
}

INSTANTIATE_TEST_SUITE_P(Instances, MvmExactness, ::testing::Range(0, 6));

TEST(MvmFast, Linearity) {
  const Eigen::MatrixXd x = random_points(300, 2, 7);
  const auto plan = MvmPlan::create(spec(2, KernelForm::L1, 1.0, 0.2), x);
  const Eigen::VectorXd y = random_vector(300, 8);
  const Eigen::VectorXd w = random_vector(300, 9);
  const Eigen::VectorXd lhs = mvm_fast(plan, Eigen::VectorXd(2.0 * y - 3.0 * w));
  const Eigen::VectorXd rhs = 2.0 * mvm_fast(plan, y) - 3.0 * mvm_fast(plan, w);
  EXPECT_LE(rel_inf(lhs, rhs), 1e-12);
}

TEST(MvmFast, SymmetryOfBilinearForm) {
  const Eigen::MatrixXd x = random_points(300, 3, 10);
  for (const auto& c : kSupported) {
    const auto plan = MvmPlan::create(spec(c.order, c.form, 1.0, 0.3), x);
    const Eigen::VectorXd y = random_vector(300, 11);
    const Eigen::VectorXd w = random_vector(300, 12);
    const double a = mvm_fast(plan, y).dot(w);
    const double b = mvm_fast(plan, w).dot(y);
    EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
  }
}

TEST(MvmFast, BlockMatchesColumns) {
  const Eigen::MatrixXd x = random_points(250, 2, 13);
  const auto plan = MvmPlan::create(spec(1, KernelForm::Product, 1.0, 0.2), x);
  Eigen::MatrixXd y(250, 3);
  for (Index c = 0; c < 3; ++c) y.col(c) = random_vector(250, 14 + static_cast<std::uint64_t>(c));
  const Eigen::MatrixXd block = mvm_fast(plan, y);
  for (Index c = 0; c < 3; ++c) EXPECT_LE(rel_inf(block.col(c), mvm_fast(plan, Eigen::VectorXd(y.col(c)))), 1e-14);
}

TEST(MvmFast, ThreadCountDoesNotChangeResult) {
  const Eigen::MatrixXd x = random_points(500, 3, 15);
  const Eigen::VectorXd y = random_vector(500, 16);
  const auto k = spec(2, KernelForm::L1, 1.0, 0.2);
  MvmOptions one;
  one.threads = 1;
  MvmOptions four;
  four.threads = 4;
  const auto geo = make_geometry(x);
  EXPECT_EQ(mvm_fast(MvmPlan(k, geo, one), y), mvm_fast(MvmPlan(k, geo, four), y));
}

TEST(MvmFast, DuplicatePointsAndTies) {
  Eigen::MatrixXd x = random_points(200, 2, 17);
  for (Index i = 0; i < 200; ++i) x(i, 0) = std::round(x(i, 0) * 5.0) / 5.0;
  x.row(5) = x.row(6);
  const Eigen::VectorXd y = random_vector(200, 18);
  for (const auto& c : kSupported) {
    const auto k = spec(c.order, c.form, 1.0, 0.1);
    EXPECT_LE(rel_inf(mvm_fast(MvmPlan::create(k, x), y), mvm_naive(k, x, y)), 1e-10);
  }
}

TEST(MvmFast, OverflowGuard) {
  const Eigen::MatrixXd x = random_points(30, 1, 19) * 1000.0;
  const auto plan = MvmPlan::create(spec(0, KernelForm::L1, 1.0, 0.1), x);
  EXPECT_THROW((void)mvm_fast(plan, random_vector(30, 20)), NumericalError);
}

TEST(MvmFast, UnsupportedCombinationsRejected) {
  const Eigen::MatrixXd x = random_points(10, 2, 21);
  EXPECT_THROW((void)MvmPlan::create(spec(2, KernelForm::Product, 1.0, 1.0), x), InvalidArgument);
  EXPECT_THROW((void)MvmPlan::create(spec(3, KernelForm::L1, 1.0, 1.0), x), InvalidArgument);
}

TEST(MvmFast, RhsShapeChecked) {
  const auto plan = MvmPlan::create(spec(0, KernelForm::L1, 1.0, 1.0), random_points(10, 2, 22));
  EXPECT_THROW((void)mvm_fast(plan, Eigen::VectorXd(Eigen::VectorXd::Zero(9))), InvalidArgument);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(10);
  bad(3) = NAN;
  EXPECT_THROW((void)mvm_fast(plan, bad), InvalidArgument);
}

TEST(MvmGradLengthscale, SinglePointIsZero) {
  const auto plan = MvmPlan::create(spec(2, KernelForm::L1, 1.0, 0.3), Eigen::MatrixXd::Constant(1, 2, 0.1));
  Eigen::VectorXd y(1);
  y << 3.0;
  EXPECT_EQ(mvm_grad_lengthscale(plan, y)(0), 0.0);
}

TEST(MvmGradLengthscale, MatchesDenseGradientMatrix) {
  const Eigen::MatrixXd x = random_points(300, 2, 23);
  const Eigen::VectorXd y = random_vector(300, 24);
  for (const auto& c : kSupported) {
    const auto k = spec(c.order, c.form, 1.2, 0.15);
    const auto plan = MvmPlan::create(k, x);
    EXPECT_LE(rel_inf(mvm_grad_lengthscale(plan, y), dense_grad_l(k, x) * y), 1e-10)
        << "order " << c.order << " form " << static_cast<int>(c.form);
  }
}

TEST(MvmGradLengthscale, MatchesFiniteDifferences) {
  std::mt19937_64 rng(25);
  for (int cfg = 0; cfg < 20; ++cfg) {
    const auto& c = kSupported[static_cast<std::size_t>(cfg) % kSupported.size()];
    const Index d = 1 + cfg % 3;
    const Eigen::MatrixXd x = random_points(300, d, rng());
    const Eigen::VectorXd y = random_vector(300, rng());
    const double l = std::uniform_real_distribution<double>(0.05, 0.5)(rng);
    const auto k = spec(c.order, c.form, 1.0, l);
    const auto geo = make_geometry(x);
    const double h = l * 1e-6;
    const Eigen::VectorXd fd =
        (mvm_fast(MvmPlan(k.with_scales(1.0, l + h), geo), y) - mvm_fast(MvmPlan(k.with_scales(1.0, l - h), geo), y)) /
        (2.0 * h);
    EXPECT_LE(rel_inf(mvm_grad_lengthscale(MvmPlan(k, geo), y), fd), 1e-6) << "config " << cfg;
  }
}

TEST(MvmGradOutputscale, TwiceKyAtUnitScale) {
  const Eigen::MatrixXd x = random_points(200, 2, 26);
  const Eigen::VectorXd y = random_vector(200, 27);
  const auto plan = MvmPlan::create(spec(1, KernelForm::L1, 1.0, 0.2), x);
  EXPECT_LE(rel_inf(mvm_grad_outputscale(plan, y), 2.0 * mvm_fast(plan, y)), 1e-15);
}

TEST(MvmGradOutputscale, MatchesDenseOracle) {
  const Eigen::MatrixXd x = random_points(200, 2, 28);
  const Eigen::VectorXd y = random_vector(200, 29);
  const double s = 1.7;
  const auto k = spec(2, KernelForm::L1, s, 0.2);
  Eigen::MatrixXd dk(200, 200);
  for (Index i = 0; i < 200; ++i)
    for (Index j = 0; j < 200; ++j) {
      const double r = std::abs(x(i, 0) - x(j, 0)) + std::abs(x(i, 1) - x(j, 1));
      dk(i, j) = 2.0 * s * matern_standard(2, r / 0.2);
    }
  EXPECT_LE(rel_inf(mvm_grad_outputscale(MvmPlan::create(k, x), y), dk * y), 1e-10);
  EXPECT_EQ(mvm_grad_outputscale(MvmPlan::create(k, x), Eigen::VectorXd(Eigen::VectorXd::Zero(200))).norm(), 0.0);
}

TEST(MvmWithGrad, CombinedPassMatchesSeparateCalls) {
  const Eigen::MatrixXd x = random_points(300, 2, 30);
  Eigen::MatrixXd y(300, 2);
  y.col(0) = random_vector(300, 31);
  y.col(1) = random_vector(300, 32);
  for (const auto& c : kSupported) {
    const auto plan = MvmPlan::create(spec(c.order, c.form, 1.0, 0.2), x);
    const MvmWithGrad both = mvm_fast_with_grad(plan, y);
    EXPECT_LE(rel_inf(both.ky, mvm_fast(plan, y)), 1e-13);
    EXPECT_LE(rel_inf(both.dky_dl, mvm_grad_lengthscale(plan, y)), 1e-13);
  }
}

TEST(MvmCross, MatchesNaiveAtExternalPoints) {
  const Eigen::MatrixXd x = random_points(300, 2, 33);
  const Eigen::MatrixXd z = random_points(40, 2, 34);
  const Eigen::VectorXd y = random_vector(300, 35);
  for (const auto& c : kSupported) {
    const auto k = spec(c.order, c.form, 1.0, 0.2);
    EXPECT_LE(rel_inf(mvm_cross(k, x, z, y), mvm_cross_naive(k, x, z, y)), 1e-10);
  }
}

TEST(MvmFaultInjection, FlippedWeightsDisagree) {
  const Eigen::MatrixXd x = random_points(100, 2, 36);
  const Eigen::VectorXd y = random_vector(100, 37);
  const auto k = spec(1, KernelForm::L1, 1.0, 0.2);
  MvmOptions opt;
  opt.fault_flip_weight_sign = true;
  EXPECT_GT(rel_inf(mvm_fast(MvmPlan::create(k, x, opt), y), mvm_naive(k, x, y)), 1e-3);
}

TEST(Threads, EnvironmentCap) {
  ::setenv("FASTGP_THREADS", "2", 1);
  EXPECT_EQ(resolve_threads(8), 2);
  EXPECT_EQ(resolve_threads(0), 2);
  EXPECT_EQ(resolve_threads(1), 1);
  ::unsetenv("FASTGP_THREADS");
  EXPECT_GE(resolve_threads(0), 1);
}
