#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fastgp/cdf.hpp"
#include "fastgp/error.hpp"

using namespace fastgp;

namespace {

Eigen::MatrixXd random_points(Index n, Index d, std::uint64_t seed, bool with_ties = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < d; ++k) {
      x(i, k) = with_ties ? std::floor(unif(rng) * 7.0) / 7.0 : unif(rng);
    }
  }
  return x;
}

Eigen::VectorXd random_weights(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd w(n);
  for (Index i = 0; i < n; ++i) w(i) = normal(rng);
  return w;
}

// Definition, written independently of the library.
Eigen::VectorXd oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, const std::vector<int>& delta) {
  const Index n = x.rows();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (Index j = 0; j < n; ++j) {
    long double acc = 0.0L;
    for (Index i = 0; i < n; ++i) {
      bool in = true;
      for (Index k = 0; k < x.cols(); ++k) {
        const double a = delta[static_cast<std::size_t>(k)] * x(i, k);
        const double b = delta[static_cast<std::size_t>(k)] * x(j, k);
        in = in && (delta[static_cast<std::size_t>(k)] > 0 ? a <= b : a < b);
      }
      if (in) acc += w(i);
    }
    out(j) = static_cast<double>(acc);
  }
  return out;
}

std::vector<int> signs(unsigned bits, Index d) {
  std::vector<int> s(static_cast<std::size_t>(d));
  for (Index k = 0; k < d; ++k) s[static_cast<std::size_t>(k)] = ((bits >> k) & 1u) ? -1 : 1;
  return s;
}

}  // namespace

TEST(Presort, SortedInputGivesIdentity) {
  Eigen::MatrixXd x(5, 1);
  x << 0.0, 1.0, 2.0, 3.0, 4.0;
  const auto p = build_presort(x);
  EXPECT_EQ(p.order(0), (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));
}

TEST(Presort, ReversedInput) {
  Eigen::MatrixXd x(5, 1);
  x << 4.0, 3.0, 2.0, 1.0, 0.0;
  const auto p = build_presort(x);
  EXPECT_EQ(p.order(0), (std::vector<std::uint32_t>{4, 3, 2, 1, 0}));
}

TEST(Presort, PermutationsSortEveryCoordinate) {
  const Eigen::MatrixXd x = random_points(1000, 3, 11);
  const auto p = build_presort(x);
  for (Index k = 0; k < 3; ++k) {
    const auto& ord = p.order(k);
    ASSERT_EQ(ord.size(), 1000u);
    for (std::size_t t = 1; t < ord.size(); ++t) EXPECT_LE(x(ord[t - 1], k), x(ord[t], k));
  }
}

TEST(Presort, StableOnTies) {
  Eigen::MatrixXd x(4, 1);
  x << 1.0, 0.0, 1.0, 0.0;
  const auto p = build_presort(x);
  EXPECT_EQ(p.order(0), (std::vector<std::uint32_t>{1, 3, 0, 2}));
}

TEST(Presort, NanReportsRow) {
  Eigen::MatrixXd x = random_points(10, 2, 1);
  x(7, 1) = NAN;
  try {
    (void)build_presort(x);
    FAIL() << "expected an exception";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("row 7"), std::string::npos);
  }
}

TEST(Cdf1d, FullMassAndEmpty) {
  std::vector<double> x{0.1, 0.2, 0.2, 0.9};
  std::vector<double> w(4, 0.25);
  std::vector<double> z{-1.0, 0.2, 0.9};
  const Eigen::VectorXd f = weighted_cdf_1d(x, w, z);
  EXPECT_EQ(f(0), 0.0);
  EXPECT_DOUBLE_EQ(f(1), 0.75);
  EXPECT_DOUBLE_EQ(f(2), 1.0);
}

TEST(Cdf1d, MatchesNaive) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> x(200);
  std::vector<double> z(150);
  for (auto& v : x) v = unif(rng);
  for (auto& v : z) v = unif(rng);
  std::sort(x.begin(), x.end());
  std::sort(z.begin(), z.end());
  const Eigen::VectorXd w = random_weights(200, 6);
  const Eigen::VectorXd f = weighted_cdf_1d(x, std::span<const double>(w.data(), 200), z);
  for (std::size_t j = 0; j < z.size(); ++j) {
    double ref = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] <= z[j]) ref += w(static_cast<Index>(i));
      scale += std::abs(w(static_cast<Index>(i)));
    }
    EXPECT_NEAR(f(static_cast<Index>(j)), ref, 1e-13 * scale);
  }
}

TEST(Cdf1d, RejectsUnsorted) {
  std::vector<double> x{0.3, 0.1};
  std::vector<double> w{1.0, 1.0};
  std::vector<double> z{0.5};
  EXPECT_THROW((void)weighted_cdf_1d(x, w, z), InvalidArgument);
  std::vector<double> xs{0.1, 0.3};
  std::vector<double> zu{0.5, 0.2};
  EXPECT_THROW((void)weighted_cdf_1d(xs, w, zu), InvalidArgument);
}

TEST(CdfMulti, MatchesOracleEveryOrthant2d) {
  const Eigen::MatrixXd x = random_points(300, 2, 21);
  const Eigen::VectorXd w = random_weights(300, 22);
  const auto p = build_presort(x);
  for (unsigned bits = 0; bits < 4; ++bits) {
    const auto s = signs(bits, 2);
    const Eigen::VectorXd ref = oracle(x, w, s);
    const Eigen::VectorXd got = weighted_cdf_multi(p, SignVector(s), w);
    EXPECT_LE((got - ref).cwiseAbs().maxCoeff(), 1e-12 * w.cwiseAbs().sum()) << "orthant " << bits;
  }
}

class CdfOracleSweep : public ::testing::TestWithParam<int> {};

TEST_P(CdfOracleSweep, RandomInstances) {
  const int inst = GetParam();
  std::mt19937_64 rng(static_cast<std::uint64_t>(inst) * 77 + 1);
  const Index d = 1 + inst % 3;
  const Index n = std::uniform_int_distribution<Index>(1, 500)(rng);
  const bool ties = inst % 2 == 0;
  const Eigen::MatrixXd x = random_points(n, d, rng(), ties);
  const Eigen::VectorXd w = random_weights(n, rng());
  PresortOptions opt;
  opt.leaf_size = std::uniform_int_distribution<Index>(1, 70)(rng);
  const auto p = build_presort(x, opt);
  for (unsigned bits = 0; bits < (1u << d); ++bits) {
    const auto s = signs(bits, d);
    const Eigen::VectorXd ref = oracle(x, w, s);
    const Eigen::VectorXd got = weighted_cdf_multi(p, SignVector(s), w);
    const double scale = std::max(ref.cwiseAbs().maxCoeff(), 1e-300);
    EXPECT_LE((got - ref).cwiseAbs().maxCoeff(), 1e-12 * std::max(scale, w.cwiseAbs().sum()))
        << "n=" << n << " d=" << d << " leaf=" << opt.leaf_size;
  }
}

INSTANTIATE_TEST_SUITE_P(Instances, CdfOracleSweep, ::testing::Range(0, 20));

TEST(CdfMulti, OrthantsPartitionTotalMass) {
  for (Index d = 1; d <= 4; ++d) {
    const Eigen::MatrixXd x = random_points(400, d, 30 + static_cast<std::uint64_t>(d), true);
    const Eigen::VectorXd w = random_weights(400, 31);
    const auto p = build_presort(x);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(400);
    for (unsigned bits = 0; bits < (1u << d); ++bits) total += weighted_cdf_multi(p, SignVector::from_bits(bits, d), w);
    EXPECT_LE((total.array() - w.sum()).abs().maxCoeff(), 1e-12 * w.cwiseAbs().sum()) << "d=" << d;
  }
}

TEST(CdfMulti, ZeroWeightsGiveZero) {
  const Eigen::MatrixXd x = random_points(100, 3, 40);
  const auto p = build_presort(x);
  const Eigen::VectorXd f = weighted_cdf_multi(p, SignVector({1, -1, 1}), Eigen::VectorXd::Zero(100));
  EXPECT_EQ(f.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CdfMulti, AllPointsIdentical) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(150, 2, 0.5);
  const Eigen::VectorXd w = random_weights(150, 41);
  const auto p = build_presort(x);
  EXPECT_LE((weighted_cdf_multi(p, SignVector({1, 1}), w).array() - w.sum()).abs().maxCoeff(), 1e-12);
  EXPECT_EQ(weighted_cdf_multi(p, SignVector({1, -1}), w).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CdfMulti, DimensionMismatch) {
  const auto p = build_presort(random_points(10, 2, 1));
  EXPECT_THROW((void)weighted_cdf_multi(p, SignVector({1, 1, 1}), Eigen::VectorXd::Zero(10)), InvalidArgument);
  EXPECT_THROW((void)weighted_cdf_multi(p, SignVector({1, 1}), Eigen::VectorXd::Zero(9)), InvalidArgument);
  EXPECT_THROW(SignVector({1, 0}), InvalidArgument);
}

TEST(CdfMulti, ReuseAcrossManyWeightVectors) {
  const Eigen::MatrixXd x = random_points(250, 2, 50);
  const auto reused = build_presort(x);
  const SignVector s({-1, 1});
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd w = random_weights(250, 1000 + static_cast<std::uint64_t>(t));
    const Eigen::VectorXd a = weighted_cdf_multi(reused, s, w);
    const Eigen::VectorXd b = weighted_cdf_multi(build_presort(x), s, w);
    ASSERT_EQ(a, b);
  }
}

TEST(CdfMulti, BlockColumnsMatchSingleColumns) {
  const Eigen::MatrixXd x = random_points(333, 3, 60);
  const auto p = build_presort(x);
  RowMatrix w(333, 4);
  for (Index c = 0; c < 4; ++c) w.col(c) = random_weights(333, 61 + static_cast<std::uint64_t>(c));
  const SignVector s({1, -1, -1});
  const RowMatrix f = weighted_cdf_block(p, s, w);
  for (Index c = 0; c < 4; ++c) {
    const Eigen::VectorXd single = weighted_cdf_multi(p, s, Eigen::VectorXd(w.col(c)));
    EXPECT_EQ(Eigen::VectorXd(f.col(c)), single);
  }
}

TEST(CdfMulti, CompensationFlagAgrees) {
  const Eigen::MatrixXd x = random_points(400, 2, 70);
  const Eigen::VectorXd w = random_weights(400, 71);
  const auto p = build_presort(x);
  const SignVector s({1, 1});
  const Eigen::VectorXd a = weighted_cdf_multi(p, s, w, CdfOptions{true});
  const Eigen::VectorXd b = weighted_cdf_multi(p, s, w, CdfOptions{false});
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12 * w.cwiseAbs().sum());
}

TEST(CdfExternal, MatchesNaiveAtNewPoints) {
  const Eigen::MatrixXd x = random_points(200, 2, 80, true);
  const Eigen::MatrixXd z = random_points(60, 2, 81, true);
  const Eigen::VectorXd w = random_weights(200, 82);
  for (unsigned bits = 0; bits < 4; ++bits) {
    const SignVector s = SignVector::from_bits(bits, 2);
    const Eigen::VectorXd got = weighted_cdf_external(x, w, z, s);
    const Eigen::VectorXd ref = weighted_cdf_naive(x, w, z, s);
    EXPECT_LE((got - ref).cwiseAbs().maxCoeff(), 1e-12 * w.cwiseAbs().sum());
  }
}
