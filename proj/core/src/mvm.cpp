#include "fastgp/mvm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fastgp/error.hpp"

namespace fastgp {

namespace {

constexpr double kMaxExponent = 700.0;

void check_rhs(Index n, const Eigen::MatrixXd& y) {
  if (y.rows() != n) {
    throw InvalidArgument("right-hand side has " + std::to_string(y.rows()) + " rows, expected " +
                          std::to_string(n));
  }
  if (y.cols() < 1) throw InvalidArgument("right-hand side has no columns");
  if (!y.allFinite()) throw InvalidArgument("right-hand side contains non-finite values");
}

void guard_exponent(double arg, const KernelSpec& kernel) {
  if (std::abs(arg) > kMaxExponent) {
    std::ostringstream os;
    os << "exponential weight argument " << arg << " exceeds " << kMaxExponent
       << " (lengthscale " << kernel.lengthscale
       << "); rescale the coordinates, e.g. to [0,1]^d, or use a larger lengthscale";
    throw NumericalError(os.str());
  }
}

// Per-orthant contribution to K Y (and optionally (dK/dl) Y), unscaled.
using OrthantFn = std::function<void(unsigned bits, Eigen::MatrixXd& k_part, Eigen::MatrixXd* g_part)>;

// Sums the orthant contributions in lexicographic order. With several
// threads every contribution is computed separately and reduced in the same
// order, so the result does not depend on the thread count.
void orthant_sum(const MvmPlan& plan, Index m, bool want_grad, const OrthantFn& fn, Eigen::MatrixXd& k_out,
                 Eigen::MatrixXd* g_out) {
  const Index n = plan.size();
  const unsigned count = 1u << plan.dim();
  k_out = Eigen::MatrixXd::Zero(n, m);
  if (want_grad) *g_out = Eigen::MatrixXd::Zero(n, m);
  const int threads = std::min<int>(resolve_threads(plan.options().threads), static_cast<int>(count));
  if (threads <= 1) {
    Eigen::MatrixXd kp;
    Eigen::MatrixXd gp;
    for (unsigned bits = 0; bits < count; ++bits) {
      fn(bits, kp, want_grad ? &gp : nullptr);
      k_out += kp;
      if (want_grad) *g_out += gp;
    }
    return;
  }
  std::vector<Eigen::MatrixXd> kparts(count);
  std::vector<Eigen::MatrixXd> gparts(count);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (unsigned bits = static_cast<unsigned>(t); bits < count; bits += static_cast<unsigned>(threads)) {
          fn(bits, kparts[bits], want_grad ? &gparts[bits] : nullptr);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (unsigned bits = 0; bits < count; ++bits) {
    k_out += kparts[bits];
    if (want_grad) *g_out += gparts[bits];
  }
}

class L1Engine {
 public:
  L1Engine(const MvmPlan& plan, bool want_grad)
      : plan_(plan),
        want_grad_(want_grad),
        dq_(phi_factors(plan.kernel())),
        dg_(lengthscale_phi_factors(plan.kernel())),
        terms_(want_grad ? dg_.size() : dq_.size()) {}

  void operator()(const Eigen::MatrixXd& y, unsigned bits, Eigen::MatrixXd& k_part, Eigen::MatrixXd* g_part) const {
    const auto& geo = plan_.geometry();
    const Index n = plan_.size();
    const Index d = plan_.dim();
    const Index m = y.cols();
    const double inv_l = 1.0 / plan_.kernel().lengthscale;
    const double rate = dq_.rate();
    const double flip = plan_.options().fault_flip_weight_sign ? -1.0 : 1.0;
    const SignVector delta = SignVector::from_bits(bits, d);
    const auto a_count = static_cast<Index>(terms_);

    Eigen::VectorXd v(n);
    for (Index i = 0; i < n; ++i) {
      v(i) = delta.dot(&geo.centered(i, 0), geo.centered.rows()) * inv_l;
      guard_exponent(rate * v(i), plan_.kernel());
    }
    RowMatrix w(n, a_count * m);
    for (Index i = 0; i < n; ++i) {
      double base = std::exp(flip * rate * v(i));
      for (Index a = 0; a < a_count; ++a) {
        for (Index r = 0; r < m; ++r) w(i, a * m + r) = y(i, r) * base;
        base *= v(i);
      }
    }
    const RowMatrix f = weighted_cdf_block(geo.presort, delta, w, CdfOptions{plan_.options().compensated});

    k_part.setZero(n, m);
    if (g_part != nullptr) g_part->setZero(n, m);
    const auto q_count = static_cast<Index>(dq_.size());
    for (Index j = 0; j < n; ++j) {
      const double e = std::exp(-rate * v(j));
      for (Index a = 0; a < q_count; ++a) {
        const double c = dq_.phi1_poly_value(static_cast<std::size_t>(a), v(j)) * e;
        for (Index r = 0; r < m; ++r) k_part(j, r) += c * f(j, a * m + r);
      }
      if (g_part != nullptr) {
        for (Index a = 0; a < static_cast<Index>(dg_.size()); ++a) {
          const double c = dg_.phi1_poly_value(static_cast<std::size_t>(a), v(j)) * e;
          for (Index r = 0; r < m; ++r) (*g_part)(j, r) += c * f(j, a * m + r);
        }
      }
    }
  }

 private:
  const MvmPlan& plan_;
  bool want_grad_;
  PhiDecomposition dq_;
  PhiDecomposition dg_;
  std::size_t terms_;
};

// Product form: each coordinate factor poly(t_k - s_k) splits into target
// polynomials times source powers s_k^a, so one orthant needs a CDF column
// per multi-index a. The gradient replaces one coordinate's factor at a time
// by the lengthscale profile.
class ProductEngine {
 public:
  ProductEngine(const MvmPlan& plan, bool want_grad)
      : plan_(plan),
        dq_(phi_factors(plan.kernel())),
        dg_(lengthscale_phi_factors(plan.kernel())),
        base_(want_grad ? dg_.size() : dq_.size()) {
    combos_ = 1;
    for (Index k = 0; k < plan.dim(); ++k) combos_ *= base_;
  }

  void operator()(const Eigen::MatrixXd& y, unsigned bits, Eigen::MatrixXd& k_part, Eigen::MatrixXd* g_part) const {
    const auto& geo = plan_.geometry();
    const Index n = plan_.size();
    const Index d = plan_.dim();
    const Index m = y.cols();
    const double inv_l = 1.0 / plan_.kernel().lengthscale;
    const double rate = dq_.rate();
    const double flip = plan_.options().fault_flip_weight_sign ? -1.0 : 1.0;
    const SignVector delta = SignVector::from_bits(bits, d);
    const auto combos = static_cast<Index>(combos_);
    const auto base = static_cast<std::size_t>(base_);
    const std::size_t q_size = dq_.size();
    const std::size_t g_size = dg_.size();

    Eigen::MatrixXd s(n, d);
    Eigen::VectorXd total(n);
    for (Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (Index k = 0; k < d; ++k) {
        s(i, k) = delta[k] * geo.centered(i, k) * inv_l;
        acc += s(i, k);
      }
      total(i) = acc;
      guard_exponent(rate * acc, plan_.kernel());
    }

    std::vector<std::size_t> digits(static_cast<std::size_t>(d));
    auto decode = [&](Index idx) {
      auto rest = static_cast<std::size_t>(idx);
      for (Index k = d - 1; k >= 0; --k) {
        digits[static_cast<std::size_t>(k)] = rest % base;
        rest /= base;
      }
    };

    RowMatrix w(n, combos * m);
    for (Index i = 0; i < n; ++i) {
      const double e = std::exp(flip * rate * total(i));
      for (Index idx = 0; idx < combos; ++idx) {
        decode(idx);
        double prod = e;
        for (Index k = 0; k < d; ++k) prod *= std::pow(s(i, k), static_cast<double>(digits[static_cast<std::size_t>(k)]));
        for (Index r = 0; r < m; ++r) w(i, idx * m + r) = y(i, r) * prod;
      }
    }
    const RowMatrix f = weighted_cdf_block(geo.presort, delta, w, CdfOptions{plan_.options().compensated});

    k_part.setZero(n, m);
    if (g_part != nullptr) g_part->setZero(n, m);
    std::vector<double> pq(static_cast<std::size_t>(d) * q_size);
    std::vector<double> pg(static_cast<std::size_t>(d) * g_size);
    for (Index j = 0; j < n; ++j) {
      const double e = std::exp(-rate * total(j));
      for (Index k = 0; k < d; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        for (std::size_t a = 0; a < q_size; ++a) pq[kk * q_size + a] = dq_.phi1_poly_value(a, s(j, k));
        for (std::size_t a = 0; a < g_size; ++a) pg[kk * g_size + a] = dg_.phi1_poly_value(a, s(j, k));
      }
      for (Index idx = 0; idx < combos; ++idx) {
        decode(idx);
        std::size_t over = 0;  // coordinates whose digit exceeds the kernel degree
        std::size_t over_k = 0;
        for (std::size_t k = 0; k < static_cast<std::size_t>(d); ++k) {
          if (digits[k] >= q_size) {
            ++over;
            over_k = k;
          }
        }
        if (over == 0) {
          double c = e;
          for (std::size_t k = 0; k < static_cast<std::size_t>(d); ++k) c *= pq[k * q_size + digits[k]];
          for (Index r = 0; r < m; ++r) k_part(j, r) += c * f(j, idx * m + r);
        }
        if (g_part == nullptr || over > 1) continue;
        double cg = 0.0;
        for (std::size_t k = 0; k < static_cast<std::size_t>(d); ++k) {
          if (over == 1 && k != over_k) continue;
          double c = pg[k * g_size + digits[k]];
          for (std::size_t o = 0; o < static_cast<std::size_t>(d); ++o) {
            if (o != k) c *= pq[o * q_size + digits[o]];
          }
          cg += c;
        }
        cg *= e;
        for (Index r = 0; r < m; ++r) (*g_part)(j, r) += cg * f(j, idx * m + r);
      }
    }
  }

 private:
  const MvmPlan& plan_;
  PhiDecomposition dq_;
  PhiDecomposition dg_;
  std::size_t base_;
  std::size_t combos_ = 1;
};

void run_fast(const MvmPlan& plan, const Eigen::MatrixXd& y, bool want_k, bool want_grad, Eigen::MatrixXd* k_out,
              Eigen::MatrixXd* g_out) {
  check_rhs(plan.size(), y);
  const KernelSpec& kernel = plan.kernel();
  Eigen::MatrixXd k_sum;
  Eigen::MatrixXd g_sum;
  const bool product = kernel.form == KernelForm::Product && kernel.order > 0;
  if (product) {
    const ProductEngine engine(plan, want_grad);
    orthant_sum(
        plan, y.cols(), want_grad,
        [&](unsigned bits, Eigen::MatrixXd& kp, Eigen::MatrixXd* gp) { engine(y, bits, kp, gp); }, k_sum,
        &g_sum);
  } else {
    const L1Engine engine(plan, want_grad);
    orthant_sum(
        plan, y.cols(), want_grad,
        [&](unsigned bits, Eigen::MatrixXd& kp, Eigen::MatrixXd* gp) { engine(y, bits, kp, gp); }, k_sum,
        &g_sum);
  }
  const double s2 = kernel.outputscale * kernel.outputscale;
  if (want_k) {
    *k_out = s2 * k_sum;
    if (!k_out->allFinite()) throw NumericalError("fast MVM produced non-finite values; rescale the coordinates");
  }
  if (want_grad) {
    *g_out = (s2 / kernel.lengthscale) * g_sum;
    if (!g_out->allFinite()) {
      throw NumericalError("fast gradient MVM produced non-finite values; rescale the coordinates");
    }
  }
}

}  // namespace

int resolve_threads(int requested) {
  int cap = 0;
  if (const char* env = std::getenv("FASTGP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) cap = static_cast<int>(std::min<long>(v, 1024));
  }
  int n = requested;
  if (n <= 0) n = cap > 0 ? cap : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (cap > 0) n = std::min(n, cap);
  return std::max(1, n);
}

std::shared_ptr<const MvmGeometry> make_geometry(const Eigen::MatrixXd& points, Index leaf_size) {
  check_points(points);
  auto geo = std::make_shared<MvmGeometry>();
  const Eigen::RowVectorXd lo = points.colwise().minCoeff();
  const Eigen::RowVectorXd hi = points.colwise().maxCoeff();
  geo->center = 0.5 * (lo + hi);
  geo->centered = points.rowwise() - geo->center;
  geo->presort = PresortIndex(points, PresortOptions{leaf_size});
  return geo;
}

MvmPlan::MvmPlan(KernelSpec kernel, std::shared_ptr<const MvmGeometry> geometry, MvmOptions options)
    : kernel_(kernel), geometry_(std::move(geometry)), options_(options) {
  if (!geometry_) throw InvalidArgument("MvmPlan needs a geometry");
  validate(kernel_);
  if (!fast_mvm_supported(kernel_)) {
    throw InvalidArgument("fast MVM does not support " + kernel_name(kernel_) +
                          (kernel_.form == KernelForm::Product ? " in product form" : " in L1 form") +
                          "; supported: L1 nu in {1/2, 3/2, 5/2}, product nu in {1/2, 3/2}");
  }
  if (geometry_->centered.cols() > 16) throw InvalidArgument("fast MVM supports at most 16 dimensions");
}

MvmPlan MvmPlan::create(KernelSpec kernel, const Eigen::MatrixXd& points, MvmOptions options) {
  return MvmPlan(kernel, make_geometry(points, options.leaf_size), options);
}

MvmPlan MvmPlan::with_kernel(const KernelSpec& kernel) const { return MvmPlan(kernel, geometry_, options_); }

Eigen::MatrixXd mvm_naive(const KernelSpec& kernel, const Eigen::MatrixXd& points, const Eigen::MatrixXd& y) {
  validate(kernel);
  check_points(points);
  check_rhs(points.rows(), y);
  const Index n = points.rows();
  const Index d = points.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, y.cols());
  std::vector<double> u(static_cast<std::size_t>(d));
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < d; ++k) u[static_cast<std::size_t>(k)] = points(i, k) - points(j, k);
      const double kij = kernel_eval_multi(kernel, u);
      out.row(j) += kij * y.row(i);
    }
  }
  return out;
}

Eigen::VectorXd mvm_naive(const KernelSpec& kernel, const Eigen::MatrixXd& points, const Eigen::VectorXd& y) {
  return mvm_naive(kernel, points, Eigen::MatrixXd(y)).col(0);
}

Eigen::MatrixXd mvm_fast(const MvmPlan& plan, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd k;
  run_fast(plan, y, true, false, &k, nullptr);
  return k;
}

Eigen::VectorXd mvm_fast(const MvmPlan& plan, const Eigen::VectorXd& y) {
  return mvm_fast(plan, Eigen::MatrixXd(y)).col(0);
}

Eigen::MatrixXd mvm_grad_lengthscale(const MvmPlan& plan, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd g;
  run_fast(plan, y, false, true, nullptr, &g);
  return g;
}

Eigen::VectorXd mvm_grad_lengthscale(const MvmPlan& plan, const Eigen::VectorXd& y) {
  return mvm_grad_lengthscale(plan, Eigen::MatrixXd(y)).col(0);
}

Eigen::MatrixXd mvm_grad_outputscale(const MvmPlan& plan, const Eigen::MatrixXd& y) {
  const double s = plan.kernel().outputscale;
  if (!(s > 0.0)) throw InvalidArgument("outputscale must be positive");
  return (2.0 / s) * mvm_fast(plan, y);
}

Eigen::VectorXd mvm_grad_outputscale(const MvmPlan& plan, const Eigen::VectorXd& y) {
  return mvm_grad_outputscale(plan, Eigen::MatrixXd(y)).col(0);
}

MvmWithGrad mvm_fast_with_grad(const MvmPlan& plan, const Eigen::MatrixXd& y) {
  MvmWithGrad out;
  run_fast(plan, y, true, true, &out.ky, &out.dky_dl);
  return out;
}

Eigen::MatrixXd mvm_cross(const KernelSpec& kernel, const Eigen::MatrixXd& points, const Eigen::MatrixXd& eval_points,
                          const Eigen::MatrixXd& y, MvmOptions options) {
  check_points(points);
  check_points(eval_points);
  if (eval_points.cols() != points.cols()) throw InvalidArgument("evaluation points have the wrong dimension");
  check_rhs(points.rows(), y);
  const Index n = points.rows();
  const Index m = eval_points.rows();
  Eigen::MatrixXd merged(n + m, points.cols());
  merged << points, eval_points;
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(n + m, y.cols());
  padded.topRows(n) = y;
  const MvmPlan plan = MvmPlan::create(kernel, merged, options);
  return mvm_fast(plan, padded).bottomRows(m);
}

Eigen::MatrixXd mvm_cross_naive(const KernelSpec& kernel, const Eigen::MatrixXd& points,
                                const Eigen::MatrixXd& eval_points, const Eigen::MatrixXd& y) {
  check_rhs(points.rows(), y);
  return kernel_matrix(kernel, eval_points, points) * y;
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& kernel, const Eigen::MatrixXd& rows, const Eigen::MatrixXd& cols) {
  validate(kernel);
  check_points(rows);
  check_points(cols);
  if (rows.cols() != cols.cols()) throw InvalidArgument("kernel_matrix: dimension mismatch");
  const Index d = rows.cols();
  Eigen::MatrixXd out(rows.rows(), cols.rows());
  std::vector<double> u(static_cast<std::size_t>(d));
  for (Index j = 0; j < cols.rows(); ++j) {
    for (Index i = 0; i < rows.rows(); ++i) {
      for (Index k = 0; k < d; ++k) u[static_cast<std::size_t>(k)] = rows(i, k) - cols(j, k);
      out(i, j) = kernel_eval_multi(kernel, u);
    }
  }
  return out;
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& kernel, const Eigen::MatrixXd& points) {
  return kernel_matrix(kernel, points, points);
}

}  // namespace fastgp
