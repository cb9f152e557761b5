#include "fastgp/matern.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fastgp/error.hpp"

namespace fastgp {

namespace {

constexpr int kClosedFormMaxOrder = 4;
constexpr int kFastMaxOrder = 2;

double sqrt_of(double v) { return std::sqrt(v); }

// Closed-form polynomial parts of k_{p+1/2}, p = 0..4.
std::vector<double> closed_form_polynomial(int order) {
  switch (order) {
    case 0: return {1.0};
    case 1: return {1.0, sqrt_of(3.0)};
    case 2: return {1.0, sqrt_of(5.0), 5.0 / 3.0};
    case 3: return {1.0, sqrt_of(7.0), 14.0 / 5.0, 7.0 * sqrt_of(7.0) / 15.0};
    case 4: return {1.0, 3.0, 27.0 / 7.0, 18.0 / 7.0, 27.0 / 35.0};
    default: break;
  }
  throw InvalidArgument("no closed form for Matern order " + std::to_string(order));
}

// Closed-form derivative profiles: k'(r) = -(sum_i c[i] r^i) exp(-rate r).
std::vector<double> closed_form_derivative(int order) {
  switch (order) {
    case 0: return {1.0};
    case 1: return {0.0, 3.0};
    case 2: return {0.0, 5.0 / 3.0, 5.0 * sqrt_of(5.0) / 3.0};
    case 3: return {0.0, 7.0 / 5.0, 7.0 * sqrt_of(7.0) / 5.0, 49.0 / 15.0};
    case 4: return {0.0, 9.0 / 7.0, 27.0 / 7.0, 162.0 / 35.0, 81.0 / 35.0};
    default: break;
  }
  throw InvalidArgument("no closed-form derivative for Matern order " + std::to_string(order));
}

// p! / (i! (p-i)!) * (2p-i)! / (2p)!
double general_coefficient(int p, int i) {
  double binom = 1.0;
  for (int k = 1; k <= i; ++k) binom = binom * (p - i + k) / k;
  double falling = 1.0;  // (2p-i)! / (2p)! = 1 / ((2p)(2p-1)...(2p-i+1))
  for (int k = 0; k < i; ++k) falling /= (2.0 * p - k);
  return binom * falling;
}

std::vector<double> general_polynomial(int p) {
  const double a = sqrt_of(2.0 * p + 1.0);
  std::vector<double> q(static_cast<std::size_t>(p) + 1);
  for (int i = 0; i <= p; ++i) q[i] = general_coefficient(p, i) * std::pow(2.0 * a, i);
  return q;
}

std::vector<double> general_derivative(int p) {
  if (p == 0) return {1.0};
  const double a = sqrt_of(2.0 * p + 1.0);
  std::vector<double> c(static_cast<std::size_t>(p) + 1, 0.0);
  for (int i = 1; i <= p; ++i) {
    c[i] = i * a / (2.0 * p - i) * general_coefficient(p, i) * std::pow(2.0 * a, i);
  }
  return c;
}

std::vector<double> derivative_polynomial(int order) {
  return order <= kClosedFormMaxOrder ? closed_form_derivative(order) : general_derivative(order);
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

void require_finite(double u, const char* what) {
  if (!std::isfinite(u)) {
    std::ostringstream os;
    os << what << ": non-finite argument " << u;
    throw InvalidArgument(os.str());
  }
}

}  // namespace

double polyval(std::span<const double> coeffs, double x) {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double KernelSpec::rate() const { return std::sqrt(2.0 * nu()); }

KernelSpec KernelSpec::with_scales(double new_outputscale, double new_lengthscale) const {
  KernelSpec out = *this;
  out.outputscale = new_outputscale;
  out.lengthscale = new_lengthscale;
  return out;
}

void validate(const KernelSpec& spec) {
  if (!(spec.outputscale > 0.0) || !std::isfinite(spec.outputscale)) {
    throw InvalidArgument("outputscale must be positive and finite, got " + std::to_string(spec.outputscale));
  }
  if (!(spec.lengthscale > 0.0) || !std::isfinite(spec.lengthscale)) {
    throw InvalidArgument("lengthscale must be positive and finite, got " + std::to_string(spec.lengthscale));
  }
  if (spec.order < 0) throw InvalidArgument("Matern order must be >= 0");
  if (spec.order > kClosedFormMaxOrder && !spec.general_order) {
    throw InvalidArgument("Matern nu = " + std::to_string(spec.order) +
                          "+1/2 needs general_order = true (closed forms cover nu <= 9/2)");
  }
}

bool fast_mvm_supported(const KernelSpec& spec) {
  if (spec.order < 0 || spec.order > kFastMaxOrder) return false;
  if (spec.form == KernelForm::Product) return spec.order <= 1;
  return true;
}

int parse_matern_order(const std::string& name) {
  if (name == "matern12" || name == "1/2" || name == "0.5") return 0;
  if (name == "matern32" || name == "3/2" || name == "1.5") return 1;
  if (name == "matern52" || name == "5/2" || name == "2.5") return 2;
  if (name == "matern72" || name == "7/2" || name == "3.5") return 3;
  if (name == "matern92" || name == "9/2" || name == "4.5") return 4;
  throw InvalidArgument("unknown kernel '" + name + "' (expected matern12, matern32 or matern52)");
}

KernelForm parse_kernel_form(const std::string& name) {
  if (name == "l1" || name == "L1") return KernelForm::L1;
  if (name == "product") return KernelForm::Product;
  throw InvalidArgument("unknown kernel form '" + name + "' (expected l1 or product)");
}

std::string kernel_name(const KernelSpec& spec) {
  return "matern" + std::to_string(2 * spec.order + 1) + "2";
}

double matern_standard(int order, double r) {
  const auto q = closed_form_polynomial(order);
  const double a = sqrt_of(2.0 * order + 1.0);
  return polyval(q, r) * std::exp(-a * r);
}

double matern_standard_general(int order, double r) {
  if (order < 0) throw InvalidArgument("Matern order must be >= 0");
  const auto q = general_polynomial(order);
  const double a = sqrt_of(2.0 * order + 1.0);
  return polyval(q, r) * std::exp(-a * r);
}

double matern_standard_derivative(int order, double r) {
  const auto c = derivative_polynomial(order);
  const double a = sqrt_of(2.0 * order + 1.0);
  return -polyval(c, r) * std::exp(-a * r);
}

std::vector<double> matern_polynomial(int order) {
  return order <= kClosedFormMaxOrder ? closed_form_polynomial(order) : general_polynomial(order);
}

std::vector<double> lengthscale_polynomial(int order) {
  const auto c = derivative_polynomial(order);
  std::vector<double> g(c.size() + 1, 0.0);
  std::copy(c.begin(), c.end(), g.begin() + 1);
  return g;
}

namespace {

double profile(const KernelSpec& spec, double r) {
  return spec.general_order ? matern_standard_general(spec.order, r) : matern_standard(spec.order, r);
}

}  // namespace

double kernel_eval_1d(const KernelSpec& spec, double u) {
  validate(spec);
  require_finite(u, "kernel_eval_1d");
  const double s2 = spec.outputscale * spec.outputscale;
  return s2 * profile(spec, std::abs(u) / spec.lengthscale);
}

double kernel_derivative_1d(const KernelSpec& spec, double u) {
  if (spec.order < 0) throw InvalidArgument("Matern order must be >= 0");
  require_finite(u, "kernel_derivative_1d");
  if (u < 0.0) throw InvalidArgument("kernel_derivative_1d: argument must be >= 0, got " + std::to_string(u));
  return matern_standard_derivative(spec.order, u);
}

double kernel_eval_multi(const KernelSpec& spec, std::span<const double> u) {
  validate(spec);
  if (u.empty()) throw InvalidArgument("kernel_eval_multi: empty argument vector");
  const double s2 = spec.outputscale * spec.outputscale;
  const double inv_l = 1.0 / spec.lengthscale;
  if (spec.form == KernelForm::L1) {
    double r = 0.0;
    for (double v : u) {
      require_finite(v, "kernel_eval_multi");
      r += std::abs(v);
    }
    return s2 * profile(spec, r * inv_l);
  }
  double prod = s2;
  for (double v : u) {
    require_finite(v, "kernel_eval_multi");
    prod *= profile(spec, std::abs(v) * inv_l);
  }
  return prod;
}

double kernel_grad_lengthscale_multi(const KernelSpec& spec, std::span<const double> u) {
  validate(spec);
  if (u.empty()) throw InvalidArgument("kernel_grad_lengthscale_multi: empty argument vector");
  const double l = spec.lengthscale;
  const double s2 = spec.outputscale * spec.outputscale;
  // dK/dl = -(s^2 / l^2) |u| k'(|u| / l) for the univariate profile.
  if (spec.form == KernelForm::L1) {
    double r = 0.0;
    for (double v : u) r += std::abs(v);
    return -s2 / (l * l) * r * matern_standard_derivative(spec.order, r / l);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double rk = std::abs(u[k]);
    double term = -s2 / (l * l) * rk * matern_standard_derivative(spec.order, rk / l);
    for (std::size_t m = 0; m < u.size(); ++m) {
      if (m != k) term *= profile(spec, std::abs(u[m]) / l);
    }
    total += term;
  }
  return total;
}

PhiDecomposition PhiDecomposition::from_polynomial(std::span<const double> poly, double rate) {
  // poly(u - v) = sum_a v^a * [sum_{j >= a} poly[j] C(j, a) (-1)^a u^(j-a)]
  PhiDecomposition out;
  out.rate_ = rate;
  const int degree = static_cast<int>(poly.size()) - 1;
  out.phi1_poly_.resize(poly.size());
  for (int a = 0; a <= degree; ++a) {
    auto& coeffs = out.phi1_poly_[a];
    coeffs.assign(static_cast<std::size_t>(degree - a) + 1, 0.0);
    const double sign = (a % 2 == 0) ? 1.0 : -1.0;
    for (int j = a; j <= degree; ++j) coeffs[j - a] = sign * poly[j] * binomial(j, a);
  }
  return out;
}

double PhiDecomposition::phi1_poly_value(std::size_t p, double u) const { return polyval(phi1_poly_[p], u); }

double PhiDecomposition::phi1(std::size_t p, double u) const {
  return phi1_poly_value(p, u) * std::exp(-rate_ * u);
}

double PhiDecomposition::phi2(std::size_t p, double v) const {
  return std::pow(v, static_cast<double>(p)) * std::exp(rate_ * v);
}

namespace {

void require_decomposable(const KernelSpec& spec) {
  if (spec.order < 0 || spec.order > kFastMaxOrder) {
    throw InvalidArgument("no CDF decomposition for Matern nu = " + std::to_string(spec.order) +
                          "+1/2; supported: nu in {1/2, 3/2, 5/2}");
  }
}

}  // namespace

PhiDecomposition phi_factors(const KernelSpec& spec) {
  require_decomposable(spec);
  const auto q = closed_form_polynomial(spec.order);
  return PhiDecomposition::from_polynomial(q, spec.rate());
}

PhiDecomposition lengthscale_phi_factors(const KernelSpec& spec) {
  require_decomposable(spec);
  const auto g = lengthscale_polynomial(spec.order);
  return PhiDecomposition::from_polynomial(g, spec.rate());
}

}  // namespace fastgp
