#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fastgp {

/// How a univariate Matérn profile is lifted to R^d.
enum class KernelForm {
  L1,       ///< k(||u||_1 / l)
  Product,  ///< prod_k k(|u_k| / l)
};

/// Covariance hyperparameters of a scaled Matérn kernel with half-integer
/// smoothness nu = order + 1/2.
///
/// Orders 0..4 (nu = 1/2 .. 9/2) are evaluated with their closed forms.
/// Higher orders need `general_order = true`, which routes evaluation through
/// the generic finite-sum expression instead.
struct KernelSpec {
  int order = 0;
  KernelForm form = KernelForm::L1;
  double outputscale = 1.0;
  double lengthscale = 1.0;
  bool general_order = false;

  [[nodiscard]] double nu() const { return order + 0.5; }
  /// sqrt(2 nu): decay rate of the exponential factor in standardized units.
  [[nodiscard]] double rate() const;
  [[nodiscard]] KernelSpec with_scales(double outputscale, double lengthscale) const;
};

/// Throws InvalidArgument unless the spec can be evaluated.
void validate(const KernelSpec& spec);

/// True when the fast CDF-decomposition MVM implements this (nu, form).
[[nodiscard]] bool fast_mvm_supported(const KernelSpec& spec);

/// Parses "matern12" / "matern32" / "matern52" (also "1/2", "3/2", "5/2").
[[nodiscard]] int parse_matern_order(const std::string& name);
[[nodiscard]] KernelForm parse_kernel_form(const std::string& name);
[[nodiscard]] std::string kernel_name(const KernelSpec& spec);

/// Standard (unit-scale) Matérn profile k_nu(r), r >= 0, closed forms.
[[nodiscard]] double matern_standard(int order, double r);
/// Same profile through the generic finite sum; valid for any order >= 0.
[[nodiscard]] double matern_standard_general(int order, double r);
/// k'_nu(r), r >= 0, closed forms for orders 0..4, generic sum above.
[[nodiscard]] double matern_standard_derivative(int order, double r);

/// sigma^2 k_nu(|u| / l). Throws on non-finite u.
[[nodiscard]] double kernel_eval_1d(const KernelSpec& spec, double u);

/// k'_nu(u) of the standard profile (no outputscale/lengthscale applied).
/// Throws on negative or non-finite u.
[[nodiscard]] double kernel_derivative_1d(const KernelSpec& spec, double u);

/// Multivariate kernel value K(u) for the spec's form. Throws on empty u.
[[nodiscard]] double kernel_eval_multi(const KernelSpec& spec, std::span<const double> u);

/// dK(u)/dl, evaluated directly from the derivative profile.
[[nodiscard]] double kernel_grad_lengthscale_multi(const KernelSpec& spec, std::span<const double> u);

/// Polynomial part of k_nu: k_nu(r) = sum_i q[i] r^i exp(-rate r).
[[nodiscard]] std::vector<double> matern_polynomial(int order);

/// Polynomial part of g(r) = -r k'_nu(r), the profile that drives dK/dl:
/// dK/dl = (sigma^2 / l) g(||u|| / l).
[[nodiscard]] std::vector<double> lengthscale_polynomial(int order);

/// Exact separable decomposition of a profile h(r) = poly(r) exp(-rate r):
///
///   h(u - v) = sum_{p < size()} phi1(p, u) * phi2(p, v)     for u >= v,
///
/// with phi2(p, v) = v^p exp(rate v) and phi1(p, u) = exp(-rate u) a_p(u),
/// a_p being the polynomial stored in `phi1_poly[p]` (ascending powers).
/// Arguments are lengthscale-standardized; the caller applies sigma^2 and 1/l.
class PhiDecomposition {
 public:
  PhiDecomposition() = default;
  static PhiDecomposition from_polynomial(std::span<const double> poly, double rate);

  [[nodiscard]] std::size_t size() const { return phi1_poly_.size(); }
  [[nodiscard]] double rate() const { return rate_; }
  [[nodiscard]] const std::vector<double>& phi1_polynomial(std::size_t p) const { return phi1_poly_[p]; }

  [[nodiscard]] double phi1(std::size_t p, double u) const;
  [[nodiscard]] double phi2(std::size_t p, double v) const;
  /// Polynomial part a_p(u) of phi1, without the exponential.
  [[nodiscard]] double phi1_poly_value(std::size_t p, double u) const;

 private:
  double rate_ = 0.0;
  std::vector<std::vector<double>> phi1_poly_;
};

/// Decomposition of the standard kernel profile; nu in {1/2, 3/2, 5/2}.
[[nodiscard]] PhiDecomposition phi_factors(const KernelSpec& spec);

/// Decomposition of g(r) = -r k'(r), used by the lengthscale gradient.
[[nodiscard]] PhiDecomposition lengthscale_phi_factors(const KernelSpec& spec);

/// Evaluates sum_i c[i] x^i (Horner).
[[nodiscard]] double polyval(std::span<const double> coeffs, double x);

}  // namespace fastgp
