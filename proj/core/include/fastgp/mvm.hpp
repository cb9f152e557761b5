#pragma once

#include <memory>

#include <Eigen/Core>

#include "fastgp/cdf.hpp"
#include "fastgp/matern.hpp"

namespace fastgp {

struct MvmOptions {
  /// Worker threads over the orthant sum. 0 = FASTGP_THREADS, else hardware.
  int threads = 0;
  bool compensated = true;
  Index leaf_size = 64;
  /// Test hook: flips the sign of the exponent in the source weights so the
  /// fast product no longer matches the oracle. Never set in normal use.
  bool fault_flip_weight_sign = false;
};

/// Threads to use for a request of `requested` (0 = environment / hardware).
[[nodiscard]] int resolve_threads(int requested);

/// Presorted geometry shared by every plan built on the same point set.
/// Coordinates are stored centered on the bounding-box midpoint; kernel
/// values depend only on differences, so this changes nothing but keeps the
/// exponential weights small.
struct MvmGeometry {
  PresortIndex presort;
  Eigen::MatrixXd centered;
  Eigen::RowVectorXd center;
};

[[nodiscard]] std::shared_ptr<const MvmGeometry> make_geometry(const Eigen::MatrixXd& points,
                                                               Index leaf_size = 64);

/// Kernel hyperparameters bound to a presorted point set. Cheap to copy;
/// `with_kernel` swaps hyperparameters and keeps the presort.
class MvmPlan {
 public:
  MvmPlan(KernelSpec kernel, std::shared_ptr<const MvmGeometry> geometry, MvmOptions options = {});
  static MvmPlan create(KernelSpec kernel, const Eigen::MatrixXd& points, MvmOptions options = {});

  [[nodiscard]] MvmPlan with_kernel(const KernelSpec& kernel) const;

  [[nodiscard]] const KernelSpec& kernel() const { return kernel_; }
  [[nodiscard]] const MvmOptions& options() const { return options_; }
  [[nodiscard]] const MvmGeometry& geometry() const { return *geometry_; }
  [[nodiscard]] const std::shared_ptr<const MvmGeometry>& geometry_ptr() const { return geometry_; }
  [[nodiscard]] Index size() const { return geometry_->centered.rows(); }
  [[nodiscard]] Index dim() const { return geometry_->centered.cols(); }

 private:
  KernelSpec kernel_;
  std::shared_ptr<const MvmGeometry> geometry_;
  MvmOptions options_;
};

/// Result of a combined pass: K Y and (dK/dl) Y from the same CDF sums.
struct MvmWithGrad {
  Eigen::MatrixXd ky;
  Eigen::MatrixXd dky_dl;
};

/// Direct double loop, O(N^2 d). Reference implementation.
[[nodiscard]] Eigen::MatrixXd mvm_naive(const KernelSpec& kernel, const Eigen::MatrixXd& points,
                                        const Eigen::MatrixXd& y);
[[nodiscard]] Eigen::VectorXd mvm_naive(const KernelSpec& kernel, const Eigen::MatrixXd& points,
                                        const Eigen::VectorXd& y);

/// K Y through the orthant CDF decomposition; Y is N x m.
[[nodiscard]] Eigen::MatrixXd mvm_fast(const MvmPlan& plan, const Eigen::MatrixXd& y);
[[nodiscard]] Eigen::VectorXd mvm_fast(const MvmPlan& plan, const Eigen::VectorXd& y);

/// (dK/dl) Y.
[[nodiscard]] Eigen::MatrixXd mvm_grad_lengthscale(const MvmPlan& plan, const Eigen::MatrixXd& y);
[[nodiscard]] Eigen::VectorXd mvm_grad_lengthscale(const MvmPlan& plan, const Eigen::VectorXd& y);

/// (dK/d sigma) Y = (2 / sigma) K Y.
[[nodiscard]] Eigen::MatrixXd mvm_grad_outputscale(const MvmPlan& plan, const Eigen::MatrixXd& y);
[[nodiscard]] Eigen::VectorXd mvm_grad_outputscale(const MvmPlan& plan, const Eigen::VectorXd& y);

/// K Y and (dK/dl) Y sharing one set of CDF evaluations.
[[nodiscard]] MvmWithGrad mvm_fast_with_grad(const MvmPlan& plan, const Eigen::MatrixXd& y);

/// sum_i y_i K(x_i - z_j) at external points z, via a merged presort.
[[nodiscard]] Eigen::MatrixXd mvm_cross(const KernelSpec& kernel, const Eigen::MatrixXd& points,
                                        const Eigen::MatrixXd& eval_points, const Eigen::MatrixXd& y,
                                        MvmOptions options = {});
[[nodiscard]] Eigen::MatrixXd mvm_cross_naive(const KernelSpec& kernel, const Eigen::MatrixXd& points,
                                              const Eigen::MatrixXd& eval_points, const Eigen::MatrixXd& y);

/// Dense K(x_i - z_j), rows indexed by `rows`, columns by `cols`.
[[nodiscard]] Eigen::MatrixXd kernel_matrix(const KernelSpec& kernel, const Eigen::MatrixXd& rows,
                                            const Eigen::MatrixXd& cols);
[[nodiscard]] Eigen::MatrixXd kernel_matrix(const KernelSpec& kernel, const Eigen::MatrixXd& points);

}  // namespace fastgp
