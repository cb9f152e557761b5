#pragma once

#include <Eigen/Core>

namespace fastgp {

using Index = Eigen::Index;

/// N input points in R^d (one row per point) and their responses.
struct Dataset {
  Eigen::MatrixXd points;
  Eigen::VectorXd responses;

  [[nodiscard]] Index size() const { return points.rows(); }
  [[nodiscard]] Index dim() const { return points.cols(); }
};

/// Throws InvalidArgument naming the first row holding a non-finite
/// coordinate, or when the matrix is empty.
void check_points(const Eigen::MatrixXd& points);

/// Validates shapes and finiteness, then bundles points and responses.
[[nodiscard]] Dataset make_dataset(Eigen::MatrixXd points, Eigen::VectorXd responses);

}  // namespace fastgp
