#include "fastgp/dataset.hpp"

#include <cmath>
#include <string>

#include "fastgp/error.hpp"

namespace fastgp {

void check_points(const Eigen::MatrixXd& points) {
  if (points.rows() < 1 || points.cols() < 1) {
    throw InvalidArgument("point set must have N >= 1 rows and d >= 1 columns");
  }
  for (Index i = 0; i < points.rows(); ++i) {
    for (Index k = 0; k < points.cols(); ++k) {
      if (!std::isfinite(points(i, k))) {
        throw InvalidArgument("non-finite coordinate at row " + std::to_string(i) + ", column " +
                              std::to_string(k));
      }
    }
  }
}

Dataset make_dataset(Eigen::MatrixXd points, Eigen::VectorXd responses) {
  check_points(points);
  if (responses.size() != points.rows()) {
    throw InvalidArgument("responses has " + std::to_string(responses.size()) + " entries for " +
                          std::to_string(points.rows()) + " points");
  }
  for (Index i = 0; i < responses.size(); ++i) {
    if (!std::isfinite(responses(i))) throw InvalidArgument("non-finite response at row " + std::to_string(i));
  }
  return Dataset{std::move(points), std::move(responses)};
}

}  // namespace fastgp
