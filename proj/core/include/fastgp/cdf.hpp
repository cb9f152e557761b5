#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "fastgp/dataset.hpp"

namespace fastgp {

/// N x m block stored point-major, so all m weight columns of one point are
/// contiguous. This is the layout the CDF engine traverses.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// delta in {-1, +1}^d selecting, per coordinate, "<=" (+1) or ">" (-1)
/// between a source coordinate and the evaluation coordinate.
class SignVector {
 public:
  SignVector() = default;
  explicit SignVector(std::vector<int> signs);

  /// Orthant number `bits` in lexicographic order: bit d-1-k set means
  /// delta_k = -1, so 0 is all-plus and coordinate 0 varies slowest.
  static SignVector from_bits(unsigned bits, Index dim);

  [[nodiscard]] Index size() const { return static_cast<Index>(signs_.size()); }
  [[nodiscard]] int operator[](Index k) const { return signs_[static_cast<std::size_t>(k)]; }
  [[nodiscard]] double dot(const double* x, Index stride) const;

 private:
  std::vector<int> signs_;
};

struct PresortOptions {
  /// Blocks at or below this size switch to direct pairwise accumulation.
  /// Affects speed only, never results.
  Index leaf_size = 64;
};

/// Sort permutations and the divide-and-conquer schedule for one point set.
///
/// Built once from the coordinates alone and reused by every CDF evaluation,
/// whatever the weights, sign vector or kernel parameters. A node splits its
/// points on coordinate c at a rank boundary (ties never straddle a split),
/// recurses on both halves, and keeps a cross child over all of its points
/// for coordinates c+1.. that resolves the pairs straddling the split. Only
/// leaves and last-coordinate sweeps store point ids.
class PresortIndex {
 public:
  PresortIndex() = default;
  explicit PresortIndex(Eigen::MatrixXd points, PresortOptions options = {});

  [[nodiscard]] Index size() const { return points_.rows(); }
  [[nodiscard]] Index dim() const { return points_.cols(); }
  [[nodiscard]] const Eigen::MatrixXd& points() const { return points_; }
  [[nodiscard]] const PresortOptions& options() const { return options_; }

  /// Stable permutation sorting coordinate k in non-decreasing order.
  [[nodiscard]] const std::vector<std::uint32_t>& order(Index k) const { return order_[static_cast<std::size_t>(k)]; }
  /// Dense rank of point i along coordinate k (ties share a rank).
  [[nodiscard]] std::uint32_t rank(Index k, Index i) const {
    return rank_[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
  }

  /// Number of point ids stored in the schedule (memory diagnostic).
  [[nodiscard]] std::size_t schedule_size() const { return ids_.size(); }

  enum class NodeKind : std::uint8_t { Leaf, Sweep, Split, Tied };
  struct Node {
    NodeKind kind = NodeKind::Leaf;
    std::uint8_t coord = 0;
    std::uint32_t begin = 0;       // Leaf, Sweep: range in ids()
    std::uint32_t count = 0;
    std::uint32_t split_rank = 0;  // Split: left half has rank(coord) < split_rank
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t cross = -1;
  };

  [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }
  [[nodiscard]] const std::vector<std::uint32_t>& ids() const { return ids_; }
  /// rank(node.coord, id) for every stored id, parallel to ids().
  [[nodiscard]] const std::vector<std::uint32_t>& id_ranks() const { return id_ranks_; }
  [[nodiscard]] std::int32_t root() const { return root_; }

 private:
  std::int32_t build(std::vector<std::uint32_t> ids, int coord);
  std::int32_t push_ids(Node node, const std::vector<std::uint32_t>& ids);
  void sort_by(std::vector<std::uint32_t>& ids, int coord) const;

  Eigen::MatrixXd points_;
  PresortOptions options_;
  std::vector<std::vector<std::uint32_t>> order_;
  std::vector<std::vector<std::uint32_t>> rank_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> ids_;
  std::vector<std::uint32_t> id_ranks_;
  std::int32_t root_ = -1;
};

[[nodiscard]] PresortIndex build_presort(const Eigen::MatrixXd& points, PresortOptions options = {});

struct CdfOptions {
  /// Neumaier-compensated running sums inside sweeps and leaves.
  bool compensated = true;
};

/// Weighted univariate CDF at sorted evaluation points by a single merged
/// forward pass: out[j] = sum_i weights[i] * 1{x_i <= z_j}.
/// Throws if x or z is not non-decreasing, or on length mismatch.
[[nodiscard]] Eigen::VectorXd weighted_cdf_1d(std::span<const double> sorted_x, std::span<const double> weights,
                                              std::span<const double> eval_points, CdfOptions options = {});

/// F(delta x_j, delta; delta x, w) at every data point x_j:
///   out[j] = sum_i w_i prod_k 1{delta_k x_{k,i} <=_{delta_k} delta_k x_{k,j}},
/// with "<=" for delta_k = +1 and "<" for delta_k = -1.
[[nodiscard]] Eigen::VectorXd weighted_cdf_multi(const PresortIndex& presort, const SignVector& delta,
                                                 const Eigen::VectorXd& weights, CdfOptions options = {});

/// Column-batched form of weighted_cdf_multi; weights is N x m.
[[nodiscard]] RowMatrix weighted_cdf_block(const PresortIndex& presort, const SignVector& delta,
                                           const RowMatrix& weights, CdfOptions options = {});

/// Same quantity evaluated at external points z (rows of eval_points), by
/// merging them into a temporary schedule with zero source weight.
[[nodiscard]] Eigen::VectorXd weighted_cdf_external(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights,
                                                    const Eigen::MatrixXd& eval_points, const SignVector& delta,
                                                    CdfOptions options = {});

/// Direct O(N M d) evaluation of the definition. Reference only.
[[nodiscard]] Eigen::VectorXd weighted_cdf_naive(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights,
                                                 const Eigen::MatrixXd& eval_points, const SignVector& delta);

}  // namespace fastgp
