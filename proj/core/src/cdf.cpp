#include "fastgp/cdf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fastgp/error.hpp"

namespace fastgp {

SignVector::SignVector(std::vector<int> signs) : signs_(std::move(signs)) {
  if (signs_.empty()) throw InvalidArgument("sign vector must be non-empty");
  for (int s : signs_) {
    if (s != 1 && s != -1) throw InvalidArgument("sign vector entries must be +1 or -1, got " + std::to_string(s));
  }
}

SignVector SignVector::from_bits(unsigned bits, Index dim) {
  std::vector<int> s(static_cast<std::size_t>(dim));
  for (Index k = 0; k < dim; ++k) s[static_cast<std::size_t>(k)] = ((bits >> (dim - 1 - k)) & 1u) ? -1 : 1;
  return SignVector(std::move(s));
}

double SignVector::dot(const double* x, Index stride) const {
  double acc = 0.0;
  for (std::size_t k = 0; k < signs_.size(); ++k) acc += signs_[k] * x[static_cast<Index>(k) * stride];
  return acc;
}

PresortIndex::PresortIndex(Eigen::MatrixXd points, PresortOptions options)
    : points_(std::move(points)), options_(options) {
  check_points(points_);
  if (options_.leaf_size < 1) throw InvalidArgument("leaf_size must be >= 1");
  if (points_.rows() > static_cast<Index>(INT32_MAX)) throw InvalidArgument("too many points");
  const auto n = static_cast<std::size_t>(points_.rows());
  const auto d = static_cast<std::size_t>(points_.cols());
  if (d > 255) throw InvalidArgument("dimension above 255 is not supported");
  order_.resize(d);
  rank_.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    auto& ord = order_[k];
    ord.resize(n);
    std::iota(ord.begin(), ord.end(), 0u);
    const double* col = points_.col(static_cast<Index>(k)).data();
    std::stable_sort(ord.begin(), ord.end(), [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    auto& rk = rank_[k];
    rk.resize(n);
    std::uint32_t r = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0 && col[ord[t - 1]] < col[ord[t]]) ++r;
      rk[ord[t]] = r;
    }
  }
  std::vector<std::uint32_t> all(order_[0]);
  root_ = build(std::move(all), 0);
}

void PresortIndex::sort_by(std::vector<std::uint32_t>& ids, int coord) const {
  const auto& rk = rank_[static_cast<std::size_t>(coord)];
  std::stable_sort(ids.begin(), ids.end(), [&rk](std::uint32_t a, std::uint32_t b) { return rk[a] < rk[b]; });
}

std::int32_t PresortIndex::push_ids(Node node, const std::vector<std::uint32_t>& ids) {
  node.begin = static_cast<std::uint32_t>(ids_.size());
  node.count = static_cast<std::uint32_t>(ids.size());
  const auto& rk = rank_[node.coord];
  for (auto id : ids) {
    ids_.push_back(id);
    id_ranks_.push_back(rk[id]);
  }
  nodes_.push_back(node);
  return static_cast<std::int32_t>(nodes_.size() - 1);
}

std::int32_t PresortIndex::build(std::vector<std::uint32_t> ids, int coord) {
  const int d = static_cast<int>(dim());
  sort_by(ids, coord);
  Node node;
  node.coord = static_cast<std::uint8_t>(coord);
  if (coord == d - 1) {
    node.kind = NodeKind::Sweep;
    return push_ids(node, ids);
  }
  if (static_cast<Index>(ids.size()) <= options_.leaf_size) {
    node.kind = NodeKind::Leaf;
    return push_ids(node, ids);
  }
  const auto& rk = rank_[static_cast<std::size_t>(coord)];
  const std::size_t n = ids.size();
  const std::size_t mid = n / 2;
  // nearest rank boundary to the median on either side
  std::size_t hi = mid;
  while (hi < n && rk[ids[hi]] == rk[ids[hi - 1]]) ++hi;
  std::size_t lo = mid;
  while (lo > 0 && rk[ids[lo]] == rk[ids[lo - 1]]) --lo;
  std::size_t pos = 0;
  if (hi < n && lo > 0) {
    pos = (hi - mid <= mid - lo) ? hi : lo;
  } else if (hi < n) {
    pos = hi;
  } else if (lo > 0) {
    pos = lo;
  }

  const auto self = static_cast<std::int32_t>(nodes_.size());
  nodes_.emplace_back();
  if (pos == 0) {
    node.kind = NodeKind::Tied;
    const auto cross = build(std::move(ids), coord + 1);
    node.cross = cross;
    nodes_[static_cast<std::size_t>(self)] = node;
    return self;
  }
  node.kind = NodeKind::Split;
  node.split_rank = rk[ids[pos]];
  std::vector<std::uint32_t> left(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(pos));
  std::vector<std::uint32_t> right(ids.begin() + static_cast<std::ptrdiff_t>(pos), ids.end());
  node.left = build(std::move(left), coord);
  node.right = build(std::move(right), coord);
  node.cross = build(std::move(ids), coord + 1);
  nodes_[static_cast<std::size_t>(self)] = node;
  return self;
}

PresortIndex build_presort(const Eigen::MatrixXd& points, PresortOptions options) {
  return PresortIndex(points, options);
}

namespace {

inline void neumaier_add(double& sum, double& comp, double x) {
  const double t = sum + x;
  if (std::abs(sum) >= std::abs(x)) {
    comp += (sum - t) + x;
  } else {
    comp += (x - t) + sum;
  }
  sum = t;
}

class Evaluator {
 public:
  Evaluator(const PresortIndex& index, const SignVector& delta, const double* weights, Index m, bool compensated)
      : index_(index), delta_(delta), w_(weights), m_(static_cast<std::size_t>(m)), compensated_(compensated) {
    const auto d = static_cast<std::size_t>(index.dim());
    const auto n = static_cast<std::size_t>(index.size());
    cond_active_.assign(d, 0);
    cond_rank_.assign(d, 0);
    out_.assign(n * m_, 0.0);
    if (compensated_) out_comp_.assign(n * m_, 0.0);
    acc_.assign(m_, 0.0);
    acc_comp_.assign(m_, 0.0);
  }

  void run(double* out) {
    visit(index_.root());
    const std::size_t total = out_.size();
    if (compensated_) {
      for (std::size_t i = 0; i < total; ++i) out[i] = out_[i] + out_comp_[i];
    } else {
      std::copy(out_.begin(), out_.end(), out);
    }
  }

 private:
  using Node = PresortIndex::Node;
  using Kind = PresortIndex::NodeKind;

  void visit(std::int32_t id) {
    const Node& node = index_.nodes()[static_cast<std::size_t>(id)];
    const std::size_t c = node.coord;
    switch (node.kind) {
      case Kind::Leaf: leaf(node); return;
      case Kind::Sweep: sweep(node); return;
      case Kind::Split: {
        visit(node.left);
        visit(node.right);
        const char saved_active = cond_active_[c];
        const std::uint32_t saved_rank = cond_rank_[c];
        cond_active_[c] = 1;
        cond_rank_[c] = node.split_rank;
        visit(node.cross);
        cond_active_[c] = saved_active;
        cond_rank_[c] = saved_rank;
        return;
      }
      case Kind::Tied: {
        // all points share coordinate c: "<=" holds for every pair, "<" for none
        if (delta_[static_cast<Index>(c)] < 0) return;
        const char saved_active = cond_active_[c];
        cond_active_[c] = 0;
        visit(node.cross);
        cond_active_[c] = saved_active;
        return;
      }
    }
  }

  // Role of point `id` with respect to the splits on coordinates below `upto`.
  void roles(std::uint32_t id, std::size_t upto, bool& src, bool& tgt) const {
    src = true;
    tgt = true;
    for (std::size_t k = 0; k < upto; ++k) {
      if (!cond_active_[k]) continue;
      const bool left = index_.rank(static_cast<Index>(k), id) < cond_rank_[k];
      const bool is_src = left == (delta_[static_cast<Index>(k)] > 0);
      src = src && is_src;
      tgt = tgt && !is_src;
    }
  }

  void deposit(std::uint32_t id, const double* vals) {
    double* o = out_.data() + static_cast<std::size_t>(id) * m_;
    if (compensated_) {
      double* oc = out_comp_.data() + static_cast<std::size_t>(id) * m_;
      for (std::size_t q = 0; q < m_; ++q) neumaier_add(o[q], oc[q], vals[q]);
    } else {
      for (std::size_t q = 0; q < m_; ++q) o[q] += vals[q];
    }
  }

  void reset_acc() {
    std::fill(acc_.begin(), acc_.end(), 0.0);
    std::fill(acc_comp_.begin(), acc_comp_.end(), 0.0);
  }

  void accumulate(std::uint32_t id) {
    const double* w = w_ + static_cast<std::size_t>(id) * m_;
    if (compensated_) {
      for (std::size_t q = 0; q < m_; ++q) neumaier_add(acc_[q], acc_comp_[q], w[q]);
    } else {
      for (std::size_t q = 0; q < m_; ++q) acc_[q] += w[q];
    }
  }

  void flush_acc(std::uint32_t id) {
    if (compensated_) {
      tmp_.resize(m_);
      for (std::size_t q = 0; q < m_; ++q) tmp_[q] = acc_[q] + acc_comp_[q];
      deposit(id, tmp_.data());
    } else {
      deposit(id, acc_.data());
    }
  }

  void sweep(const Node& node) {
    const auto& ids = index_.ids();
    const auto& rks = index_.id_ranks();
    const std::size_t b = node.begin;
    const std::size_t e = b + node.count;
    const std::size_t c = node.coord;
    role_src_.resize(node.count);
    role_tgt_.resize(node.count);
    for (std::size_t t = b; t < e; ++t) {
      bool s = false;
      bool g = false;
      roles(ids[t], c, s, g);
      role_src_[t - b] = s;
      role_tgt_[t - b] = g;
    }
    reset_acc();
    if (delta_[static_cast<Index>(c)] > 0) {
      std::size_t t = b;
      while (t < e) {
        std::size_t g = t;
        while (g < e && rks[g] == rks[t]) ++g;
        for (std::size_t u = t; u < g; ++u) {
          if (role_src_[u - b]) accumulate(ids[u]);
        }
        for (std::size_t u = t; u < g; ++u) {
          if (role_tgt_[u - b]) flush_acc(ids[u]);
        }
        t = g;
      }
    } else {
      std::size_t t = e;
      while (t > b) {
        std::size_t g = t - 1;
        while (g > b && rks[g - 1] == rks[t - 1]) --g;
        for (std::size_t u = g; u < t; ++u) {
          if (role_tgt_[u - b]) flush_acc(ids[u]);
        }
        for (std::size_t u = g; u < t; ++u) {
          if (role_src_[u - b]) accumulate(ids[u]);
        }
        t = g;
      }
    }
  }

  void leaf(const Node& node) {
    const auto& ids = index_.ids();
    const std::size_t b = node.begin;
    const std::size_t n = node.count;
    const std::size_t c = node.coord;
    const std::size_t d = static_cast<std::size_t>(index_.dim());
    const std::size_t width = d - c;
    local_src_.clear();
    local_tgt_.clear();
    local_rank_.resize(n * width);
    for (std::size_t t = 0; t < n; ++t) {
      const std::uint32_t id = ids[b + t];
      bool s = false;
      bool g = false;
      roles(id, c, s, g);
      if (s) local_src_.push_back(t);
      if (g) local_tgt_.push_back(t);
      for (std::size_t k = c; k < d; ++k) local_rank_[t * width + (k - c)] = index_.rank(static_cast<Index>(k), id);
    }
    if (local_src_.empty() || local_tgt_.empty()) return;
    signs_.resize(width);
    for (std::size_t k = c; k < d; ++k) signs_[k - c] = delta_[static_cast<Index>(k)];
    for (std::size_t tj : local_tgt_) {
      const std::uint32_t* rj = &local_rank_[tj * width];
      reset_acc();
      bool any = false;
      for (std::size_t ti : local_src_) {
        const std::uint32_t* ri = &local_rank_[ti * width];
        bool dom = true;
        for (std::size_t k = 0; k < width && dom; ++k) {
          dom = signs_[k] > 0 ? ri[k] <= rj[k] : ri[k] > rj[k];
        }
        if (dom) {
          accumulate(ids[b + ti]);
          any = true;
        }
      }
      if (any) flush_acc(ids[b + tj]);
    }
  }

  const PresortIndex& index_;
  const SignVector& delta_;
  const double* w_;
  std::size_t m_;
  bool compensated_;
  std::vector<char> cond_active_;
  std::vector<std::uint32_t> cond_rank_;
  std::vector<double> out_;
  std::vector<double> out_comp_;
  std::vector<double> acc_;
  std::vector<double> acc_comp_;
  std::vector<double> tmp_;
  std::vector<char> role_src_;
  std::vector<char> role_tgt_;
  std::vector<std::size_t> local_src_;
  std::vector<std::size_t> local_tgt_;
  std::vector<std::uint32_t> local_rank_;
  std::vector<int> signs_;
};

void check_delta(const PresortIndex& presort, const SignVector& delta) {
  if (presort.size() == 0) throw InvalidArgument("presort index is empty");
  if (delta.size() != presort.dim()) {
    throw InvalidArgument("sign vector has length " + std::to_string(delta.size()) + ", expected " +
                          std::to_string(presort.dim()));
  }
}

}  // namespace

Eigen::VectorXd weighted_cdf_1d(std::span<const double> sorted_x, std::span<const double> weights,
                                std::span<const double> eval_points, CdfOptions options) {
  if (sorted_x.size() != weights.size()) throw InvalidArgument("weighted_cdf_1d: x and weights differ in length");
  for (std::size_t i = 1; i < sorted_x.size(); ++i) {
    if (!(sorted_x[i - 1] <= sorted_x[i])) {
      throw InvalidArgument("weighted_cdf_1d: x not sorted at index " + std::to_string(i));
    }
  }
  for (std::size_t j = 1; j < eval_points.size(); ++j) {
    if (!(eval_points[j - 1] <= eval_points[j])) {
      throw InvalidArgument("weighted_cdf_1d: evaluation points not sorted at index " + std::to_string(j));
    }
  }
  Eigen::VectorXd out(static_cast<Index>(eval_points.size()));
  double sum = 0.0;
  double comp = 0.0;
  std::size_t i = 0;
  for (std::size_t j = 0; j < eval_points.size(); ++j) {
    while (i < sorted_x.size() && sorted_x[i] <= eval_points[j]) {
      if (options.compensated) {
        neumaier_add(sum, comp, weights[i]);
      } else {
        sum += weights[i];
      }
      ++i;
    }
    out(static_cast<Index>(j)) = sum + comp;
  }
  return out;
}

RowMatrix weighted_cdf_block(const PresortIndex& presort, const SignVector& delta, const RowMatrix& weights,
                             CdfOptions options) {
  check_delta(presort, delta);
  if (weights.rows() != presort.size()) {
    throw InvalidArgument("weights have " + std::to_string(weights.rows()) + " rows, expected " +
                          std::to_string(presort.size()));
  }
  if (weights.cols() < 1) throw InvalidArgument("weights must have at least one column");
  RowMatrix out(weights.rows(), weights.cols());
  Evaluator ev(presort, delta, weights.data(), weights.cols(), options.compensated);
  ev.run(out.data());
  return out;
}

Eigen::VectorXd weighted_cdf_multi(const PresortIndex& presort, const SignVector& delta,
                                   const Eigen::VectorXd& weights, CdfOptions options) {
  check_delta(presort, delta);
  if (weights.size() != presort.size()) {
    throw InvalidArgument("weights have " + std::to_string(weights.size()) + " entries, expected " +
                          std::to_string(presort.size()));
  }
  Eigen::VectorXd out(weights.size());
  Evaluator ev(presort, delta, weights.data(), 1, options.compensated);
  ev.run(out.data());
  return out;
}

Eigen::VectorXd weighted_cdf_external(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights,
                                      const Eigen::MatrixXd& eval_points, const SignVector& delta,
                                      CdfOptions options) {
  check_points(points);
  check_points(eval_points);
  if (eval_points.cols() != points.cols()) throw InvalidArgument("evaluation points have the wrong dimension");
  if (weights.size() != points.rows()) throw InvalidArgument("weights length does not match the point count");
  const Index n = points.rows();
  const Index m = eval_points.rows();
  Eigen::MatrixXd merged(n + m, points.cols());
  merged << points, eval_points;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n + m);
  w.head(n) = weights;
  const PresortIndex index(std::move(merged));
  const Eigen::VectorXd all = weighted_cdf_multi(index, delta, w, options);
  return all.tail(m);
}

Eigen::VectorXd weighted_cdf_naive(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights,
                                   const Eigen::MatrixXd& eval_points, const SignVector& delta) {
  if (delta.size() != points.cols() || eval_points.cols() != points.cols()) {
    throw InvalidArgument("weighted_cdf_naive: dimension mismatch");
  }
  if (weights.size() != points.rows()) throw InvalidArgument("weighted_cdf_naive: weights length mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(eval_points.rows());
  for (Index j = 0; j < eval_points.rows(); ++j) {
    double acc = 0.0;
    for (Index i = 0; i < points.rows(); ++i) {
      bool in = true;
      for (Index k = 0; k < points.cols() && in; ++k) {
        in = delta[k] > 0 ? points(i, k) <= eval_points(j, k) : points(i, k) > eval_points(j, k);
      }
      if (in) acc += weights(i);
    }
    out(j) = acc;
  }
  return out;
}

}  // namespace fastgp
