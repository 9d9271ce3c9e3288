#include "knnproc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace knnproc {

namespace {

constexpr int kLeafSize = 16;

void check_query(const PointCloud& cloud, std::span<const double> x, const Norm& norm) {
  if (static_cast<int>(x.size()) != cloud.dim())
    throw std::invalid_argument("query point dimension does not match the cloud");
  if (norm.dim != cloud.dim())
    throw std::invalid_argument("norm dimension does not match the cloud");
  for (double c : x)
    if (!std::isfinite(c)) throw std::invalid_argument("query point must be finite");
}

// Collection threshold in key space. Membership is decided on true
// distances; under euclidean two keys a few ulps apart can share the same
// rounded square root, so the traversal cap is padded before pruning.
double padded_key_cap(const Norm& norm, double key) {
  if (norm.kind == NormKind::chebyshev) return key;
  return key + 4.0 * std::numeric_limits<double>::epsilon() * key;
}

}  // namespace

Norm make_norm(const std::string& name, int dim) {
  if (dim < 1) throw std::invalid_argument("norm dimension must be positive");
  if (name == "euclidean") return {NormKind::euclidean, dim};
  if (name == "chebyshev") return {NormKind::chebyshev, dim};
  throw std::invalid_argument("unknown norm: " + name);
}

std::string norm_name(const Norm& norm) {
  return norm.kind == NormKind::euclidean ? "euclidean" : "chebyshev";
}

double distance_key(const Norm& norm, std::span<const double> a, std::span<const double> b) {
  if (norm.kind == NormKind::euclidean) {
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double diff = a[j] - b[j];
      s += diff * diff;
    }
    return s;
  }
  double m = 0;
  for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
  return m;
}

double key_to_distance(const Norm& norm, double key) {
  return norm.kind == NormKind::euclidean ? std::sqrt(key) : key;
}

double distance(const Norm& norm, std::span<const double> a, std::span<const double> b) {
  return key_to_distance(norm, distance_key(norm, a, b));
}

BallVolume unit_ball_volume(const Norm& norm) {
  if (norm.dim < 1) throw std::invalid_argument("norm dimension must be positive");
  if (norm.kind == NormKind::chebyshev) return {norm, std::pow(2.0, norm.dim)};
  const double d = norm.dim;
  return {norm, std::pow(M_PI, d / 2.0) / std::tgamma(d / 2.0 + 1.0)};
}

PointCloud::PointCloud(std::vector<double> points, int dim) : pts_(std::move(points)), d_(dim) {
  if (d_ < 1) throw std::invalid_argument("point dimension must be positive");
  if (pts_.empty() || pts_.size() % static_cast<std::size_t>(d_) != 0)
    throw std::invalid_argument("point cloud must hold n >= 1 complete points");
  n_ = static_cast<int>(pts_.size() / static_cast<std::size_t>(d_));
  for (double c : pts_)
    if (!std::isfinite(c)) throw std::invalid_argument("point cloud coordinates must be finite");
  order_.resize(n_);
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(static_cast<std::size_t>(2 * n_ / kLeafSize + 2));
  build(0, n_);
}

int PointCloud::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, 0});
  boxes_.resize(boxes_.size() + 2 * static_cast<std::size_t>(d_));
  double* lo = boxes_.data() + static_cast<std::size_t>(id) * 2 * d_;
  double* hi = lo + d_;
  std::fill(lo, lo + d_, std::numeric_limits<double>::infinity());
  std::fill(hi, hi + d_, -std::numeric_limits<double>::infinity());
  for (int i = begin; i < end; ++i) {
    const auto p = point(order_[i]);
    for (int j = 0; j < d_; ++j) {
      lo[j] = std::min(lo[j], p[j]);
      hi[j] = std::max(hi[j], p[j]);
    }
  }
  if (end - begin <= kLeafSize) return id;

  int axis = 0;
  double extent = -1;
  for (int j = 0; j < d_; ++j) {
    const double e = hi[j] - lo[j];
    if (e > extent) {
      extent = e;
      axis = j;
    }
  }
  if (extent <= 0) return id;  // all points identical: keep as a leaf

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return point(a)[axis] < point(b)[axis]; });
  nodes_[id].axis = axis;
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double PointCloud::min_key_to_box(const Norm& norm, std::span<const double> x, int node) const {
  const double* lo = boxes_.data() + static_cast<std::size_t>(node) * 2 * d_;
  const double* hi = lo + d_;
  if (norm.kind == NormKind::euclidean) {
    double s = 0;
    for (int j = 0; j < d_; ++j) {
      double e = 0;
      if (x[j] < lo[j])
        e = lo[j] - x[j];
      else if (x[j] > hi[j])
        e = x[j] - hi[j];
      s += e * e;
    }
    return s;
  }
  double m = 0;
  for (int j = 0; j < d_; ++j) {
    if (x[j] < lo[j])
      m = std::max(m, lo[j] - x[j]);
    else if (x[j] > hi[j])
      m = std::max(m, x[j] - hi[j]);
  }
  return m;
}

void PointCloud::knn_descend(const Norm& norm, std::span<const double> x, int k, int node,
                             std::vector<double>& heap) const {
  const Node& nd = nodes_[node];
  if (nd.left < 0) {
    for (int i = nd.begin; i < nd.end; ++i) {
      const double key = distance_key(norm, x, point(order_[i]));
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(key);
        std::push_heap(heap.begin(), heap.end());
      } else if (key < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = key;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  int first = nd.left, second = nd.right;
  double dfirst = min_key_to_box(norm, x, first);
  double dsecond = min_key_to_box(norm, x, second);
  if (dsecond < dfirst) {
    std::swap(first, second);
    std::swap(dfirst, dsecond);
  }
  if (static_cast<int>(heap.size()) < k || dfirst <= heap.front())
    knn_descend(norm, x, k, first, heap);
  if (static_cast<int>(heap.size()) < k || dsecond <= heap.front())
    knn_descend(norm, x, k, second, heap);
}

double PointCloud::kth_key(const Norm& norm, std::span<const double> x, int k) const {
  std::vector<double> heap;
  heap.reserve(static_cast<std::size_t>(k));
  knn_descend(norm, x, k, 0, heap);
  return heap.front();
}

void PointCloud::collect(const Norm& norm, std::span<const double> x, double radius,
                         double key_cap, int node, std::vector<int>& out) const {
  if (min_key_to_box(norm, x, node) > key_cap) return;
  const Node& nd = nodes_[node];
  if (nd.left < 0) {
    for (int i = nd.begin; i < nd.end; ++i) {
      const int idx = order_[i];
      const double key = distance_key(norm, x, point(idx));
      if (key <= key_cap && key_to_distance(norm, key) <= radius) out.push_back(idx);
    }
    return;
  }
  collect(norm, x, radius, key_cap, nd.left, out);
  collect(norm, x, radius, key_cap, nd.right, out);
}

NeighborQuery PointCloud::knn(std::span<const double> x, int k, const Norm& norm) const {
  check_query(*this, x, norm);
  if (k < 1 || k > n_) throw std::invalid_argument("k must lie in [1, n]");

  NeighborQuery q;
  q.center.assign(x.begin(), x.end());
  q.k = k;
  const double key = kth_key(norm, x, k);
  q.radius = key_to_distance(norm, key);
  collect(norm, x, q.radius, padded_key_cap(norm, key), 0, q.in_ball);
  std::sort(q.in_ball.begin(), q.in_ball.end());
  for (int idx : q.in_ball)
    if (distance(norm, x, point(idx)) == q.radius) ++q.tie_count;
  return q;
}

double PointCloud::knn_radius_value(std::span<const double> x, int k, const Norm& norm) const {
  check_query(*this, x, norm);
  if (k < 1 || k > n_) throw std::invalid_argument("k must lie in [1, n]");
  return key_to_distance(norm, kth_key(norm, x, k));
}

std::vector<int> PointCloud::ball(std::span<const double> x, double radius,
                                  const Norm& norm) const {
  check_query(*this, x, norm);
  if (!(radius >= 0)) throw std::invalid_argument("ball radius must be nonnegative");
  std::vector<int> out;
  const double key = norm.kind == NormKind::euclidean ? radius * radius : radius;
  collect(norm, x, radius, padded_key_cap(norm, key), 0, out);
  std::sort(out.begin(), out.end());
  return out;
}

NeighborQuery knn_radius(const PointCloud& cloud, std::span<const double> x, int k,
                         const Norm& norm) {
  return cloud.knn(x, k, norm);
}

NeighborQuery knn_radius(const PointCloud& cloud, std::span<const double> x, int k) {
  return cloud.knn(x, k, Norm{NormKind::euclidean, cloud.dim()});
}

NeighborQuery knn_radius_brute(const PointCloud& cloud, std::span<const double> x, int k,
                               const Norm& norm) {
  check_query(cloud, x, norm);
  if (k < 1 || k > cloud.size()) throw std::invalid_argument("k must lie in [1, n]");

  std::vector<double> keys(static_cast<std::size_t>(cloud.size()));
  for (int i = 0; i < cloud.size(); ++i) keys[i] = distance_key(norm, x, cloud.point(i));
  std::vector<double> sorted = keys;
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());

  NeighborQuery q;
  q.center.assign(x.begin(), x.end());
  q.k = k;
  q.radius = key_to_distance(norm, sorted[k - 1]);
  for (int i = 0; i < cloud.size(); ++i) {
    const double dist = key_to_distance(norm, keys[i]);
    if (dist <= q.radius) {
      q.in_ball.push_back(i);
      if (dist == q.radius) ++q.tie_count;
    }
  }
  return q;
}

NeighborQuery knn_radius_brute(const PointCloud& cloud, std::span<const double> x, int k) {
  return knn_radius_brute(cloud, x, k, Norm{NormKind::euclidean, cloud.dim()});
}

std::vector<int> ball_search(const PointCloud& cloud, std::span<const double> x, double radius,
                             const Norm& norm) {
  return cloud.ball(x, radius, norm);
}

std::vector<int> ball_search_brute(const PointCloud& cloud, std::span<const double> x,
                                   double radius, const Norm& norm) {
  check_query(cloud, x, norm);
  if (!(radius >= 0)) throw std::invalid_argument("ball radius must be nonnegative");
  std::vector<int> out;
  for (int i = 0; i < cloud.size(); ++i)
    if (distance(norm, x, cloud.point(i)) <= radius) out.push_back(i);
  return out;
}

}  // namespace knnproc
