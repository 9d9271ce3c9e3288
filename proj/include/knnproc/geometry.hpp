#pragma once

#include <span>
#include <string>
#include <vector>

namespace knnproc {

enum class NormKind { euclidean, chebyshev };

struct Norm {
  NormKind kind = NormKind::euclidean;
  int dim = 1;
};

Norm make_norm(const std::string& name, int dim);
std::string norm_name(const Norm& norm);

// Comparison key: squared distance under euclidean (no square root in hot
// loops), the distance itself under chebyshev. Monotone in the distance.
double distance_key(const Norm& norm, std::span<const double> a, std::span<const double> b);
double key_to_distance(const Norm& norm, double key);
double distance(const Norm& norm, std::span<const double> a, std::span<const double> b);

struct BallVolume {
  Norm norm;
  double value = 0;  // volume of the unit ball
};

// euclidean: pi^{d/2} / Gamma(d/2 + 1); chebyshev: 2^d.
BallVolume unit_ball_volume(const Norm& norm);

struct NeighborQuery {
  std::vector<double> center;
  int k = 0;
  double radius = 0;         // k-th smallest distance from center to the cloud
  std::vector<int> in_ball;  // every index at distance <= radius, ascending
  int tie_count = 0;         // points at distance exactly radius
};

// Immutable point set with a kd-tree over it. Queries are exact (they agree
// with the brute-force scan bit-for-bit on the radius and set-wise on the
// ball) and safe to run concurrently; construction is single-threaded.
class PointCloud {
 public:
  // points is row-major n x dim; n >= 1 and all coordinates finite.
  PointCloud(std::vector<double> points, int dim);

  int size() const { return n_; }
  int dim() const { return d_; }
  std::span<const double> point(int i) const {
    return {pts_.data() + static_cast<std::size_t>(i) * d_, static_cast<std::size_t>(d_)};
  }

  NeighborQuery knn(std::span<const double> x, int k, const Norm& norm) const;
  // Radius only, skips the ball collection pass. Same value as knn().radius.
  double knn_radius_value(std::span<const double> x, int k, const Norm& norm) const;
  // Closed ball: every index at distance <= radius, ascending.
  std::vector<int> ball(std::span<const double> x, double radius, const Norm& norm) const;

 private:
  struct Node {
    int begin = 0, end = 0;  // range in order_
    int left = -1, right = -1;
    int axis = 0;
  };

  int build(int begin, int end);
  double min_key_to_box(const Norm& norm, std::span<const double> x, int node) const;
  void knn_descend(const Norm& norm, std::span<const double> x, int k, int node,
                   std::vector<double>& heap) const;
  double kth_key(const Norm& norm, std::span<const double> x, int k) const;
  void collect(const Norm& norm, std::span<const double> x, double radius, double key_cap,
               int node, std::vector<int>& out) const;

  std::vector<double> pts_;
  int n_ = 0, d_ = 0;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  std::vector<double> boxes_;  // per node: d lows then d highs
};

// Smallest radius whose closed ball around x holds at least k cloud points.
// The ball keeps every point at that distance, so ties can push the count
// past k; tie_count reports how many sit exactly on the boundary.
NeighborQuery knn_radius(const PointCloud& cloud, std::span<const double> x, int k,
                         const Norm& norm);
NeighborQuery knn_radius(const PointCloud& cloud, std::span<const double> x, int k);

// Serial reference: full distance scan and sort. Kept as the oracle the
// kd-tree is tested (and benchmarked) against.
NeighborQuery knn_radius_brute(const PointCloud& cloud, std::span<const double> x, int k,
                               const Norm& norm);
NeighborQuery knn_radius_brute(const PointCloud& cloud, std::span<const double> x, int k);

std::vector<int> ball_search(const PointCloud& cloud, std::span<const double> x, double radius,
                             const Norm& norm);
std::vector<int> ball_search_brute(const PointCloud& cloud, std::span<const double> x,
                                   double radius, const Norm& norm);

}  // namespace knnproc
