#pragma once

#include "genie/scene.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace genie {

/// How a Gaussian's confidence-sphere radius is derived from its covariance.
enum class RadiusMode {
  /// Q * sqrt(max variance): bounds the Mahalanobis-Q ellipsoid.
  StdDev,
  /// Q * max variance, the raw-eigenvalue form.
  RawEigenvalue,
};

class StaleIndexError : public std::runtime_error {
 public:
  StaleIndexError(std::uint64_t built, std::uint64_t current);
  std::uint64_t builtEpoch;
  std::uint64_t currentEpoch;
};

struct NeighborResult {
  std::vector<std::uint32_t> indices;
  std::vector<double> distances;
  bool overflowed = false;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  void clear() {
    indices.clear();
    distances.clear();
    overflowed = false;
  }
  bool operator==(const NeighborResult&) const = default;
};

double effective_radius(const Gaussian& g, double q, RadiusMode mode = RadiusMode::StdDev);

/// Immutable BVH over per-Gaussian confidence spheres, bound to the epoch of
/// the set it was built from.
class ProximityIndex {
 public:
  struct Node {
    Vec3 lo;
    Vec3 hi;
    // Leaf when count > 0: primitives [first, first + count) of `order_`.
    // Interior: children at `first` and `first + 1`.
    std::uint32_t first = 0;
    std::uint32_t count = 0;
  };

  static constexpr std::uint32_t kLeafSize = 4;

  static ProximityIndex build(const GaussianSet& set, double q,
                              RadiusMode mode = RadiusMode::StdDev);
  /// Builds over caller-supplied radii (e.g. a persisted radius table).
  static ProximityIndex build_with_radii(const GaussianSet& set, std::vector<double> radii,
                                         double q);

  /// k nearest (by mean distance) Gaussians whose sphere contains x.
  /// Throws StaleIndexError when the set moved past the build epoch.
  NeighborResult query(const GaussianSet& set, const Vec3& x, int k) const;
  void query(const GaussianSet& set, const Vec3& x, int k, NeighborResult& out) const;

  std::uint64_t builtEpoch() const { return builtEpoch_; }
  double quantile() const { return q_; }
  double tMax() const { return tMax_; }
  std::span<const double> radii() const { return radii_; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const std::uint32_t> order() const { return order_; }
  std::size_t size() const { return radii_.size(); }
  int depth() const { return depth_; }

 private:
  void buildTree();

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> order_;
  std::vector<Vec3> centers_;
  std::vector<double> radii_;
  std::uint64_t builtEpoch_ = 0;
  double q_ = 1.0;
  double tMax_ = 0.0;
  int depth_ = 0;
};

/// O(n) scan with the same containment predicate, truncation and tie rule
/// as ProximityIndex::query.
NeighborResult brute_force_query(const GaussianSet& set, const Vec3& x, int k, double q,
                                 RadiusMode mode = RadiusMode::StdDev);

}  // namespace genie
