#pragma once

#include "genie/hashgrid.hpp"
#include "genie/rtgps.hpp"
#include "genie/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace genie {

enum class FeatureMode {
  /// Sample the hash grid at each neighbor's current mean.
  Live,
  /// Read the feature frozen on the Gaussian by bake_features.
  Baked,
};

struct SplashConfig {
  int k = 16;
  double q = 2.0;
  FeatureMode mode = FeatureMode::Live;
  RadiusMode radiusMode = RadiusMode::StdDev;

  void validate() const;
};

struct SplashOutput {
  std::vector<double> feature;
  NeighborResult neighbors;
  std::vector<double> weights;
  /// No confidence sphere contains the query point; renderers treat it as
  /// empty space.
  bool empty = true;
};

/// Row-major n x F table of per-Gaussian features, resolved once so that
/// many queries can share it.
struct FeatureTable {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
};

FeatureTable live_features(const GaussianSet& set, const HashGrid& grid);
FeatureTable baked_features(const GaussianSet& set);
FeatureTable resolve_features(const GaussianSet& set, const HashGrid& grid, FeatureMode mode);

double squared_mahalanobis(const Vec3& x, const Gaussian& g);

/// exp(-d^2 / 2) with the diagonal covariance of `g`.
double mahalanobis_weight(const Vec3& x, const Gaussian& g);

/// Unnormalized weighted sum of neighbor features. Features are sampled per
/// neighbor from the grid (Live) or read from the Gaussians (Baked).
SplashOutput encode_point(const Vec3& x, const GaussianSet& set, const ProximityIndex& index,
                          const HashGrid& grid, const SplashConfig& config);

/// Same sum, reading features from a pre-resolved table.
void encode_point(const Vec3& x, const GaussianSet& set, const ProximityIndex& index,
                  const FeatureTable& features, const SplashConfig& config, SplashOutput& out);

struct SplashGradient {
  std::vector<std::uint32_t> neighbors;
  std::vector<Vec3> dMean;
  std::vector<Vec3> dLogScale;
  SparseGradient dParams;
};

/// Gradients of <upstream, encode_point(x)> with respect to the grid tables
/// and each neighbor's mean and logScale. Live mode only.
SplashGradient encode_point_backward(const Vec3& x, const GaussianSet& set,
                                     const ProximityIndex& index, const HashGrid& grid,
                                     const SplashConfig& config,
                                     std::span<const double> upstream);

/// Derivatives of mahalanobis_weight(x, g) w.r.t. g.mean and g.logScale,
/// given the already evaluated weight.
void weight_gradients(const Vec3& x, const Gaussian& g, double weight, Vec3& dMean,
                      Vec3& dLogScale);

/// Freezes grid.encode(mean) into every Gaussian; one epoch bump.
void bake_features(GaussianSet& set, const HashGrid& grid);

struct DropBoundReport {
  bool holds = true;
  /// Largest per-coordinate d* over coordinates with a non-zero feature mass.
  double threshold = 0.0;
  std::vector<double> thresholds;
  std::vector<double> actualDeviation;
  /// Smallest Mahalanobis distance over the dropped set (infinity if empty).
  double minDropDistance = 0.0;
};

/// Checks the drop-error bound for removing `dropped` from the weighted sum
/// over `neighbors` at x: holds iff every dropped Gaussian lies beyond
/// d* = sqrt(-2 ln(eps / S)) Mahalanobis units for every coordinate, S being
/// that coordinate's summed |feature| over the dropped set.
DropBoundReport verify_drop_bound(const Vec3& x, const GaussianSet& set,
                                  const FeatureTable& features,
                                  std::span<const std::uint32_t> neighbors,
                                  std::span<const std::uint32_t> dropped, double epsilon);

}  // namespace genie
