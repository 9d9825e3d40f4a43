#pragma once

#include "genie/field.hpp"
#include "genie/hashgrid.hpp"
#include "genie/rtgps.hpp"
#include "genie/scene.hpp"
#include "genie/splash.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace genie {

struct RenderConfig {
  int samples = 64;
  bool stratified = false;
  Vec3 background = Vec3::Ones();
  std::uint64_t seed = 0;
  int threads = 1;
  /// Restrict sampling to the ray's overlap with the union of confidence
  /// spheres; nothing outside it has non-zero density.
  bool clipToSpheres = true;
  SplashConfig splash;
};

struct SampleInterval {
  double t = 0.0;
  double delta = 0.0;
};

struct RaySample {
  double t = 0.0;
  double delta = 0.0;
  Vec3 position = Vec3::Zero();
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;
  bool empty = true;
};

struct CompositeResult {
  Vec3 pixel = Vec3::Zero();
  double accAlpha = 0.0;
};

/// n strictly increasing samples in [tNear, tFar]. Deltas are gaps to the
/// next sample, the last one reaching tFar; in stratified mode the first
/// delta also covers [tNear, t0) so the deltas always sum to tFar - tNear.
std::vector<SampleInterval> sample_ray(const Ray& ray, int n, bool stratified,
                                       std::mt19937_64& rng);

double alpha_from_sigma(double sigma, double delta);

/// Front-to-back compositing over `background`.
CompositeResult composite(std::span<const RaySample> samples, const Vec3& background);

/// d(<dPixel, pixel>)/d(color_i) and /d(sigma_i) for each sample.
void composite_backward(std::span<const RaySample> samples, const Vec3& background,
                        const Vec3& dPixel, std::span<Vec3> dColor, std::span<double> dSigma);

/// Immutable view of everything needed to shade a sample. `index` may be
/// null only for an empty set.
struct FieldScene {
  const GaussianSet* set = nullptr;
  const ProximityIndex* index = nullptr;
  const FeatureTable* features = nullptr;
  const FieldNetwork* net = nullptr;
};

struct RayTrace {
  std::vector<RaySample> samples;
  std::vector<SplashOutput> splash;
  FieldBatch batch;
  /// Column of each sample in `batch`, -1 for empty-space samples.
  std::vector<int> column;
  CompositeResult result;
};

/// Samples, shades and composites one ray. Keeps what backprop_ray needs.
CompositeResult trace_ray(const Ray& ray, const FieldScene& scene, const RenderConfig& config,
                          std::mt19937_64& rng, RayTrace& trace);

/// Per-Gaussian gradient accumulators plus the flat network gradient.
struct GradientSink {
  AlignedDoubles dTheta;
  FeatureTable dFeature;
  std::vector<Vec3> dMean;
  std::vector<Vec3> dLogScale;
  std::vector<std::uint8_t> touched;

  void reset(std::size_t thetaSize, std::size_t gaussians, std::size_t featureDim);
  void add(const GradientSink& other);
};

/// Reverse pass for a traced ray given dL/dpixel: composite, field network,
/// then the splash weights. Grid-side gradients stay in dFeature until
/// finish_feature_gradients.
void backprop_ray(const RayTrace& trace, const FieldScene& scene, const RenderConfig& config,
                  const Vec3& dPixel, GradientSink& sink);

/// Pushes accumulated per-Gaussian feature gradients through the hash grid:
/// adds grid dx into dMean and scatters parameter gradients into gridGrad.
void finish_feature_gradients(const GaussianSet& set, const HashGrid& grid, GradientSink& sink,
                              GridGradientBuffer& gridGrad);

struct Image {
  int width = 0;
  int height = 0;
  /// RGBA, alpha = accumulated opacity, rows top to bottom.
  std::vector<double> rgba;

  double accAlpha(int col, int row) const {
    return rgba[(static_cast<std::size_t>(row) * width + col) * 4 + 3];
  }
  Vec3 color(int col, int row) const {
    const std::size_t o = (static_cast<std::size_t>(row) * width + col) * 4;
    return {rgba[o], rgba[o + 1], rgba[o + 2]};
  }
};

Image render_image(const Camera& camera, const GaussianSet& set, const ProximityIndex* index,
                   const HashGrid& grid, const FieldNetwork& net, const RenderConfig& config);

/// Same, with features already resolved (avoids re-sampling the grid).
Image render_image(const Camera& camera, const FieldScene& scene, const RenderConfig& config);

double mean_abs_error(const Image& a, const Image& b);

/// Little-endian dump: int32 width, int32 height, then 4 float32 per pixel.
std::vector<std::uint8_t> raw_float_dump(const Image& image);

}  // namespace genie
