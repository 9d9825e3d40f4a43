#pragma once

#include "genie/scene.hpp"
#include "genie/trainer.hpp"

#include <cstdint>
#include <vector>

namespace genie {

/// Procedural test scene: a few colored Gaussian density blobs seen from a
/// ring of cameras. Ground truth comes from direct numerical integration of
/// the analytic density, sharing no code with the neural renderer.
struct ToyBlob {
  Vec3 center = Vec3::Zero();
  Vec3 stddev = Vec3::Constant(0.15);
  Vec3 color = Vec3::Constant(0.5);
  double density = 40.0;
};

struct ToySpec {
  int blobs = 3;
  int cameras = 8;
  int width = 64;
  int height = 64;
  double ringRadius = 3.0;
  double elevationDeg = 25.0;
  double fovDeg = 40.0;
  double near = 1.5;
  double far = 4.5;
  Vec3 background = Vec3::Ones();
  /// Midpoint quadrature steps per reference ray.
  int referenceSamples = 512;
  /// Initial Gaussians sampled inside the blobs for training.
  int initPoints = 3000;
  /// Standard deviation given to the initial Gaussians.
  double initStd = 0.05;
};

struct ToyScene {
  ToySpec spec;
  std::vector<ToyBlob> blobs;
  Dataset dataset;
};

ToyScene generate_toy_scene(const ToySpec& spec, std::uint64_t seed);

/// Analytic density and density-weighted color at x.
double toy_density(const std::vector<ToyBlob>& blobs, const Vec3& x, Vec3* color = nullptr);

/// Reference image (RGB triples, row-major) by midpoint quadrature.
std::vector<double> toy_reference_image(const std::vector<ToyBlob>& blobs, const Camera& camera,
                                        const Vec3& background, int samples);

/// Means drawn from the blob distributions (truncated at two standard
/// deviations), proportional to blob volume.
std::vector<Vec3> toy_init_means(const ToyScene& scene, std::uint64_t seed);

/// Unbaked, fully confident Gaussians with zero features.
GaussianSet make_initial_gaussians(const std::vector<Vec3>& means,
                                   const std::vector<Vec3>& logScales, std::size_t featureDim);

}  // namespace genie
