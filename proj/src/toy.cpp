#include <algorithm>
#include "genie/toy.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace genie {

double toy_density(const std::vector<ToyBlob>& blobs, const Vec3& x, Vec3* color) {
  double sigma = 0.0;
  Vec3 weighted = Vec3::Zero();
  for (const ToyBlob& b : blobs) {
    const Vec3 z = (x - b.center).cwiseQuotient(b.stddev);
    const double s = b.density * std::exp(-0.5 * z.squaredNorm());
    sigma += s;
    weighted += s * b.color;
  }
  if (color != nullptr) *color = sigma > 0.0 ? Vec3(weighted / sigma) : Vec3(Vec3::Zero());
  return sigma;
}

std::vector<double> toy_reference_image(const std::vector<ToyBlob>& blobs, const Camera& camera,
                                        const Vec3& background, int samples) {
  validate_camera(camera);
  if (samples < 1) throw std::invalid_argument("toy_reference_image: samples must be positive");
  std::vector<double> out(static_cast<std::size_t>(camera.width) * camera.height * 3);
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      const Ray ray = camera_ray(camera, col + 0.5, row + 0.5);
      const double dt = (ray.tFar - ray.tNear) / samples;
      double trans = 1.0;
      Vec3 rgb = Vec3::Zero();
      for (int i = 0; i < samples && trans > 1e-12; ++i) {
        Vec3 c;
        const double sigma = toy_density(blobs, ray.at(ray.tNear + (i + 0.5) * dt), &c);
        const double absorbed = 1.0 - std::exp(-sigma * dt);
        rgb += trans * absorbed * c;
        trans *= 1.0 - absorbed;
      }
      rgb += trans * background;
      const std::size_t p = static_cast<std::size_t>(row) * camera.width + col;
      for (int ch = 0; ch < 3; ++ch) out[p * 3 + ch] = rgb[ch];
    }
  }
  return out;
}

ToyScene generate_toy_scene(const ToySpec& spec, std::uint64_t seed) {
  if (spec.blobs < 0 || spec.cameras < 1 || spec.width < 1 || spec.height < 1) {
    throw std::invalid_argument("toy spec: counts and resolution must be positive");
  }
  ToyScene scene;
  scene.spec = spec;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int b = 0; b < spec.blobs; ++b) {
    ToyBlob blob;
    // Centers spread around a circle so blobs overlap only slightly.
    const double angle = 2.0 * std::numbers::pi * (b + 0.3 * unit(rng)) / std::max(1, spec.blobs);
    const double radius = spec.blobs == 1 ? 0.0 : 0.3 + 0.15 * unit(rng);
    blob.center = Vec3(radius * std::cos(angle), radius * std::sin(angle), 0.3 * (unit(rng) - 0.5));
    for (int a = 0; a < 3; ++a) blob.stddev[a] = 0.12 + 0.08 * unit(rng);
    // Saturated primary-ish colors from an evenly spaced hue wheel.
    const double hue = std::fmod(b / static_cast<double>(std::max(1, spec.blobs)) + 0.1 * unit(rng), 1.0);
    for (int ch = 0; ch < 3; ++ch) {
      const double h = std::fmod(hue + ch / 3.0, 1.0);
      blob.color[ch] = 0.1 + 0.8 * std::clamp(std::abs(h * 6.0 - 3.0) - 1.0, 0.0, 1.0);
    }
    blob.density = 30.0 + 20.0 * unit(rng);
    scene.blobs.push_back(blob);
  }

  const double fov = spec.fovDeg * std::numbers::pi / 180.0;
  const double focal = spec.width / (2.0 * std::tan(fov / 2.0));
  const double elev = spec.elevationDeg * std::numbers::pi / 180.0;
  scene.dataset.background = spec.background;
  for (int c = 0; c < spec.cameras; ++c) {
    const double az = 2.0 * std::numbers::pi * c / spec.cameras;
    // Alternate above and below the equator so the ring sees the blobs from
    // both sides.
    const double e = (c % 2 == 0) ? elev : -0.5 * elev;
    const Vec3 eye = spec.ringRadius *
                     Vec3(std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e));
    const Camera cam = look_at_camera(eye, Vec3::Zero(), Vec3::UnitZ(), focal, spec.width,
                                      spec.height, spec.near, spec.far);
    scene.dataset.cameras.push_back(cam);
    scene.dataset.images.push_back(
        toy_reference_image(scene.blobs, cam, spec.background, spec.referenceSamples));
  }
  return scene;
}

std::vector<Vec3> toy_init_means(const ToyScene& scene, std::uint64_t seed) {
  std::vector<Vec3> means;
  if (scene.blobs.empty() || scene.spec.initPoints <= 0) return means;
  std::vector<double> volume;
  double total = 0.0;
  for (const ToyBlob& b : scene.blobs) {
    volume.push_back(b.stddev.prod());
    total += volume.back();
  }
  // largest remainder, so the counts add up to initPoints exactly
  std::vector<int> counts(scene.blobs.size());
  std::vector<std::pair<double, std::size_t>> rest;
  int assigned = 0;
  for (std::size_t b = 0; b < scene.blobs.size(); ++b) {
    const double share = scene.spec.initPoints * volume[b] / total;
    counts[b] = static_cast<int>(std::floor(share));
    assigned += counts[b];
    rest.emplace_back(-(share - counts[b]), b);
  }
  std::sort(rest.begin(), rest.end());
  for (int k = 0; assigned < scene.spec.initPoints; ++k, ++assigned) ++counts[rest[static_cast<std::size_t>(k)].second];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t b = 0; b < scene.blobs.size(); ++b) {
    const int count = counts[b];
    const ToyBlob& blob = scene.blobs[b];
    for (int i = 0; i < count;) {
      const Vec3 z(normal(rng), normal(rng), normal(rng));
      if (z.norm() > 2.0) continue;
      means.push_back(blob.center + z.cwiseProduct(blob.stddev));
      ++i;
    }
  }
  return means;
}

GaussianSet make_initial_gaussians(const std::vector<Vec3>& means,
                                   const std::vector<Vec3>& logScales, std::size_t featureDim) {
  if (means.size() != logScales.size()) {
    throw std::invalid_argument("make_initial_gaussians: means and logScales differ in length");
  }
  std::vector<Gaussian> gs(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    gs[i].mean = means[i];
    gs[i].logScale = logScales[i];
    gs[i].feature.assign(featureDim, 0.0);
    gs[i].confidence = 1.0;
    gs[i].baked = false;
  }
  return GaussianSet(std::move(gs));
}

}  // namespace genie
