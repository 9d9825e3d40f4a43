#pragma once

#include "genie/pipeline.hpp"
#include "genie/scene.hpp"
#include "genie/toy.hpp"
#include "genie/trainer.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

namespace genie::testing {

struct SceneSpec {
  std::size_t n = 100;
  std::size_t featureDim = 4;
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);
  // per-axis std drawn log-uniformly from [minStd, maxStd]
  double minStd = 0.01;
  double maxStd = 0.1;
  bool baked = true;
};

inline GaussianSet random_scene(const SceneSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Gaussian> gs(spec.n);
  for (Gaussian& g : gs) {
    for (int a = 0; a < 3; ++a) {
      g.mean[a] = spec.lo[a] + (spec.hi[a] - spec.lo[a]) * u(rng);
      const double s = spec.minStd * std::pow(spec.maxStd / spec.minStd, u(rng));
      g.logScale[a] = std::log(s * s);
    }
    g.feature.resize(spec.featureDim);
    for (double& f : g.feature) f = n01(rng);
    g.confidence = 1.0;
    g.baked = spec.baked;
  }
  return GaussianSet(std::move(gs));
}

/// Points mostly near means (inside or just past their spheres), some uniform.
inline std::vector<Vec3> probe_points(const GaussianSet& set, double reach, std::size_t count,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec3 lo = Vec3::Constant(INFINITY), hi = Vec3::Constant(-INFINITY);
  for (const Gaussian& g : set.gaussians()) {
    lo = lo.cwiseMin(g.mean);
    hi = hi.cwiseMax(g.mean);
  }
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (u(rng) < 0.8) {
      const Gaussian& g = set[static_cast<std::size_t>(u(rng) * set.size()) % set.size()];
      const Vec3 sd = g.variance().cwiseSqrt();
      out.push_back(g.mean + reach * Vec3(n01(rng) * sd[0], n01(rng) * sd[1], n01(rng) * sd[2]));
    } else {
      out.push_back(lo + (hi - lo).cwiseProduct(Vec3(u(rng), u(rng), u(rng))));
    }
  }
  return out;
}

/// Small toy scene that trains in well under a second per step.
inline ToyScene tiny_toy(std::uint64_t seed = 1) {
  ToySpec spec;
  spec.cameras = 3;
  spec.width = 12;
  spec.height = 12;
  spec.referenceSamples = 64;
  spec.initPoints = 150;
  return generate_toy_scene(spec, seed);
}

inline SceneBundle tiny_bundle(const ToyScene& toy, std::uint64_t seed = 2) {
  RunConfig cfg;
  cfg.hashgrid.levels = 4;
  cfg.hashgrid.tableSize = 1u << 12;
  cfg.hashgrid.boundsMin = Vec3::Constant(-1.5);
  cfg.hashgrid.boundsMax = Vec3::Constant(1.5);
  cfg.field.hidden = 16;
  cfg.field.dirFrequencies = 2;
  cfg.render.samples = 16;
  cfg.train.raysPerBatch = 32;
  cfg.train.logInterval = 0;
  cfg.initSeed = seed;
  std::vector<InitPoint> pts = toy_init_points(toy, seed + 10);
  GaussianSet set =
      gaussians_from_points(pts, Vec3::Constant(std::log(1e-2)), cfg.hashgrid.outputDim());
  return make_bundle(cfg, std::move(set));
}

inline bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

inline bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

inline bool same_bits(const GaussianSet& a, const GaussianSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Gaussian& x = a[i];
    const Gaussian& y = b[i];
    if (!same_bits(std::span<const double>(x.mean.data(), 3), std::span<const double>(y.mean.data(), 3)) ||
        !same_bits(std::span<const double>(x.logScale.data(), 3),
                   std::span<const double>(y.logScale.data(), 3)) ||
        !same_bits(x.feature, y.feature) || !same_bits(x.confidence, y.confidence) ||
        x.baked != y.baked) {
      return false;
    }
  }
  return true;
}

}  // namespace genie::testing
