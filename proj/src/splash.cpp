#include "genie/splash.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace genie {

void SplashConfig::validate() const {
  if (k < 1) throw std::invalid_argument("splash: k must be >= 1");
  if (!(q > 0.0)) throw std::invalid_argument("splash: Q must be > 0");
}

FeatureTable live_features(const GaussianSet& set, const HashGrid& grid) {
  FeatureTable table;
  table.dim = static_cast<std::size_t>(grid.outputDim());
  table.data.resize(set.size() * table.dim);
  for (std::size_t i = 0; i < set.size(); ++i) grid.encode(set[i].mean, table.row(i));
  return table;
}

FeatureTable baked_features(const GaussianSet& set) {
  FeatureTable table;
  table.dim = set.empty() ? 0 : set[0].feature.size();
  table.data.reserve(set.size() * table.dim);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].feature.size() != table.dim) {
      std::ostringstream msg;
      msg << "splash: Gaussian " << i << " has feature length " << set[i].feature.size()
          << ", expected " << table.dim;
      throw std::invalid_argument(msg.str());
    }
    table.data.insert(table.data.end(), set[i].feature.begin(), set[i].feature.end());
  }
  return table;
}

FeatureTable resolve_features(const GaussianSet& set, const HashGrid& grid, FeatureMode mode) {
  return mode == FeatureMode::Live ? live_features(set, grid) : baked_features(set);
}

double squared_mahalanobis(const Vec3& x, const Gaussian& g) {
  const Vec3 d = x - g.mean;
  return (d.array().square() * (-g.logScale.array()).exp()).sum();
}

double mahalanobis_weight(const Vec3& x, const Gaussian& g) {
  return std::exp(-0.5 * squared_mahalanobis(x, g));
}

void weight_gradients(const Vec3& x, const Gaussian& g, double weight, Vec3& dMean,
                      Vec3& dLogScale) {
  const Vec3 d = x - g.mean;
  const Vec3 inv = g.inverseVariance();
  // w = exp(-1/2 sum d_a^2 e^{-c_a})
  dMean = weight * d.cwiseProduct(inv);
  dLogScale = 0.5 * weight * d.cwiseProduct(d).cwiseProduct(inv);
}

namespace {

void accumulateWeighted(const Vec3& x, const GaussianSet& set, SplashOutput& out,
                        const auto& featureOf, std::size_t dim) {
  out.feature.assign(dim, 0.0);
  out.weights.resize(out.neighbors.size());
  out.empty = out.neighbors.empty();
  for (std::size_t n = 0; n < out.neighbors.size(); ++n) {
    const std::uint32_t i = out.neighbors.indices[n];
    const double w = mahalanobis_weight(x, set[i]);
    out.weights[n] = w;
    const std::span<const double> f = featureOf(i);
    for (std::size_t j = 0; j < dim; ++j) out.feature[j] += w * f[j];
  }
}

}  // namespace

SplashOutput encode_point(const Vec3& x, const GaussianSet& set, const ProximityIndex& index,
                          const HashGrid& grid, const SplashConfig& config) {
  config.validate();
  SplashOutput out;
  index.query(set, x, config.k, out.neighbors);
  const auto dim = static_cast<std::size_t>(grid.outputDim());
  if (config.mode == FeatureMode::Live) {
    std::vector<double> scratch(dim);
    accumulateWeighted(
        x, set, out,
        [&](std::uint32_t i) {
          grid.encode(set[i].mean, scratch);
          return std::span<const double>(scratch);
        },
        dim);
  } else {
    accumulateWeighted(
        x, set, out,
        [&](std::uint32_t i) {
          if (set[i].feature.size() != dim) {
            throw std::invalid_argument("splash: baked feature length mismatch");
          }
          return std::span<const double>(set[i].feature);
        },
        dim);
  }
  return out;
}

void encode_point(const Vec3& x, const GaussianSet& set, const ProximityIndex& index,
                  const FeatureTable& features, const SplashConfig& config, SplashOutput& out) {
  index.query(set, x, config.k, out.neighbors);
  accumulateWeighted(
      x, set, out, [&](std::uint32_t i) { return features.row(i); }, features.dim);
}

SplashGradient encode_point_backward(const Vec3& x, const GaussianSet& set,
                                     const ProximityIndex& index, const HashGrid& grid,
                                     const SplashConfig& config,
                                     std::span<const double> upstream) {
  config.validate();
  if (config.mode != FeatureMode::Live) {
    throw std::invalid_argument("splash: backward is only defined in Live mode");
  }
  const auto dim = static_cast<std::size_t>(grid.outputDim());
  if (upstream.size() != dim) throw std::invalid_argument("splash: upstream length mismatch");

  SplashGradient grad;
  const NeighborResult neighbors = index.query(set, x, config.k);
  grad.neighbors = neighbors.indices;
  grad.dMean.resize(neighbors.size());
  grad.dLogScale.resize(neighbors.size());
  std::vector<double> feature(dim);
  std::vector<double> scaled(dim);
  for (std::size_t n = 0; n < neighbors.size(); ++n) {
    const Gaussian& g = set[neighbors.indices[n]];
    const double w = mahalanobis_weight(x, g);
    grid.encode(g.mean, feature);
    double dw = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      dw += upstream[j] * feature[j];
      scaled[j] = w * upstream[j];
    }
    Vec3 dwdMean;
    Vec3 dwdLogScale;
    weight_gradients(x, g, w, dwdMean, dwdLogScale);
    const Vec3 gridGradX = grid.backward_into(g.mean, scaled, &grad.dParams);
    grad.dMean[n] = dw * dwdMean + gridGradX;
    grad.dLogScale[n] = dw * dwdLogScale;
  }
  return grad;
}

void bake_features(GaussianSet& set, const HashGrid& grid) {
  set.mutate([&](std::vector<Gaussian>& gaussians) {
    for (Gaussian& g : gaussians) {
      g.feature = grid.encode(g.mean);
      g.baked = true;
    }
  });
}

DropBoundReport verify_drop_bound(const Vec3& x, const GaussianSet& set,
                                  const FeatureTable& features,
                                  std::span<const std::uint32_t> neighbors,
                                  std::span<const std::uint32_t> dropped, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("verify_drop_bound: epsilon must be > 0");
  const std::size_t dim = features.dim;
  DropBoundReport report;
  report.thresholds.assign(dim, 0.0);
  report.actualDeviation.assign(dim, 0.0);
  report.minDropDistance = std::numeric_limits<double>::infinity();

  std::vector<double> mass(dim, 0.0);
  for (std::uint32_t i : dropped) {
    if (std::find(neighbors.begin(), neighbors.end(), i) == neighbors.end()) {
      throw std::invalid_argument("verify_drop_bound: dropped index is not a neighbor");
    }
    const auto f = features.row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!std::isfinite(f[j])) {
        throw std::invalid_argument("verify_drop_bound: non-finite feature in drop set");
      }
      mass[j] += std::abs(f[j]);
    }
    report.minDropDistance = std::min(report.minDropDistance, std::sqrt(squared_mahalanobis(x, set[i])));
  }

  std::vector<double> full(dim, 0.0);
  std::vector<double> kept(dim, 0.0);
  for (std::uint32_t i : neighbors) {
    const double w = mahalanobis_weight(x, set[i]);
    const bool isDropped = std::find(dropped.begin(), dropped.end(), i) != dropped.end();
    const auto f = features.row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      full[j] += w * f[j];
      if (!isDropped) kept[j] += w * f[j];
    }
  }

  for (std::size_t j = 0; j < dim; ++j) {
    report.actualDeviation[j] = std::abs(full[j] - kept[j]);
    // A coordinate with zero mass gets no contribution from the drop set.
    if (mass[j] == 0.0) continue;
    const double arg = -2.0 * std::log(epsilon / mass[j]);
    report.thresholds[j] = arg > 0.0 ? std::sqrt(arg) : 0.0;
    report.threshold = std::max(report.threshold, report.thresholds[j]);
    if (!dropped.empty() && !(report.minDropDistance > report.thresholds[j])) {
      report.holds = false;
    }
  }
  return report;
}

}  // namespace genie
