#include "genie/hashgrid.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace genie {

namespace {

constexpr std::uint32_t kPrimes[3] = {1u, 2654435761u, 805459861u};

}  // namespace

int HashGridConfig::resolution(int level) const {
  return static_cast<int>(std::floor(baseResolution * std::pow(perLevelScale, level)));
}

bool HashGridConfig::isDense(int level) const {
  const std::uint64_t side = static_cast<std::uint64_t>(resolution(level)) + 1;
  return side * side * side <= tableSize;
}

void HashGridConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("hashgrid: levels must be >= 1");
  if (featuresPerLevel < 1) throw std::invalid_argument("hashgrid: featuresPerLevel must be >= 1");
  if (baseResolution < 1) throw std::invalid_argument("hashgrid: baseResolution must be >= 1");
  if (!(perLevelScale > 1.0)) throw std::invalid_argument("hashgrid: perLevelScale must be > 1");
  if (tableSize == 0 || (tableSize & (tableSize - 1)) != 0) {
    throw std::invalid_argument("hashgrid: tableSize must be a power of two");
  }
  for (int l = 1; l < levels; ++l) {
    if (resolution(l) <= resolution(l - 1)) {
      std::ostringstream msg;
      msg << "hashgrid: resolution of level " << l << " (" << resolution(l)
          << ") does not exceed level " << l - 1;
      throw std::invalid_argument(msg.str());
    }
  }
  if (!((boundsMin.array() < boundsMax.array()).all())) {
    throw std::invalid_argument("hashgrid: boundsMin must be < boundsMax componentwise");
  }
}

namespace {

std::uint32_t cellIndex(const std::array<std::int64_t, 3>& cell, bool dense, std::uint64_t side,
                        std::uint32_t tableSize) {
  if (dense) {
    const std::uint64_t idx = static_cast<std::uint64_t>(cell[0]) +
                              static_cast<std::uint64_t>(cell[1]) * side +
                              static_cast<std::uint64_t>(cell[2]) * side * side;
    return static_cast<std::uint32_t>(idx);
  }
  std::uint32_t h = 0;
  for (int a = 0; a < 3; ++a) h ^= static_cast<std::uint32_t>(cell[a]) * kPrimes[a];
  return h & (tableSize - 1);
}

}  // namespace

std::uint32_t hash_index(const std::array<std::int64_t, 3>& cell, int level,
                         const HashGridConfig& config) {
  return cellIndex(cell, config.isDense(level),
                   static_cast<std::uint64_t>(config.resolution(level)) + 1, config.tableSize);
}

std::uint32_t HashGrid::index(const std::array<std::int64_t, 3>& cell, const Level& level) const {
  return cellIndex(cell, level.dense, level.side, config_.tableSize);
}

HashGridParams init_params(const HashGridConfig& config, std::uint64_t seed) {
  HashGridParams params;
  params.tables.resize(static_cast<std::size_t>(config.levels) * config.tableSize *
                       static_cast<std::size_t>(config.featuresPerLevel));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1e-4, 1e-4);
  for (double& v : params.tables) v = dist(rng);
  return params;
}

HashGrid::HashGrid(HashGridConfig config, HashGridParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const std::size_t expected = static_cast<std::size_t>(config_.levels) * config_.tableSize *
                               static_cast<std::size_t>(config_.featuresPerLevel);
  if (params_.tables.size() != expected) {
    throw std::invalid_argument("hashgrid: parameter table size does not match config");
  }
  for (int l = 0; l < config_.levels; ++l) {
    const int res = config_.resolution(l);
    levels_.push_back({res, config_.isDense(l), static_cast<std::uint64_t>(res) + 1});
  }
}

HashGrid::HashGrid(HashGridConfig config, std::uint64_t seed)
    : HashGrid(config, init_params(config, seed)) {}

double distance_to_cell_face(const Vec3& x, const HashGridConfig& config) {
  double best = std::numeric_limits<double>::infinity();
  for (int level = 0; level < config.levels; ++level) {
    const int res = config.resolution(level);
    for (int a = 0; a < 3; ++a) {
      const double extent = config.boundsMax[a] - config.boundsMin[a];
      const double pos = (x[a] - config.boundsMin[a]) / extent * res;
      const double face = std::abs(pos - std::round(pos));
      best = std::min(best, face * extent / res);
    }
  }
  return best;
}

HashGrid::LevelCell HashGrid::locate(const Vec3& x, int level) const {
  LevelCell lc;
  const Level& info = levels_[static_cast<std::size_t>(level)];
  const int res = info.resolution;
  for (int a = 0; a < 3; ++a) {
    double u = (x[a] - config_.boundsMin[a]) / (config_.boundsMax[a] - config_.boundsMin[a]);
    lc.clamped[a] = false;
    if (u < 0.0) {
      u = 0.0;
      lc.clamped[a] = true;
    } else if (u > 1.0) {
      u = 1.0;
      lc.clamped[a] = true;
    }
    const double pos = u * res;
    std::int64_t c = static_cast<std::int64_t>(std::floor(pos));
    if (c >= res) c = res - 1;
    lc.cell[a] = c;
    lc.frac[a] = pos - static_cast<double>(c);
  }
  for (int corner = 0; corner < 8; ++corner) {
    std::array<std::int64_t, 3> v;
    double w = 1.0;
    for (int a = 0; a < 3; ++a) {
      const bool hi = (corner >> a) & 1;
      v[a] = lc.cell[a] + (hi ? 1 : 0);
      w *= hi ? lc.frac[a] : 1.0 - lc.frac[a];
    }
    lc.corners[corner] = {index(v, info), w};
  }
  return lc;
}

void HashGrid::encode(const Vec3& x, std::span<double> out) const {
  if (!x.allFinite()) throw std::invalid_argument("hashgrid: non-finite query point");
  if (out.size() != static_cast<std::size_t>(outputDim())) {
    throw std::invalid_argument("hashgrid: output span has wrong length");
  }
  const int f = config_.featuresPerLevel;
  for (int l = 0; l < config_.levels; ++l) {
    const LevelCell lc = locate(x, l);
    double* dst = out.data() + static_cast<std::size_t>(l) * f;
    for (int j = 0; j < f; ++j) dst[j] = 0.0;
    for (const Corner& c : lc.corners) {
      const double* src = params_.tables.data() + params_.rowOffset(config_, l, c.row);
      for (int j = 0; j < f; ++j) dst[j] += c.weight * src[j];
    }
  }
}

std::vector<double> HashGrid::encode(const Vec3& x) const {
  std::vector<double> out(static_cast<std::size_t>(outputDim()));
  encode(x, out);
  return out;
}

template <class Sink>
Vec3 HashGrid::backwardImpl(const Vec3& x, std::span<const double> upstream, Sink&& sink) const {
  if (upstream.size() != static_cast<std::size_t>(outputDim())) {
    throw std::invalid_argument("hashgrid: upstream gradient has wrong length");
  }
  const int f = config_.featuresPerLevel;
  Vec3 gradX = Vec3::Zero();
  for (int l = 0; l < config_.levels; ++l) {
    const LevelCell lc = locate(x, l);
    const double* up = upstream.data() + static_cast<std::size_t>(l) * f;
    std::array<double, 8> dot{};
    for (int corner = 0; corner < 8; ++corner) {
      const Corner& c = lc.corners[corner];
      const std::size_t base = params_.rowOffset(config_, l, c.row);
      const double* phi = params_.tables.data() + base;
      double d = 0.0;
      for (int j = 0; j < f; ++j) {
        d += up[j] * phi[j];
        if (c.weight != 0.0) sink(base + static_cast<std::size_t>(j), c.weight * up[j]);
      }
      dot[corner] = d;
    }
    const int res = levels_[static_cast<std::size_t>(l)].resolution;
    for (int a = 0; a < 3; ++a) {
      if (lc.clamped[a]) continue;
      const int b0 = (a + 1) % 3;
      const int b1 = (a + 2) % 3;
      double acc = 0.0;
      for (int corner = 0; corner < 8; ++corner) {
        if ((corner >> a) & 1) continue;
        const double w = (((corner >> b0) & 1) ? lc.frac[b0] : 1.0 - lc.frac[b0]) *
                         (((corner >> b1) & 1) ? lc.frac[b1] : 1.0 - lc.frac[b1]);
        acc += w * (dot[corner | (1 << a)] - dot[corner]);
      }
      gradX[a] += acc * res / (config_.boundsMax[a] - config_.boundsMin[a]);
    }
  }
  return gradX;
}

Vec3 HashGrid::backward_into(const Vec3& x, std::span<const double> upstream,
                             SparseGradient* gradParams) const {
  if (gradParams == nullptr) return backwardImpl(x, upstream, [](std::size_t, double) {});
  return backwardImpl(x, upstream,
                      [gradParams](std::size_t i, double v) { gradParams->emplace_back(i, v); });
}

Vec3 HashGrid::backward_accumulate(const Vec3& x, std::span<const double> upstream,
                                   GridGradientBuffer& buffer) const {
  return backwardImpl(x, upstream, [&buffer](std::size_t i, double v) { buffer.add(i, v); });
}

GridBackward HashGrid::encode_backward(const Vec3& x, std::span<const double> upstream) const {
  GridBackward out;
  out.gradParams.reserve(static_cast<std::size_t>(8 * config_.levels * config_.featuresPerLevel));
  out.gradX = backward_into(x, upstream, &out.gradParams);
  return out;
}

}  // namespace genie
