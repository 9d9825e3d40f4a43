#pragma once

#include "genie/scene.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace genie {

/// Multi-resolution hash grid layout. Defaults follow the usual
/// Instant-NGP choices, scaled down for CPU use.
struct HashGridConfig {
  int levels = 16;
  int baseResolution = 16;
  double perLevelScale = 1.5;
  std::uint32_t tableSize = 1u << 19;
  int featuresPerLevel = 2;
  Vec3 boundsMin = Vec3::Constant(-1.0);
  Vec3 boundsMax = Vec3::Constant(1.0);

  int outputDim() const { return levels * featuresPerLevel; }
  int resolution(int level) const;
  /// True when every vertex of the level gets its own row.
  bool isDense(int level) const;
  /// Throws std::invalid_argument on a broken invariant.
  void validate() const;
};

/// Trainable tables, laid out [level][row][feature].
struct HashGridParams {
  std::vector<double> tables;

  std::size_t rowOffset(const HashGridConfig& config, int level, std::uint32_t row) const {
    return (static_cast<std::size_t>(level) * config.tableSize + row) *
           static_cast<std::size_t>(config.featuresPerLevel);
  }
};

/// Sparse parameter gradient: (flat index into `tables`, value). The same
/// index may appear more than once when hashed vertices collide.
using SparseGradient = std::vector<std::pair<std::size_t, double>>;

/// Dense gradient for the grid tables that remembers which entries were
/// written, so clearing and sparse optimizer updates stay proportional to
/// the touched set.
class GridGradientBuffer {
 public:
  void resize(std::size_t n) {
    grad_.assign(n, 0.0);
    mark_.assign(n, 0);
    touched_.clear();
  }
  void add(std::size_t i, double v) {
    if (!mark_[i]) {
      mark_[i] = 1;
      touched_.push_back(i);
    }
    grad_[i] += v;
  }
  void clear() {
    for (std::size_t i : touched_) {
      grad_[i] = 0.0;
      mark_[i] = 0;
    }
    touched_.clear();
  }
  double operator[](std::size_t i) const { return grad_[i]; }
  std::size_t size() const { return grad_.size(); }
  const std::vector<std::size_t>& touched() const { return touched_; }

 private:
  std::vector<double> grad_;
  std::vector<std::uint8_t> mark_;
  std::vector<std::size_t> touched_;
};

struct GridBackward {
  SparseGradient gradParams;
  Vec3 gradX = Vec3::Zero();
};

std::uint32_t hash_index(const std::array<std::int64_t, 3>& cell, int level,
                         const HashGridConfig& config);

/// Smallest per-axis distance from x to a cell face on any level. Finite
/// differences with steps below this never cross a face.
double distance_to_cell_face(const Vec3& x, const HashGridConfig& config);

HashGridParams init_params(const HashGridConfig& config, std::uint64_t seed);

class HashGrid {
 public:
  HashGrid() = default;
  HashGrid(HashGridConfig config, HashGridParams params);
  HashGrid(HashGridConfig config, std::uint64_t seed);

  const HashGridConfig& config() const { return config_; }
  const HashGridParams& params() const { return params_; }
  HashGridParams& params() { return params_; }
  int outputDim() const { return config_.outputDim(); }

  /// Concatenated per-level trilinear features. Points outside the bounds
  /// are clamped to the boundary; non-finite input throws.
  void encode(const Vec3& x, std::span<double> out) const;
  std::vector<double> encode(const Vec3& x) const;

  /// Gradients of <upstream, encode(x)> w.r.t. the tables and x. gradX is the
  /// derivative inside the cell chosen by floor(); zero along clamped axes.
  GridBackward encode_backward(const Vec3& x, std::span<const double> upstream) const;

  /// Allocation-free variant: appends into `gradParams` when non-null and
  /// returns gradX.
  Vec3 backward_into(const Vec3& x, std::span<const double> upstream,
                     SparseGradient* gradParams) const;

  /// Adds the table gradient straight into `buffer`; returns gradX.
  Vec3 backward_accumulate(const Vec3& x, std::span<const double> upstream,
                           GridGradientBuffer& buffer) const;

 private:
  struct Corner {
    std::uint32_t row;
    double weight;
  };
  struct LevelCell {
    std::array<Corner, 8> corners;
    Vec3 frac;
    std::array<std::int64_t, 3> cell;
    std::array<bool, 3> clamped;
  };
  struct Level {
    int resolution;
    bool dense;
    std::uint64_t side;
  };
  LevelCell locate(const Vec3& x, int level) const;
  template <class Sink>
  Vec3 backwardImpl(const Vec3& x, std::span<const double> upstream, Sink&& sink) const;
  std::uint32_t index(const std::array<std::int64_t, 3>& cell, const Level& level) const;

  HashGridConfig config_;
  HashGridParams params_;
  std::vector<Level> levels_;
};

}  // namespace genie
