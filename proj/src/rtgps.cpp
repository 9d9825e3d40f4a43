#include "genie/rtgps.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

namespace genie {

namespace {

std::string staleMessage(std::uint64_t built, std::uint64_t current) {
  std::ostringstream msg;
  msg << "proximity index built at epoch " << built << " queried against epoch " << current;
  return msg.str();
}

struct Candidate {
  double dist2;
  std::uint32_t index;
};

bool closer(const Candidate& a, const Candidate& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}

void emitTopK(std::vector<Candidate>& candidates, int k, NeighborResult& out) {
  const std::size_t keep = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(k));
  out.overflowed = candidates.size() > static_cast<std::size_t>(k);
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), closer);
  out.indices.resize(keep);
  out.distances.resize(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.indices[i] = candidates[i].index;
    out.distances[i] = std::sqrt(candidates[i].dist2);
  }
}

}  // namespace

StaleIndexError::StaleIndexError(std::uint64_t built, std::uint64_t current)
    : std::runtime_error(staleMessage(built, current)), builtEpoch(built), currentEpoch(current) {}

double effective_radius(const Gaussian& g, double q, RadiusMode mode) {
  if (!(q > 0.0)) throw std::invalid_argument("effective_radius: quantile must be > 0");
  const double maxVar = g.variance().maxCoeff();
  return mode == RadiusMode::StdDev ? q * std::sqrt(maxVar) : q * maxVar;
}

ProximityIndex ProximityIndex::build(const GaussianSet& set, double q, RadiusMode mode) {
  if (set.empty()) throw std::invalid_argument("build_index: empty Gaussian set");
  std::vector<double> radii(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) radii[i] = effective_radius(set[i], q, mode);
  return build_with_radii(set, std::move(radii), q);
}

ProximityIndex ProximityIndex::build_with_radii(const GaussianSet& set, std::vector<double> radii,
                                                double q) {
  if (set.empty()) throw std::invalid_argument("build_index: empty Gaussian set");
  if (radii.size() != set.size()) {
    throw std::invalid_argument("build_index: radius table length does not match the set");
  }
  ProximityIndex index;
  index.q_ = q;
  index.builtEpoch_ = set.epoch();
  index.radii_ = std::move(radii);
  index.centers_.reserve(set.size());
  double maxRadius = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!(index.radii_[i] > 0.0) || !std::isfinite(index.radii_[i])) {
      std::ostringstream msg;
      msg << "build_index: radius of Gaussian " << i << " is not finite and positive";
      throw std::invalid_argument(msg.str());
    }
    index.centers_.push_back(set[i].mean);
    maxRadius = std::max(maxRadius, index.radii_[i]);
  }
  index.tMax_ = 2.0 * maxRadius;
  index.buildTree();
  return index;
}

void ProximityIndex::buildTree() {
  const auto n = static_cast<std::uint32_t>(centers_.size());
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.clear();
  nodes_.reserve(2 * (n / kLeafSize + 1));
  depth_ = 0;

  struct Task {
    std::uint32_t node;
    std::uint32_t begin;
    std::uint32_t end;
    int depth;
  };
  std::vector<Task> stack;
  nodes_.push_back({});
  stack.push_back({0, 0, n, 1});
  while (!stack.empty()) {
    const Task task = stack.back();
    stack.pop_back();
    depth_ = std::max(depth_, task.depth);

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    Vec3 clo = lo;
    Vec3 chi = hi;
    for (std::uint32_t i = task.begin; i < task.end; ++i) {
      const std::uint32_t p = order_[i];
      const Vec3& c = centers_[p];
      // Padding keeps boundary points whose squared distance equals r^2 inside
      // the box despite rounding in c +/- r.
      const double pad = 1e-9 * (radii_[p] + c.cwiseAbs().maxCoeff());
      const Vec3 r = Vec3::Constant(radii_[p] + pad);
      lo = lo.cwiseMin(c - r);
      hi = hi.cwiseMax(c + r);
      clo = clo.cwiseMin(c);
      chi = chi.cwiseMax(c);
    }
    nodes_[task.node].lo = lo;
    nodes_[task.node].hi = hi;

    const std::uint32_t count = task.end - task.begin;
    if (count <= kLeafSize) {
      nodes_[task.node].first = task.begin;
      nodes_[task.node].count = count;
      continue;
    }
    int axis = 0;
    (chi - clo).maxCoeff(&axis);
    const std::uint32_t mid = task.begin + count / 2;
    std::nth_element(order_.begin() + task.begin, order_.begin() + mid, order_.begin() + task.end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = centers_[a][axis];
                       const double cb = centers_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const auto left = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({});
    nodes_.push_back({});
    nodes_[task.node].first = left;
    nodes_[task.node].count = 0;
    stack.push_back({left + 1, mid, task.end, task.depth + 1});
    stack.push_back({left, task.begin, mid, task.depth + 1});
  }
}

NeighborResult ProximityIndex::query(const GaussianSet& set, const Vec3& x, int k) const {
  NeighborResult out;
  query(set, x, k, out);
  return out;
}

void ProximityIndex::query(const GaussianSet& set, const Vec3& x, int k,
                           NeighborResult& out) const {
  if (set.epoch() != builtEpoch_) throw StaleIndexError(builtEpoch_, set.epoch());
  if (k < 1) throw std::invalid_argument("query: k must be >= 1");
  out.clear();

  thread_local std::vector<Candidate> candidates;
  thread_local std::vector<std::uint32_t> stack;
  candidates.clear();
  stack.clear();
  stack.push_back(0);
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if ((x.array() < node.lo.array()).any() || (x.array() > node.hi.array()).any()) continue;
    if (node.count == 0) {
      stack.push_back(node.first + 1);
      stack.push_back(node.first);
      continue;
    }
    for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
      const std::uint32_t p = order_[i];
      const double d2 = (x - centers_[p]).squaredNorm();
      if (d2 <= radii_[p] * radii_[p]) candidates.push_back({d2, p});
    }
  }
  emitTopK(candidates, k, out);
#ifndef NDEBUG
  for (std::size_t i = 0; i < out.size(); ++i) {
    assert(out.distances[i] <= radii_[out.indices[i]] * (1.0 + 1e-12));
  }
#endif
}

NeighborResult brute_force_query(const GaussianSet& set, const Vec3& x, int k, double q,
                                 RadiusMode mode) {
  if (k < 1) throw std::invalid_argument("brute_force_query: k must be >= 1");
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double r = effective_radius(set[i], q, mode);
    const double d2 = (x - set[i].mean).squaredNorm();
    if (d2 <= r * r) candidates.push_back({d2, static_cast<std::uint32_t>(i)});
  }
  NeighborResult out;
  emitTopK(candidates, k, out);
  return out;
}

}  // namespace genie
