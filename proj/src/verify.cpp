#include "genie/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace genie {

namespace {

/// Random points biased toward occupied space: near a random mean or
/// uniformly inside the sphere bounds.
class PointSampler {
 public:
  PointSampler(const GaussianSet& set, std::span<const double> radii, std::uint64_t seed)
      : set_(set), radii_(radii), rng_(seed) {
    lo_ = Vec3::Constant(INFINITY);
    hi_ = Vec3::Constant(-INFINITY);
    for (std::size_t i = 0; i < set.size(); ++i) {
      lo_ = lo_.cwiseMin((set[i].mean.array() - radii[i]).matrix()).eval();
      hi_ = hi_.cwiseMax((set[i].mean.array() + radii[i]).matrix()).eval();
    }
  }

  Vec3 next() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng_) < 0.75) {
      std::uniform_int_distribution<std::size_t> pick(0, set_.size() - 1);
      const std::size_t i = pick(rng_);
      std::normal_distribution<double> n(0.0, 1.0);
      Vec3 d(n(rng_), n(rng_), n(rng_));
      return set_[i].mean + d.normalized() * radii_[i] * 1.2 * std::cbrt(u(rng_));
    }
    return lo_ + (hi_ - lo_).cwiseProduct(Vec3(u(rng_), u(rng_), u(rng_)));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  const GaussianSet& set_;
  std::span<const double> radii_;
  std::mt19937_64 rng_;
  Vec3 lo_, hi_;
};

bool close(double analytic, double numeric, double rel = 1e-3, double abs = 1e-7) {
  return std::abs(analytic - numeric) <= rel * std::max(std::abs(analytic), std::abs(numeric)) + abs;
}

std::vector<CheckResult> rtgpsChecks(const SceneCheckpoint& ckpt, const ProximityIndex& index,
                                     const VerifyOptions& opt) {
  const GaussianSet& set = ckpt.bundle.set;
  const SplashConfig& splash = ckpt.bundle.render.splash;
  PointSampler sampler(set, index.radii(), opt.seed + 11);
  std::size_t mismatches = 0, unsound = 0, total = 0;
  std::string firstMismatch;
  for (int qi = 0; qi < opt.queries; ++qi) {
    const Vec3 x = sampler.next();
    for (int k : {1, 4, 16, 32}) {
      ++total;
      const NeighborResult fast = index.query(set, x, k);
      const NeighborResult slow = brute_force_query(set, x, k, splash.q, splash.radiusMode);
      if (!(fast == slow)) {
        if (mismatches++ == 0) {
          std::ostringstream s;
          s << "query " << qi << " k=" << k << ": " << fast.size() << " vs " << slow.size()
            << " neighbors";
          firstMismatch = s.str();
        }
      }
      for (std::size_t n = 0; n < fast.size(); ++n) {
        const Gaussian& g = set[fast.indices[n]];
        if ((x - g.mean).norm() > effective_radius(g, splash.q, splash.radiusMode) * (1 + 1e-12)) {
          ++unsound;
        }
      }
    }
  }
  std::vector<CheckResult> out;
  out.push_back({"rtgps-oracle", mismatches == 0,
                 mismatches == 0 ? std::to_string(total) + " queries match"
                                 : std::to_string(mismatches) + "/" + std::to_string(total) +
                                       " differ; first " + firstMismatch});
  out.push_back({"rtgps-soundness", unsound == 0,
                 std::to_string(unsound) + " returned Gaussians outside their confidence sphere"});
  return out;
}

std::vector<CheckResult> dropBoundChecks(const SceneCheckpoint& ckpt, const ProximityIndex& index,
                                         const FeatureTable& features, const VerifyOptions& opt) {
  const GaussianSet& set = ckpt.bundle.set;
  std::vector<CheckResult> out;
  for (double eps : opt.epsilons) {
    PointSampler sampler(set, index.radii(), opt.seed + 23);
    int violated = 0, nonTrivial = 0;
    for (int t = 0; t < opt.dropTrials; ++t) {
      const Vec3 x = sampler.next();
      const NeighborResult cand = index.query(set, x, static_cast<int>(set.size()));
      std::vector<std::uint32_t> order = cand.indices;
      std::vector<double> dm(set.size());
      for (std::uint32_t i : order) dm[i] = squared_mahalanobis(x, set[i]);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return dm[a] > dm[b]; });
      std::vector<std::uint32_t> drop;
      DropBoundReport report = verify_drop_bound(x, set, features, cand.indices, drop, eps);
      for (std::uint32_t i : order) {
        drop.push_back(i);
        DropBoundReport next = verify_drop_bound(x, set, features, cand.indices, drop, eps);
        if (!next.holds) {
          drop.pop_back();
          break;
        }
        report = std::move(next);
      }
      if (!drop.empty()) ++nonTrivial;
      for (double d : report.actualDeviation) {
        if (!(d < eps)) {
          ++violated;
          break;
        }
      }
    }
    std::ostringstream name, detail;
    name << "drop-bound eps=" << eps;
    detail << opt.dropTrials << " trials, " << nonTrivial << " with a non-empty drop set, "
           << violated << " violations";
    out.push_back({name.str(), violated == 0, detail.str()});
  }
  return out;
}

std::vector<CheckResult> gradientChecks(const SceneCheckpoint& ckpt, const ProximityIndex& index,
                                        const VerifyOptions& opt) {
  const SceneBundle& b = ckpt.bundle;
  const GaussianSet& set = b.set;
  const HashGrid& grid = b.grid;
  const auto dim = static_cast<std::size_t>(grid.outputDim());
  std::mt19937_64 rng(opt.seed + 37);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = 1e-5;
  std::vector<CheckResult> out;

  {  // hash grid: parameters and query point
    int bad = 0, checks = 0;
    PointSampler sampler(set, index.radii(), opt.seed + 41);
    for (int t = 0; t < 4; ++t) {
      Vec3 x = sampler.next();
      for (int tries = 0; tries < 1000 && distance_to_cell_face(x, grid.config()) < 4 * h; ++tries) {
        x = sampler.next();
      }
      std::vector<double> up(dim);
      for (double& v : up) v = n01(rng);
      const GridBackward gb = grid.encode_backward(x, up);
      auto lossAt = [&](const HashGrid& g, const Vec3& p) {
        const std::vector<double> f = g.encode(p);
        double s = 0;
        for (std::size_t j = 0; j < dim; ++j) s += up[j] * f[j];
        return s;
      };
      for (int a = 0; a < 3; ++a) {
        Vec3 xp = x, xm = x;
        xp[a] += h;
        xm[a] -= h;
        ++checks;
        if (!close(gb.gradX[a], (lossAt(grid, xp) - lossAt(grid, xm)) / (2 * h))) ++bad;
      }
      HashGrid probe = grid;
      for (std::size_t s = 0; s < std::min<std::size_t>(4, gb.gradParams.size()); ++s) {
        const std::size_t idx = gb.gradParams[s * gb.gradParams.size() / 4].first;
        double analytic = 0;
        for (const auto& [i, v] : gb.gradParams) {
          if (i == idx) analytic += v;
        }
        const double keep = probe.params().tables[idx];
        probe.params().tables[idx] = keep + h;
        const double lp = lossAt(probe, x);
        probe.params().tables[idx] = keep - h;
        const double lm = lossAt(probe, x);
        probe.params().tables[idx] = keep;
        ++checks;
        if (!close(analytic, (lp - lm) / (2 * h))) ++bad;
      }
    }
    out.push_back({"gradient-fd hashgrid", bad == 0,
                   std::to_string(checks - bad) + "/" + std::to_string(checks) + " within 1e-3"});
  }

  {  // splash: neighbor means and logScales
    int bad = 0, checks = 0;
    SplashConfig cfg = b.render.splash;
    cfg.mode = FeatureMode::Live;
    PointSampler sampler(set, index.radii(), opt.seed + 43);
    for (int t = 0; t < 40 && checks < 12; ++t) {
      const Vec3 x = sampler.next();
      std::vector<double> up(dim);
      for (double& v : up) v = n01(rng);
      const SplashGradient sg = encode_point_backward(x, set, index, grid, cfg, up);
      if (sg.neighbors.empty()) continue;
      // Skips probes where the step would cross a cell face or change the
      // neighbor set; both make the loss non-differentiable there.
      auto lossWith = [&](const GaussianSet& s, bool& sameNeighbors) {
        const ProximityIndex idx = ProximityIndex::build(s, cfg.q, cfg.radiusMode);
        const SplashOutput o = encode_point(x, s, idx, grid, cfg);
        sameNeighbors = sameNeighbors && o.neighbors.indices == sg.neighbors;
        double v = 0;
        for (std::size_t j = 0; j < dim; ++j) v += up[j] * o.feature[j];
        return v;
      };
      const std::size_t n = static_cast<std::size_t>(u(rng) * sg.neighbors.size()) % sg.neighbors.size();
      const std::uint32_t gi = sg.neighbors[n];
      if (distance_to_cell_face(set[gi].mean, grid.config()) < 4 * h) continue;
      for (int which = 0; which < 2; ++which) {
        const int a = static_cast<int>(u(rng) * 3) % 3;
        bool same = true;
        auto shifted = [&](double d) {
          GaussianSet s = set;
          s.mutate([&](std::vector<Gaussian>& gs) {
            (which == 0 ? gs[gi].mean : gs[gi].logScale)[a] += d;
          });
          return lossWith(s, same);
        };
        const double fd = (shifted(h) - shifted(-h)) / (2 * h);
        if (!same) continue;
        const double analytic = which == 0 ? sg.dMean[n][a] : sg.dLogScale[n][a];
        ++checks;
        if (!close(analytic, fd)) ++bad;
      }
    }
    out.push_back({"gradient-fd splash", bad == 0,
                   std::to_string(checks - bad) + "/" + std::to_string(checks) + " within 1e-3"});
  }

  {  // field network: parameters and input feature
    int bad = 0, checks = 0;
    FieldNetwork net = b.net;
    const std::size_t in = static_cast<std::size_t>(net.arch().inputDim);
    for (int t = 0; t < 3; ++t) {
      std::vector<double> feat(in);
      for (double& v : feat) v = 0.5 * n01(rng);
      const Vec3 dir = Vec3(n01(rng), n01(rng), n01(rng)).normalized();
      const Vec3 cu(n01(rng), n01(rng), n01(rng));
      const double su = n01(rng);
      auto loss = [&](const FieldNetwork& nn, const std::vector<double>& f) {
        const FieldOutput o = nn.forward(f, dir);
        return cu.dot(o.color) + su * o.sigma;
      };
      FieldCache cache;
      net.forward(feat, dir, &cache);
      std::vector<double> dParams(net.params().size(), 0.0), dFeat(in);
      net.backward(cache, cu, su, dParams, dFeat);
      for (int s = 0; s < 6; ++s) {
        const std::size_t p = static_cast<std::size_t>(u(rng) * dParams.size()) % dParams.size();
        const double keep = net.params()[p];
        net.params()[p] = keep + h;
        const double lp = loss(net, feat);
        net.params()[p] = keep - h;
        const double lm = loss(net, feat);
        net.params()[p] = keep;
        ++checks;
        if (!close(dParams[p], (lp - lm) / (2 * h))) ++bad;
      }
      for (int s = 0; s < 3; ++s) {
        const std::size_t j = static_cast<std::size_t>(u(rng) * in) % in;
        std::vector<double> fp = feat, fm = feat;
        fp[j] += h;
        fm[j] -= h;
        ++checks;
        if (!close(dFeat[j], (loss(net, fp) - loss(net, fm)) / (2 * h))) ++bad;
      }
    }
    out.push_back({"gradient-fd network", bad == 0,
                   std::to_string(checks - bad) + "/" + std::to_string(checks) + " within 1e-3"});
  }
  return out;
}

}  // namespace

std::vector<CheckResult> verify_checkpoint(const SceneCheckpoint& ckpt, const VerifyOptions& opt) {
  static const std::vector<std::string> suites{"all", "rtgps", "drop-bound", "gradients"};
  if (std::find(suites.begin(), suites.end(), opt.suite) == suites.end()) {
    throw std::invalid_argument("unknown verify suite '" + opt.suite + "'");
  }
  std::vector<CheckResult> out;
  if (ckpt.bundle.set.empty()) {
    out.push_back({"scene-nonempty", false, "checkpoint has no Gaussians"});
    return out;
  }
  const ProximityIndex index = build_index(ckpt);
  auto want = [&](const char* s) { return opt.suite == "all" || opt.suite == s; };
  auto append = [&](std::vector<CheckResult> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  if (want("rtgps")) append(rtgpsChecks(ckpt, index, opt));
  if (want("drop-bound")) {
    const bool baked = std::all_of(ckpt.bundle.set.gaussians().begin(),
                                   ckpt.bundle.set.gaussians().end(),
                                   [](const Gaussian& g) { return g.baked; });
    const FeatureTable features = resolve_features(
        ckpt.bundle.set, ckpt.bundle.grid, baked ? FeatureMode::Baked : FeatureMode::Live);
    append(dropBoundChecks(ckpt, index, features, opt));
  }
  if (want("gradients")) append(gradientChecks(ckpt, index, opt));
  return out;
}

}  // namespace genie
