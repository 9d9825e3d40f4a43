#include "genie/trainer.hpp"

#include "genie/checkpoint.hpp"
#include "genie/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace genie {

namespace {

constexpr std::size_t kChunks = 8;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct AdamStep {
  double lr;
  double c1;  // 1 - beta1^t
  double c2;  // 1 - beta2^t

  void apply(double& p, double& m, double& v, double g) const {
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
    const double mHat = m / c1;
    const double vHat = v / c2;
    p -= lr * mHat / (std::sqrt(vHat) + kAdamEps);
  }
};

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (raysPerBatch < 1) throw std::invalid_argument("train: raysPerBatch must be >= 1");
  if (!(densify.tauAlpha > 0.0 && densify.tauAlpha < 1.0)) {
    throw std::invalid_argument("train: densify.tauAlpha must lie in (0, 1)");
  }
  if (!(densify.tauS > 0.0)) throw std::invalid_argument("train: densify.tauS must be > 0");
  if (densify.intervalSteps < 1) throw std::invalid_argument("train: densify.intervalSteps must be >= 1");
  if (densify.maxNewPerCycle < 0) throw std::invalid_argument("train: densify.maxNewPerCycle must be >= 0");
  if (densifyEnd() > steps) throw std::invalid_argument("train: densify.endStep exceeds steps");
  if (!(prune.tau > 0.0 && prune.tau < 1.0)) throw std::invalid_argument("train: prune.tau must lie in (0, 1)");
  if (prune.intervalSteps < 1) throw std::invalid_argument("train: prune.intervalSteps must be >= 1");
  if (rebuildIndexEverySteps < 1) {
    throw std::invalid_argument("train: rebuildIndexEverySteps must be >= 1");
  }
}

void OptimizerState::resize(std::size_t theta, std::size_t grid, std::size_t gaussians) {
  thetaM.assign(theta, 0.0);
  thetaV.assign(theta, 0.0);
  gridM.assign(grid, 0.0);
  gridV.assign(grid, 0.0);
  meanM.assign(gaussians, Vec3::Zero());
  meanV.assign(gaussians, Vec3::Zero());
  logScaleM.assign(gaussians, Vec3::Zero());
  logScaleV.assign(gaussians, Vec3::Zero());
}

double updated_confidence(double c, bool visited, const PruneConfig& config) {
  if (config.mode == ConfidenceMode::Additive) {
    return std::clamp(visited ? c + config.lambdaG : c - config.lambdaD, 0.0, 1.0);
  }
  return std::clamp(visited ? config.lambdaG * c : config.lambdaD * c, 0.0, 1.0);
}

std::vector<std::uint32_t> prune(GaussianSet& set, std::span<const std::uint8_t> visited,
                                 const PruneConfig& config) {
  if (visited.size() != set.size()) throw std::invalid_argument("prune: visited size mismatch");
  std::vector<std::uint32_t> kept;
  kept.reserve(set.size());
  set.mutate([&](std::vector<Gaussian>& gaussians) {
    std::vector<Gaussian> survivors;
    survivors.reserve(gaussians.size());
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
      Gaussian& g = gaussians[i];
      g.confidence = updated_confidence(g.confidence, visited[i] != 0, config);
      if (g.confidence < config.tau) continue;
      kept.push_back(static_cast<std::uint32_t>(i));
      survivors.push_back(std::move(g));
    }
    gaussians = std::move(survivors);
  });
  return kept;
}

std::size_t densify(GaussianSet& set, const HashGrid& grid, std::span<const RayCacheEntry> cache,
                    const DensifyConfig& config, double initLogScale) {
  std::vector<Gaussian> added;
  const double tau2 = config.tauS * config.tauS;
  const auto farFromAll = [&](const Vec3& p) {
    for (const Gaussian& g : set.gaussians()) {
      if ((g.mean - p).squaredNorm() <= tau2) return false;
    }
    for (const Gaussian& g : added) {
      if ((g.mean - p).squaredNorm() <= tau2) return false;
    }
    return true;
  };
  for (const RayCacheEntry& entry : cache) {
    if (added.size() >= static_cast<std::size_t>(config.maxNewPerCycle)) break;
    if (!(entry.alpha > config.tauAlpha)) continue;
    if (!farFromAll(entry.position)) continue;
    Gaussian g;
    g.mean = entry.position;
    g.logScale = Vec3::Constant(initLogScale);
    g.feature = grid.encode(entry.position);
    g.confidence = 1.0;
    added.push_back(std::move(g));
  }
  if (added.empty()) return 0;
  const std::size_t count = added.size();
  set.mutate([&](std::vector<Gaussian>& gaussians) {
    for (Gaussian& g : added) gaussians.push_back(std::move(g));
  });
  return count;
}

void compute_batch_gradients(std::span<const Ray> rays, std::span<const Vec3> targets,
                             const SceneBundle& bundle, const ProximityIndex& index,
                             const FeatureTable& features, const RenderConfig& config,
                             int threads, std::uint64_t raySeed, BatchGradients& out) {
  const std::size_t nRays = rays.size();
  const std::size_t nGauss = bundle.set.size();
  const std::size_t thetaSize = bundle.net.params().size();
  const std::size_t dim = features.dim;
  const FieldScene scene{&bundle.set, &index, &features, &bundle.net};

  out.rayCache.assign(nRays, RayCacheEntry{});
  out.chunkSinks.resize(kChunks);
  std::vector<double> chunkLoss(kChunks, 0.0);
  const double invCount = 1.0 / (3.0 * static_cast<double>(nRays));

  parallel_for(kChunks, threads, [&](std::size_t c) {
    GradientSink& sink = out.chunkSinks[c];
    sink.reset(thetaSize, nGauss, dim);
    thread_local RayTrace trace;
    const std::size_t begin = nRays * c / kChunks;
    const std::size_t end = nRays * (c + 1) / kChunks;
    double loss = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      std::mt19937_64 rng(mix_seed(raySeed, r));
      const CompositeResult res = trace_ray(rays[r], scene, config, rng, trace);
      const Vec3 residual = res.pixel - targets[r];
      loss += residual.squaredNorm();
      backprop_ray(trace, scene, config, 2.0 * invCount * residual, sink);

      RayCacheEntry& best = out.rayCache[r];
      for (const RaySample& s : trace.samples) {
        if (s.alpha > best.alpha) best = {s.position, s.alpha};
      }
    }
    chunkLoss[c] = loss;
  });

  out.loss = 0.0;
  for (double l : chunkLoss) out.loss += l;
  out.loss *= invCount;
  out.sink.reset(thetaSize, nGauss, dim);
  for (const GradientSink& s : out.chunkSinks) out.sink.add(s);
  if (out.grid.size() != bundle.grid.params().tables.size()) {
    out.grid.resize(bundle.grid.params().tables.size());
  }
  out.grid.clear();
  finish_feature_gradients(bundle.set, bundle.grid, out.sink, out.grid);
}

Trainer::Trainer(SceneBundle bundle, const Dataset& dataset)
    : bundle_(std::move(bundle)), dataset_(&dataset) {
  state_.optimizer.resize(bundle_.net.params().size(), bundle_.grid.params().tables.size(),
                          bundle_.set.size());
  state_.visited.assign(bundle_.set.size(), 0);
  state_.pendingMean.assign(bundle_.set.size(), Vec3::Zero());
  state_.pendingLogScale.assign(bundle_.set.size(), Vec3::Zero());
}

Trainer::Trainer(SceneBundle bundle, TrainingState state, const Dataset& dataset)
    : bundle_(std::move(bundle)), state_(std::move(state)), dataset_(&dataset) {
  const std::size_t n = bundle_.set.size();
  const auto& opt = state_.optimizer;
  if (opt.thetaM.size() != bundle_.net.params().size() ||
      opt.gridM.size() != bundle_.grid.params().tables.size() || opt.meanM.size() != n ||
      state_.visited.size() != n || state_.pendingMean.size() != n) {
    throw std::invalid_argument("trainer: resumed state does not match the scene");
  }
}

void Trainer::ensureIndex() {
  if (!index_ || index_->builtEpoch() != bundle_.set.epoch()) {
    const SplashConfig& sp = bundle_.render.splash;
    index_ = ProximityIndex::build(bundle_.set, sp.q, sp.radiusMode);
  }
}

const ProximityIndex& Trainer::index() {
  ensureIndex();
  return *index_;
}

void Trainer::applyAdam(const BatchGradients& grads, bool commitGeometry) {
  OptimizerState& opt = state_.optimizer;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  const LearningRates& lr = bundle_.train.lr;

  const AdamStep thetaStep{lr.theta, c1, c2};
  auto theta = bundle_.net.params();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    thetaStep.apply(theta[i], opt.thetaM[i], opt.thetaV[i], grads.sink.dTheta[i]);
  }

  const AdamStep gridStep{lr.grid, c1, c2};
  auto& tables = bundle_.grid.params().tables;
  for (std::size_t i : grads.grid.touched()) {
    gridStep.apply(tables[i], opt.gridM[i], opt.gridV[i], grads.grid[i]);
  }

  const bool means = bundle_.train.learnableMeans;
  const bool scales = bundle_.train.learnableScales;
  if (!means && !scales) return;
  const std::size_t n = bundle_.set.size();
  for (std::size_t i = 0; i < n; ++i) {
    state_.pendingMean[i] += grads.sink.dMean[i];
    state_.pendingLogScale[i] += grads.sink.dLogScale[i];
  }
  if (!commitGeometry) return;

  const AdamStep meanStep{lr.mean, c1, c2};
  const AdamStep scaleStep{lr.logScale, c1, c2};
  bundle_.set.mutate([&](std::vector<Gaussian>& gaussians) {
    for (std::size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        if (means) {
          meanStep.apply(gaussians[i].mean[a], opt.meanM[i][a], opt.meanV[i][a],
                         state_.pendingMean[i][a]);
        }
        if (scales) {
          scaleStep.apply(gaussians[i].logScale[a], opt.logScaleM[i][a], opt.logScaleV[i][a],
                          state_.pendingLogScale[i][a]);
        }
      }
    }
  });
  std::fill(state_.pendingMean.begin(), state_.pendingMean.end(), Vec3::Zero());
  std::fill(state_.pendingLogScale.begin(), state_.pendingLogScale.end(), Vec3::Zero());
}

void Trainer::compactAfterPrune(const std::vector<std::uint32_t>& kept) {
  OptimizerState& opt = state_.optimizer;
  const auto compact = [&](auto& v) {
    std::remove_reference_t<decltype(v)> out;
    out.reserve(kept.size());
    for (std::uint32_t i : kept) out.push_back(v[i]);
    v = std::move(out);
  };
  compact(opt.meanM);
  compact(opt.meanV);
  compact(opt.logScaleM);
  compact(opt.logScaleV);
  compact(state_.pendingMean);
  compact(state_.pendingLogScale);
  compact(state_.visited);
}

void Trainer::growAfterDensify(std::size_t added) {
  OptimizerState& opt = state_.optimizer;
  const std::size_t n = bundle_.set.size();
  (void)added;
  opt.meanM.resize(n, Vec3::Zero());
  opt.meanV.resize(n, Vec3::Zero());
  opt.logScaleM.resize(n, Vec3::Zero());
  opt.logScaleV.resize(n, Vec3::Zero());
  state_.pendingMean.resize(n, Vec3::Zero());
  state_.pendingLogScale.resize(n, Vec3::Zero());
  state_.visited.resize(n, 0);
}

StepStats Trainer::step() {
  const TrainConfig& cfg = bundle_.train;
  const std::int64_t stepIndex = state_.step;
  if (bundle_.set.empty()) throw TrainingError("trainer: Gaussian set is empty");
  ensureIndex();

  const FeatureTable features = live_features(bundle_.set, bundle_.grid);

  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(stepIndex), 0xBA7C));
  std::uniform_int_distribution<std::size_t> pickCamera(0, dataset_->cameras.size() - 1);
  const std::size_t batch = static_cast<std::size_t>(cfg.raysPerBatch);
  rays_.resize(batch);
  targets_.resize(batch);
  std::vector<std::pair<std::size_t, std::size_t>> picks(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t cam = pickCamera(rng);
    std::uniform_int_distribution<std::size_t> pickPixel(0, dataset_->pixelCount(cam) - 1);
    const std::size_t pixel = pickPixel(rng);
    const Camera& camera = dataset_->cameras[cam];
    const int col = static_cast<int>(pixel % static_cast<std::size_t>(camera.width));
    const int row = static_cast<int>(pixel / static_cast<std::size_t>(camera.width));
    rays_[r] = camera_ray(camera, col + 0.5, row + 0.5);
    const double* px = dataset_->images[cam].data() + pixel * 3;
    targets_[r] = Vec3(px[0], px[1], px[2]);
    picks[r] = {cam, pixel};
  }

  RenderConfig rc = bundle_.render;
  rc.stratified = true;
  rc.splash.mode = FeatureMode::Live;
  compute_batch_gradients(rays_, targets_, bundle_, *index_, features, rc, cfg.threads,
                          mix_seed(cfg.seed, static_cast<std::uint64_t>(stepIndex), 0x5A11),
                          grads_);

  if (!std::isfinite(grads_.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << stepIndex << "; batch (camera, pixel):";
    for (std::size_t r = 0; r < std::min<std::size_t>(batch, 16); ++r) {
      msg << " (" << picks[r].first << "," << picks[r].second << ")";
    }
    if (batch > 16) msg << " ...";
    throw TrainingError(msg.str());
  }

  for (std::size_t i = 0; i < bundle_.set.size(); ++i) {
    if (grads_.sink.touched[i]) state_.visited[i] = 1;
  }

  const bool commit = (stepIndex + 1) % cfg.rebuildIndexEverySteps == 0;
  applyAdam(grads_, commit);

  StepStats stats;
  stats.step = stepIndex;
  stats.loss = grads_.loss;
  stats.psnr = psnr_from_mse(grads_.loss);

  const DensifyConfig& dc = cfg.densify;
  if (dc.enabled && stepIndex >= dc.startStep && stepIndex <= cfg.densifyEnd() &&
      (stepIndex - dc.startStep) % dc.intervalSteps == 0) {
    stats.added = densify(bundle_.set, bundle_.grid, grads_.rayCache, dc, cfg.initLogScale);
    if (stats.added > 0) growAfterDensify(stats.added);
  }
  if (cfg.prune.enabled && (stepIndex + 1) % cfg.prune.intervalSteps == 0) {
    const std::size_t before = bundle_.set.size();
    const std::vector<std::uint32_t> kept = prune(bundle_.set, state_.visited, cfg.prune);
    stats.removed = before - kept.size();
    compactAfterPrune(kept);
    std::fill(state_.visited.begin(), state_.visited.end(), 0);
  }
  stats.gaussians = bundle_.set.size();
  state_.step += 1;
  return stats;
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double dataset_psnr(const SceneBundle& bundle, const Dataset& dataset, int threads) {
  if (dataset.cameras.empty()) return 0.0;
  std::optional<ProximityIndex> index;
  if (!bundle.set.empty()) {
    index = ProximityIndex::build(bundle.set, bundle.render.splash.q, bundle.render.splash.radiusMode);
  }
  RenderConfig rc = bundle.render;
  rc.stratified = false;
  rc.threads = threads;
  double total = 0.0;
  for (std::size_t c = 0; c < dataset.cameras.size(); ++c) {
    const Image img = render_image(dataset.cameras[c], bundle.set, index ? &*index : nullptr,
                                   bundle.grid, bundle.net, rc);
    double se = 0.0;
    const std::size_t pixels = dataset.pixelCount(c);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (int ch = 0; ch < 3; ++ch) {
        const double d = img.rgba[p * 4 + static_cast<std::size_t>(ch)] -
                         dataset.images[c][p * 3 + static_cast<std::size_t>(ch)];
        se += d * d;
      }
    }
    total += psnr_from_mse(se / (3.0 * static_cast<double>(pixels)));
  }
  return total / static_cast<double>(dataset.cameras.size());
}

SceneBundle run_training(SceneBundle initial, const Dataset& dataset, const TrainOptions& options,
                         std::optional<TrainingState> resume) {
  if (dataset.cameras.empty()) throw std::invalid_argument("run_training: dataset is empty");
  initial.train.validate();
  const TrainConfig cfg = initial.train;

  std::optional<Trainer> trainer;
  if (resume) {
    trainer.emplace(std::move(initial), std::move(*resume), dataset);
  } else {
    trainer.emplace(std::move(initial), dataset);
  }

  while (trainer->currentStep() < cfg.steps) {
    const StepStats stats = trainer->step();
    const std::int64_t done = trainer->currentStep();
    if (options.log != nullptr && cfg.logInterval > 0 &&
        (done % cfg.logInterval == 0 || done == cfg.steps)) {
      *options.log << "step=" << done << " loss=" << stats.loss
                   << " gaussians=" << stats.gaussians << " psnr=" << stats.psnr << '\n';
    }
    if (!options.checkpointPath.empty() && cfg.checkpointInterval > 0 &&
        done % cfg.checkpointInterval == 0 && done < cfg.steps) {
      save_checkpoint(trainer->bundle(), &trainer->state(), options.checkpointPath);
    }
    if (options.onStep && !options.onStep(stats)) return trainer->bundle();
  }

  SceneBundle out = std::move(trainer->bundle());
  bake_features(out.set, out.grid);
  if (!options.checkpointPath.empty()) save_checkpoint(out, nullptr, options.checkpointPath);
  return out;
}

}  // namespace genie
