#pragma once

#include "genie/field.hpp"
#include "genie/hashgrid.hpp"
#include "genie/render.hpp"
#include "genie/rtgps.hpp"
#include "genie/scene.hpp"
#include "genie/splash.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace genie {

enum class ConfidenceMode { Additive, Multiplicative };

struct DensifyConfig {
  bool enabled = true;
  int intervalSteps = 500;
  int startStep = 500;
  /// Negative means "half of TrainConfig::steps".
  int endStep = -1;
  int maxNewPerCycle = 10000;
  double tauAlpha = 0.5;
  double tauS = 0.001;
};

struct PruneConfig {
  bool enabled = true;
  int intervalSteps = 1000;
  double lambdaD = 0.001;
  double lambdaG = 0.01;
  double tau = 0.1;
  ConfidenceMode mode = ConfidenceMode::Additive;
};

struct LearningRates {
  double theta = 1e-3;
  double grid = 1e-2;
  double mean = 1e-4;
  double logScale = 1e-3;
};

struct TrainConfig {
  int steps = 20000;
  int raysPerBatch = 256;
  LearningRates lr;
  DensifyConfig densify;
  PruneConfig prune;
  /// Geometry (mean / logScale) updates are committed, and the proximity
  /// index rebuilt, once every this many steps.
  int rebuildIndexEverySteps = 1;
  std::uint64_t seed = 0;
  bool learnableMeans = true;
  bool learnableScales = true;
  /// logScale given to Gaussians inserted by densification.
  double initLogScale = std::log(1e-4);
  int threads = 1;
  int logInterval = 100;
  /// 0 disables periodic checkpoints.
  int checkpointInterval = 0;

  int densifyEnd() const { return densify.endStep < 0 ? steps / 2 : densify.endStep; }
  void validate() const;
};

/// Adam moments per parameter group. The grid group is updated lazily: only
/// rows with a gradient this step move, using the global step for bias
/// correction.
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<double> thetaM, thetaV;
  std::vector<double> gridM, gridV;
  std::vector<Vec3> meanM, meanV;
  std::vector<Vec3> logScaleM, logScaleV;

  void resize(std::size_t theta, std::size_t grid, std::size_t gaussians);
};

/// Everything that defines a scene: the unit of persistence.
struct SceneBundle {
  HashGrid grid;
  FieldNetwork net;
  GaussianSet set;
  RenderConfig render;
  TrainConfig train;
};

/// Mutable optimizer-side state carried between steps and through resumes.
struct TrainingState {
  std::int64_t step = 0;
  OptimizerState optimizer;
  std::vector<std::uint8_t> visited;
  /// Geometry gradients accumulated between index rebuilds.
  std::vector<Vec3> pendingMean;
  std::vector<Vec3> pendingLogScale;
};

struct Dataset {
  std::vector<Camera> cameras;
  /// Per camera: width*height RGB triples, already composited over background.
  std::vector<std::vector<double>> images;
  Vec3 background = Vec3::Ones();

  std::size_t pixelCount(std::size_t camera) const {
    return static_cast<std::size_t>(cameras[camera].width) * cameras[camera].height;
  }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Max-opacity sample along one training ray, kept for densification.
struct RayCacheEntry {
  Vec3 position = Vec3::Zero();
  double alpha = 0.0;
};

/// Inserts a Gaussian at each cached max-alpha point with alpha > tauAlpha
/// lying more than tauS from every existing (or newly inserted) mean, up to
/// maxNewPerCycle. Features are sampled from the grid. Returns the count.
std::size_t densify(GaussianSet& set, const HashGrid& grid, std::span<const RayCacheEntry> cache,
                    const DensifyConfig& config, double initLogScale);

/// Confidence update followed by removal of every Gaussian below tau.
/// `visited[i]` marks Gaussians returned as neighbors since the last prune.
/// Returns the surviving original indices in order. One epoch bump.
std::vector<std::uint32_t> prune(GaussianSet& set, std::span<const std::uint8_t> visited,
                                 const PruneConfig& config);

double updated_confidence(double c, bool visited, const PruneConfig& config);

struct StepStats {
  std::int64_t step = 0;
  double loss = 0.0;
  double psnr = 0.0;
  std::size_t gaussians = 0;
  std::size_t added = 0;
  std::size_t removed = 0;
};

struct BatchGradients {
  double loss = 0.0;
  GradientSink sink;
  GridGradientBuffer grid;
  std::vector<RayCacheEntry> rayCache;
  /// Reused per-chunk accumulators.
  std::vector<GradientSink> chunkSinks;
};

/// MSE over a ray batch plus exact gradients for every trainable group.
/// Rays are split into a fixed number of chunks reduced in chunk order, so
/// the result does not depend on `threads`.
void compute_batch_gradients(std::span<const Ray> rays, std::span<const Vec3> targets,
                             const SceneBundle& bundle, const ProximityIndex& index,
                             const FeatureTable& features, const RenderConfig& config,
                             int threads, std::uint64_t raySeed, BatchGradients& out);

class Trainer {
 public:
  Trainer(SceneBundle bundle, const Dataset& dataset);
  Trainer(SceneBundle bundle, TrainingState state, const Dataset& dataset);

  StepStats step();
  const SceneBundle& bundle() const { return bundle_; }
  SceneBundle& bundle() { return bundle_; }
  const TrainingState& state() const { return state_; }
  std::int64_t currentStep() const { return state_.step; }
  const ProximityIndex& index();

 private:
  void ensureIndex();
  void applyAdam(const BatchGradients& grads, bool commitGeometry);
  void compactAfterPrune(const std::vector<std::uint32_t>& kept);
  void growAfterDensify(std::size_t added);

  SceneBundle bundle_;
  TrainingState state_;
  const Dataset* dataset_;
  std::optional<ProximityIndex> index_;
  BatchGradients grads_;
  std::vector<Ray> rays_;
  std::vector<Vec3> targets_;
};

struct TrainOptions {
  std::string checkpointPath;
  std::ostream* log = nullptr;
  /// Called after every step; returning false stops the run early (used to
  /// simulate interruption).
  std::function<bool(const StepStats&)> onStep;
};

/// Full schedule from the bundle's current state to train.steps, then bakes
/// features. Writes checkpoints through scene-io when a path is given.
SceneBundle run_training(SceneBundle initial, const Dataset& dataset, const TrainOptions& options,
                         std::optional<TrainingState> resume = std::nullopt);

double psnr_from_mse(double mse);

/// Mean PSNR of full renders against every dataset view.
double dataset_psnr(const SceneBundle& bundle, const Dataset& dataset, int threads);

}  // namespace genie
