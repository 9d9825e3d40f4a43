#pragma once

#include "genie/config.hpp"
#include "genie/dataset.hpp"
#include "genie/toy.hpp"
#include "genie/trainer.hpp"

#include <cstdint>
#include <vector>

namespace genie {

/// Fresh grid and network from the run config around `initial`. The network
/// input width always follows the grid output width.
SceneBundle make_bundle(const RunConfig& config, GaussianSet initial);

/// Gaussians from init points; points without a logScale get `logScale`.
GaussianSet gaussians_from_points(const std::vector<InitPoint>& points, const Vec3& logScale,
                                  std::size_t featureDim);

/// Uniform points inside the grid bounds.
std::vector<InitPoint> random_init_points(const HashGridConfig& grid, std::size_t n,
                                          std::uint64_t seed);

/// Camera from {"camera": {...}, "width": w, "height": h}. The camera holds
/// either "pose" (4x4 camera-to-world rows) or "eye"/"target"/"up", plus
/// "focal" in pixels or "fovDeg" (horizontal, default 40), "near", "far".
/// Throws std::invalid_argument.
Camera camera_from_json(const nlohmann::json& request);

/// Configuration used for the procedural toy scene: a 2^15-row table and
/// 5000 steps, otherwise the defaults.
RunConfig toy_run_config();

/// Toy init points carrying the toy spec's initial standard deviation.
std::vector<InitPoint> toy_init_points(const ToyScene& scene, std::uint64_t seed);

}  // namespace genie
