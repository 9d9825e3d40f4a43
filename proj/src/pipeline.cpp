#include "genie/pipeline.hpp"

#include <cmath>
#include <stdexcept>
#include <random>

namespace genie {

using nlohmann::json;

namespace {

Vec3 vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument(what + ": expected a 3-array");
  Vec3 v;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number()) throw std::invalid_argument(what + ": expected numbers");
    v[a] = j[a].get<double>();
  }
  return v;
}

double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw std::invalid_argument(what + ": expected a number");
  return j.get<double>();
}

}  // namespace

Camera camera_from_json(const json& req) {
  if (!req.contains("camera") || !req["camera"].is_object()) {
    throw std::invalid_argument("render request needs a camera object");
  }
  const json& c = req["camera"];
  if (!req.contains("width") || !req.contains("height") || !req["width"].is_number_integer() ||
      !req["height"].is_number_integer()) {
    throw std::invalid_argument("render request needs integer width and height");
  }
  const int width = req["width"].get<int>();
  const int height = req["height"].get<int>();
  if (width < 1 || height < 1 || width > 4096 || height > 4096) {
    throw std::invalid_argument("width and height must be in [1, 4096]");
  }
  double focal;
  if (c.contains("focal")) {
    focal = number(c["focal"], "camera.focal");
  } else {
    const double fov = c.contains("fovDeg") ? number(c["fovDeg"], "camera.fovDeg") : 40.0;
    if (!(fov > 0 && fov < 180)) throw std::invalid_argument("camera.fovDeg must be in (0, 180)");
    focal = focal_from_fov(fov * M_PI / 180.0, width);
  }
  const double near = c.contains("near") ? number(c["near"], "camera.near") : 0.1;
  const double far = c.contains("far") ? number(c["far"], "camera.far") : 100.0;
  Camera cam;
  if (c.contains("pose")) {
    const json& m = c["pose"];
    if (!m.is_array() || m.size() != 4) throw std::invalid_argument("camera.pose must have 4 rows");
    Mat4 pose;
    for (int r = 0; r < 4; ++r) {
      if (!m[r].is_array() || m[r].size() != 4) throw std::invalid_argument("camera.pose rows need 4 entries");
      for (int k = 0; k < 4; ++k) pose(r, k) = number(m[r][k], "camera.pose");
    }
    cam.pose = pose;
    cam.focal = focal;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    cam.far = far;
  } else if (c.contains("eye") && c.contains("target")) {
    const Vec3 up = c.contains("up") ? vec3(c["up"], "camera.up") : Vec3::UnitZ();
    try {
      cam = look_at_camera(vec3(c["eye"], "camera.eye"), vec3(c["target"], "camera.target"),
                           up, focal, width, height, near, far);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string("camera: ") + e.what());
    }
  } else {
    throw std::invalid_argument("camera needs pose, or eye and target");
  }
  try {
    validate_camera(cam);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("camera: ") + e.what());
  }
  return cam;
}

SceneBundle make_bundle(const RunConfig& config, GaussianSet initial) {
  config.hashgrid.validate();
  config.train.validate();
  config.render.splash.validate();
  FieldArch arch = config.field;
  arch.inputDim = config.hashgrid.outputDim();
  SceneBundle b{HashGrid(config.hashgrid, config.initSeed),
                FieldNetwork::init(arch, config.initSeed + 1), std::move(initial), config.render,
                config.train};
  return b;
}

GaussianSet gaussians_from_points(const std::vector<InitPoint>& points, const Vec3& logScale,
                                  std::size_t featureDim) {
  std::vector<Vec3> means, scales;
  means.reserve(points.size());
  scales.reserve(points.size());
  for (const InitPoint& p : points) {
    means.push_back(p.mean);
    scales.push_back(p.logScale.value_or(logScale));
  }
  return make_initial_gaussians(means, scales, featureDim);
}

std::vector<InitPoint> random_init_points(const HashGridConfig& grid, std::size_t n,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<InitPoint> out(n);
  for (InitPoint& p : out) {
    for (int a = 0; a < 3; ++a) {
      p.mean[a] = grid.boundsMin[a] + u(rng) * (grid.boundsMax[a] - grid.boundsMin[a]);
    }
  }
  return out;
}

RunConfig toy_run_config() {
  RunConfig c;
  c.hashgrid.tableSize = 1u << 15;
  c.train.steps = 5000;
  c.train.logInterval = 500;
  return c;
}

std::vector<InitPoint> toy_init_points(const ToyScene& scene, std::uint64_t seed) {
  const Vec3 logScale = Vec3::Constant(std::log(scene.spec.initStd * scene.spec.initStd));
  std::vector<InitPoint> out;
  for (const Vec3& m : toy_init_means(scene, seed)) out.push_back({m, logScale});
  return out;
}

}  // namespace genie
