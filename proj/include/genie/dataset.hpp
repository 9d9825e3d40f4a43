#pragma once

#include "genie/render.hpp"
#include "genie/scene.hpp"
#include "genie/trainer.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace genie {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Rgba8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgba;
};

Rgba8Image read_png(const std::string& path);
void write_png(const std::string& path, const Rgba8Image& image);
std::vector<std::uint8_t> encode_png(const Rgba8Image& image);

/// Clamps to [0,1] and rounds to 8 bits; alpha comes from accumulated alpha.
Rgba8Image to_rgba8(const Image& image);

struct DatasetFrame {
  std::string imagePath;
  Mat4 pose = Mat4::Identity();
};

/// NeRF-synthetic transforms JSON: camera_angle_x plus per-frame file_path and
/// transform_matrix. Optional extensions: w, h, near, far, background and
/// init_points (a text file of initial Gaussian means).
struct DatasetManifest {
  std::vector<DatasetFrame> frames;
  double cameraAngleX = 0.0;
  double focal = 0.0;
  int width = 0;
  int height = 0;
  double near = 2.0;
  double far = 6.0;
  Vec3 background = Vec3::Ones();
  std::string initPoints;
};

struct LoadedDataset {
  DatasetManifest manifest;
  Dataset data;
};

double focal_from_fov(double fovX, int width);

/// Frames stay in manifest order; RGBA is composited over the background.
LoadedDataset load_dataset(const std::string& manifestPath);

/// Writes `<dir>/transforms.json` and one PNG per view; poses come from the
/// dataset cameras.
void write_dataset(const std::string& dir, const Dataset& data, double cameraAngleX,
                   const std::string& initPoints = "");

/// One Gaussian per line: "x y z" optionally followed by three logScale values.
struct InitPoint {
  Vec3 mean = Vec3::Zero();
  std::optional<Vec3> logScale;
};
std::vector<InitPoint> read_init_points(const std::string& path);
void write_init_points(const std::string& path, const std::vector<InitPoint>& points);

}  // namespace genie
