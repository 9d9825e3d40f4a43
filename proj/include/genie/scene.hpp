#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace genie {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Editable primitive. Covariance is diag(exp(logScale)) with identity
/// rotation; `logScale` holds log-variances, not log standard deviations.
struct Gaussian {
  Vec3 mean = Vec3::Zero();
  Vec3 logScale = Vec3::Zero();
  std::vector<double> feature;
  double confidence = 1.0;
  bool baked = false;

  Vec3 variance() const { return logScale.array().exp().matrix(); }
  Vec3 inverseVariance() const { return (-logScale.array()).exp().matrix(); }
};

/// Ordered Gaussians plus an edit epoch. Every mutation batch goes through
/// `mutate` (or `replaceAll`) so the epoch moves exactly once per batch.
class GaussianSet {
 public:
  GaussianSet() = default;
  explicit GaussianSet(std::vector<Gaussian> gaussians, std::uint64_t epoch = 0)
      : gaussians_(std::move(gaussians)), epoch_(epoch) {}

  std::size_t size() const { return gaussians_.size(); }
  bool empty() const { return gaussians_.empty(); }
  std::uint64_t epoch() const { return epoch_; }

  const Gaussian& operator[](std::size_t i) const { return gaussians_[i]; }
  const std::vector<Gaussian>& gaussians() const { return gaussians_; }

  template <class Fn>
  void mutate(Fn&& fn) {
    fn(gaussians_);
    ++epoch_;
  }

  void replaceAll(std::vector<Gaussian> gaussians) {
    gaussians_ = std::move(gaussians);
    ++epoch_;
  }

  /// Restores a persisted epoch; only scene-io uses this.
  void restoreEpoch(std::uint64_t epoch) { epoch_ = epoch; }

 private:
  std::vector<Gaussian> gaussians_;
  std::uint64_t epoch_ = 0;
};

/// Pinhole camera, camera-to-world pose in the OpenGL convention used by
/// NeRF-synthetic data: the camera looks down -z with +y up.
struct Camera {
  Mat4 pose = Mat4::Identity();
  double focal = 1.0;
  int width = 1;
  int height = 1;
  double near = 0.0;
  double far = 1.0;

  Vec3 position() const { return pose.block<3, 1>(0, 3); }
  Mat3 rotation() const { return pose.block<3, 3>(0, 0); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double tNear = 0.0;
  double tFar = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

struct Violation {
  std::size_t index = 0;
  std::string field;
  std::string message;
};

std::vector<Violation> validate_scene(const GaussianSet& set, std::size_t featureDim);

/// Throws std::invalid_argument describing the first broken camera invariant.
void validate_camera(const Camera& camera);

/// One ray per pixel through the pixel center, row-major from the top row.
std::vector<Ray> generate_camera_rays(const Camera& camera);

/// Ray through pixel (col, row) of an already validated camera.
Ray camera_ray(const Camera& camera, double col, double row);

/// Camera at `eye` looking at `target`, built with the same axis convention
/// as `generate_camera_rays`.
Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                      int width, int height, double near, double far);

}  // namespace genie
