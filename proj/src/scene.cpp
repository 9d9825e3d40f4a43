#include "genie/scene.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace genie {

std::vector<Violation> validate_scene(const GaussianSet& set, std::size_t featureDim) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Gaussian& g = set[i];
    if (!g.mean.allFinite()) {
      out.push_back({i, "mean", "non-finite component"});
    }
    if (!g.logScale.allFinite()) {
      out.push_back({i, "logScale", "non-finite component"});
    } else {
      const Vec3 var = g.variance();
      if (!var.allFinite() || (var.array() <= 0.0).any()) {
        out.push_back({i, "logScale", "exp(logScale) must be finite and positive"});
      }
    }
    if (!(g.confidence >= 0.0 && g.confidence <= 1.0)) {
      std::ostringstream msg;
      msg << "confidence " << g.confidence << " outside [0,1]";
      out.push_back({i, "confidence", msg.str()});
    }
    if (g.feature.size() != featureDim) {
      std::ostringstream msg;
      msg << "feature length " << g.feature.size() << " != " << featureDim;
      out.push_back({i, "feature", msg.str()});
    } else {
      for (double v : g.feature) {
        if (!std::isfinite(v)) {
          out.push_back({i, "feature", "non-finite entry"});
          break;
        }
      }
    }
  }
  return out;
}

void validate_camera(const Camera& camera) {
  if (!camera.pose.allFinite()) throw std::invalid_argument("camera pose is not finite");
  const Mat3 r = camera.rotation();
  const double err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-6) {
    std::ostringstream msg;
    msg << "camera rotation is not orthonormal (max deviation " << err << ")";
    throw std::invalid_argument(msg.str());
  }
  if (!(camera.focal > 0.0)) throw std::invalid_argument("camera focal must be positive");
  if (camera.width <= 0 || camera.height <= 0) {
    throw std::invalid_argument("camera width and height must be positive");
  }
  if (!(camera.near < camera.far)) throw std::invalid_argument("camera near must be < far");
}

Ray camera_ray(const Camera& camera, double col, double row) {
  const Vec3 local((col - 0.5 * camera.width) / camera.focal,
                   -(row - 0.5 * camera.height) / camera.focal, -1.0);
  Ray ray;
  ray.origin = camera.position();
  ray.direction = (camera.rotation() * local).normalized();
  ray.tNear = camera.near;
  ray.tFar = camera.far;
  return ray;
}

std::vector<Ray> generate_camera_rays(const Camera& camera) {
  validate_camera(camera);
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      rays.push_back(camera_ray(camera, col + 0.5, row + 0.5));
    }
  }
  return rays;
}

Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                      int width, int height, double near, double far) {
  const Vec3 back = (eye - target).normalized();
  Vec3 right = up.cross(back);
  if (right.norm() < 1e-12) right = Vec3::UnitX().cross(back);
  right.normalize();
  const Vec3 trueUp = back.cross(right);
  Camera cam;
  cam.pose.setIdentity();
  cam.pose.block<3, 1>(0, 0) = right;
  cam.pose.block<3, 1>(0, 1) = trueUp;
  cam.pose.block<3, 1>(0, 2) = back;
  cam.pose.block<3, 1>(0, 3) = eye;
  cam.focal = focal;
  cam.width = width;
  cam.height = height;
  cam.near = near;
  cam.far = far;
  return cam;
}

}  // namespace genie
