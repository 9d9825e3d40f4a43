#include "support/fixtures.hpp"

#include "genie/scene.hpp"

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace genie;

namespace {

Gaussian valid(std::size_t F) {
  Gaussian g;
  g.logScale = Vec3::Constant(std::log(1e-4));
  g.feature.assign(F, 0.25);
  g.confidence = 0.5;
  return g;
}

}  // namespace

TEST(ValidateScene, ValidGaussianHasNoViolations) {
  GaussianSet set({valid(32)});
  EXPECT_TRUE(validate_scene(set, 32).empty());
}

TEST(ValidateScene, ConfidenceOutOfRangeNamesField) {
  Gaussian g = valid(8);
  g.confidence = 1.5;
  const auto v = validate_scene(GaussianSet({g}), 8);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].index, 0u);
  EXPECT_EQ(v[0].field, "confidence");
}

TEST(ValidateScene, NonFiniteMean) {
  Gaussian g = valid(8);
  g.mean[1] = std::numeric_limits<double>::quiet_NaN();
  const auto v = validate_scene(GaussianSet({valid(8), g}), 8);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].index, 1u);
  EXPECT_EQ(v[0].field, "mean");
}

TEST(ValidateScene, FeatureLengthAndVariance) {
  Gaussian a = valid(4);
  Gaussian b = valid(8);
  b.logScale[0] = 1000;  // exp overflows
  const auto v = validate_scene(GaussianSet({a, b}), 8);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].field, "feature");
  EXPECT_EQ(v[1].field, "logScale");
}

TEST(GaussianSet, EpochMovesOncePerBatch) {
  GaussianSet set({valid(2), valid(2)});
  EXPECT_EQ(set.epoch(), 0u);
  set.mutate([](std::vector<Gaussian>& gs) {
    gs[0].mean.x() += 1;
    gs[1].mean.x() += 1;
  });
  EXPECT_EQ(set.epoch(), 1u);
  set.replaceAll({});
  EXPECT_EQ(set.epoch(), 2u);
}

TEST(CameraRays, TwoByTwoIdentityPose) {
  Camera cam;
  cam.width = 2;
  cam.height = 2;
  cam.focal = 1.0;
  cam.near = 0.1;
  cam.far = 10;
  const auto rays = generate_camera_rays(cam);
  ASSERT_EQ(rays.size(), 4u);
  const double n = std::sqrt(0.25 + 0.25 + 1.0);
  // top row first, camera looks down -z with +y up
  const Vec3 want[4] = {{-0.5, 0.5, -1}, {0.5, 0.5, -1}, {-0.5, -0.5, -1}, {0.5, -0.5, -1}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR((rays[i].direction - want[i] / n).norm(), 0.0, 1e-12) << i;
    EXPECT_EQ(rays[i].origin, Vec3::Zero());
    EXPECT_EQ(rays[i].tNear, 0.1);
    EXPECT_EQ(rays[i].tFar, 10.0);
  }
}

TEST(CameraRays, OriginsFollowPose) {
  Camera cam;
  cam.width = 3;
  cam.height = 2;
  cam.far = 2;
  cam.pose.block<3, 1>(0, 3) = Vec3(0, 0, 5);
  for (const Ray& r : generate_camera_rays(cam)) EXPECT_EQ(r.origin, Vec3(0, 0, 5));
}

TEST(CameraRays, UnitDirectionsAndDeterminism) {
  const Camera cam = look_at_camera({3, 1, 2}, Vec3::Zero(), Vec3::UnitZ(), 55, 64, 64, 1, 6);
  const auto a = generate_camera_rays(cam);
  const auto b = generate_camera_rays(cam);
  ASSERT_EQ(a.size(), 4096u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].direction.norm(), 1.0, 1e-9);
    ASSERT_EQ(a[i].direction, b[i].direction);
  }
  // The central ray looks at the target.
  const Ray c = camera_ray(cam, 32, 32);
  EXPECT_NEAR((c.direction - (-Vec3(3, 1, 2)).normalized()).norm(), 0.0, 1e-12);
}

TEST(CameraRays, InvalidCamerasRejected) {
  Camera cam;
  cam.far = 1;
  cam.focal = 0;
  EXPECT_THROW(generate_camera_rays(cam), std::invalid_argument);
  cam.focal = 1;
  cam.near = 2;
  EXPECT_THROW(generate_camera_rays(cam), std::invalid_argument);
  cam.near = 0;
  cam.pose(0, 0) = 2;  // not orthonormal
  EXPECT_THROW(generate_camera_rays(cam), std::invalid_argument);
  cam.pose(0, 0) = 1;
  cam.width = 0;
  EXPECT_THROW(generate_camera_rays(cam), std::invalid_argument);
}

// A rigid motion applied to means and camera preserves sample-to-mean distances.
TEST(CameraRays, RigidMotionPreservesGeometry) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  const Camera cam = look_at_camera({2, -2, 1}, Vec3::Zero(), Vec3::UnitZ(), 20, 8, 8, 0.5, 5);
  std::vector<Vec3> means(10);
  for (Vec3& m : means) m = Vec3(u(rng), u(rng), u(rng));
  Eigen::Affine3d T = Eigen::Translation3d(0.3, -1.2, 2.0) *
                      Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized());
  Camera moved = cam;
  moved.pose = T.matrix() * cam.pose;
  const auto a = generate_camera_rays(cam);
  const auto b = generate_camera_rays(moved);
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (double t : {0.7, 1.9, 4.2}) {
      for (const Vec3& m : means) {
        EXPECT_NEAR((a[r].at(t) - m).norm(), (b[r].at(t) - T * m).norm(), 1e-9);
      }
    }
  }
}
