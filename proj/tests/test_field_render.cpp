#include "support/fixtures.hpp"

#include "genie/field.hpp"
#include "genie/render.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

using namespace genie;
using genie::testing::same_bits;

namespace {

FieldArch smallArch() {
  FieldArch a;
  a.inputDim = 6;
  a.hidden = 8;
  a.dirFrequencies = 2;
  return a;
}

FieldNetwork jittered(const FieldArch& arch, std::uint64_t seed) {
  FieldNetwork net = FieldNetwork::init(arch, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 0.3);
  for (double& p : net.params()) p += n(rng);
  return net;
}

// Offset of the density bias: W1, b1, W2, b2, Ws come first.
std::size_t sigmaBiasOffset(const FieldArch& a) {
  const std::size_t h = static_cast<std::size_t>(a.hidden);
  return h * static_cast<std::size_t>(a.inputDim) + h + h * h + h + h;
}

RaySample sample(double alpha, const Vec3& color) {
  RaySample s;
  s.alpha = alpha;
  s.color = color;
  s.empty = false;
  return s;
}

}  // namespace

TEST(FieldForward, ZeroNetworkGivesActivationsAtZero) {
  const FieldNetwork net(smallArch());
  for (double p : net.params()) ASSERT_EQ(p, 0.0);
  const std::vector<double> f(6, 0.7);
  const FieldOutput out = field_forward(f, Vec3(0, 0, 1), net);
  EXPECT_DOUBLE_EQ(out.sigma, std::log(2.0));
  EXPECT_EQ(out.color, Vec3::Constant(0.5));
}

TEST(FieldForward, EmptySpaceForcesZeroDensity) {
  const FieldNetwork net = jittered(smallArch(), 1);
  const std::vector<double> f(6, 0.3);
  EXPECT_GT(field_forward(f, Vec3(1, 0, 0), net).sigma, 0.0);
  EXPECT_EQ(field_forward(f, Vec3(1, 0, 0), net, true).sigma, 0.0);
}

TEST(FieldForward, DimensionMismatchRejected) {
  const FieldNetwork net(smallArch());
  const std::vector<double> f(5, 0.0);
  EXPECT_THROW(net.forward(f, Vec3(0, 0, 1)), std::invalid_argument);
  EXPECT_THROW(FieldNetwork(smallArch(), std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST(FieldForward, DirectionEncodingLayout) {
  std::vector<double> enc(3 + 6 * 2);
  const Vec3 d = Vec3(1, 2, -2).normalized();
  encode_direction(d, 2, enc);
  for (int a = 0; a < 3; ++a) EXPECT_EQ(enc[a], d[a]);
  // (sin, cos) interleaved per axis, doubling frequency
  for (int j = 0; j < 2; ++j) {
    for (int a = 0; a < 3; ++a) {
      const double arg = std::ldexp(M_PI, j) * d[a];
      const double s = enc[3 + 6 * j + 2 * a], c = enc[3 + 6 * j + 2 * a + 1];
      EXPECT_NEAR(s * s + c * c, 1.0, 1e-14);
      EXPECT_NEAR(std::atan2(s, c), std::remainder(arg, 2 * M_PI), 1e-12);
    }
  }
}

TEST(FieldBackward, FiniteDifferences) {
  const FieldArch arch = smallArch();
  const FieldNetwork net = jittered(arch, 2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0, 1);
  std::vector<double> f(6);
  for (double& v : f) v = n01(rng);
  const Vec3 dir = Vec3(0.3, -0.4, 0.8).normalized();
  const Vec3 dColor(n01(rng), n01(rng), n01(rng));
  const double dSigma = n01(rng);
  auto loss = [&](const FieldNetwork& m, const std::vector<double>& in) {
    const FieldOutput o = m.forward(in, dir);
    return dColor.dot(o.color) + dSigma * o.sigma;
  };
  FieldCache cache;
  net.forward(f, dir, &cache);
  std::vector<double> dTheta(net.params().size(), 0.0), dFeat(6);
  net.backward(cache, dColor, dSigma, dTheta, dFeat);
  const double h = 1e-6;
  for (std::size_t i = 0; i < dTheta.size(); ++i) {
    FieldNetwork p = net, m = net;
    p.params()[i] += h;
    m.params()[i] -= h;
    const double fd = (loss(p, f) - loss(m, f)) / (2 * h);
    EXPECT_NEAR(dTheta[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "theta " << i;
  }
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto p = f, m = f;
    p[i] += h;
    m[i] -= h;
    const double fd = (loss(net, p) - loss(net, m)) / (2 * h);
    EXPECT_NEAR(dFeat[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "feature " << i;
  }
}

TEST(FieldBackward, ZeroUpstreamGivesZeroGradients) {
  const FieldNetwork net = jittered(smallArch(), 4);
  FieldCache cache;
  net.forward(std::vector<double>(6, 0.2), Vec3(0, 1, 0), &cache);
  std::vector<double> dTheta(net.params().size(), 0.0), dFeat(6, 1.0);
  net.backward(cache, Vec3::Zero(), 0.0, dTheta, dFeat);
  for (double v : dTheta) EXPECT_EQ(v, 0.0);
  for (double v : dFeat) EXPECT_EQ(v, 0.0);
}

TEST(FieldBatch, MatchesPerSample) {
  const FieldNetwork net = jittered(smallArch(), 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01(0, 1);
  const Vec3 dir = Vec3(-1, 0.5, 0.2).normalized();
  FieldBatch batch;
  batch.input.resize(6, 9);
  for (int c = 0; c < 9; ++c)
    for (int r = 0; r < 6; ++r) batch.input(r, c) = n01(rng);
  net.forward_batch(dir, batch);
  Eigen::Matrix3Xd dC(3, 9);
  Eigen::RowVectorXd dS(9);
  for (int c = 0; c < 9; ++c) {
    dC.col(c) = Vec3(n01(rng), n01(rng), n01(rng));
    dS[c] = n01(rng);
  }
  std::vector<double> dThetaBatch(net.params().size(), 0.0), dThetaSingle(net.params().size(), 0.0);
  Eigen::MatrixXd dIn;
  net.backward_batch(batch, dC, dS, dThetaBatch, dIn);
  for (int c = 0; c < 9; ++c) {
    std::vector<double> f(6);
    for (int r = 0; r < 6; ++r) f[r] = batch.input(r, c);
    FieldCache cache;
    const FieldOutput o = net.forward(f, dir, &cache);
    EXPECT_NEAR(o.sigma, batch.sigma[c], 1e-12);
    EXPECT_NEAR((o.color - batch.color.col(c)).norm(), 0.0, 1e-12);
    std::vector<double> dFeat(6);
    net.backward(cache, dC.col(c), dS[c], dThetaSingle, dFeat);
    for (int r = 0; r < 6; ++r) EXPECT_NEAR(dFeat[r], dIn(r, c), 1e-12);
  }
  for (std::size_t i = 0; i < dThetaBatch.size(); ++i) EXPECT_NEAR(dThetaBatch[i], dThetaSingle[i], 1e-11);
}

TEST(SampleRay, TwoUniformSamples) {
  Ray r;
  r.tNear = 0;
  r.tFar = 1;
  std::mt19937_64 rng(0);
  const auto s = sample_ray(r, 2, false, rng);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].t, 0.0);
  EXPECT_EQ(s[1].t, 0.5);
  EXPECT_EQ(s[0].delta, 0.5);
  EXPECT_EQ(s[1].delta, 0.5);
  EXPECT_THROW(sample_ray(r, 1, false, rng), std::invalid_argument);
}

TEST(SampleRay, StratifiedReproducibleIncreasingAndCovering) {
  Ray r;
  r.tNear = 1.25;
  r.tFar = 4.0;
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    std::mt19937_64 a(seed), b(seed);
    const auto x = sample_ray(r, 37, true, a);
    const auto y = sample_ray(r, 37, true, b);
    double sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_TRUE(same_bits(x[i].t, y[i].t));
      ASSERT_TRUE(same_bits(x[i].delta, y[i].delta));
      EXPECT_GE(x[i].t, r.tNear);
      EXPECT_LE(x[i].t, r.tFar);
      if (i > 0) EXPECT_GT(x[i].t, x[i - 1].t);
      EXPECT_GT(x[i].delta, 0.0);
      sum += x[i].delta;
    }
    EXPECT_NEAR(sum, r.tFar - r.tNear, 1e-12);
  }
}

TEST(Composite, Basics) {
  const Vec3 bg(0.2, 0.4, 0.6);
  std::vector<RaySample> none(5);
  const CompositeResult empty = composite(none, bg);
  EXPECT_EQ(empty.pixel, bg);
  EXPECT_EQ(empty.accAlpha, 0.0);
  std::vector<RaySample> opaque{sample(1.0, Vec3(0.9, 0.1, 0.3)), sample(0.5, Vec3(0, 1, 0))};
  const CompositeResult o = composite(opaque, bg);
  EXPECT_EQ(o.pixel, Vec3(0.9, 0.1, 0.3));
  EXPECT_EQ(o.accAlpha, 1.0);
}

TEST(Composite, UniformMediumMatchesBeerLambert) {
  Ray r;
  r.tFar = 1;
  std::mt19937_64 rng(0);
  std::vector<RaySample> s;
  for (const auto& iv : sample_ray(r, 256, false, rng)) {
    RaySample x = sample(alpha_from_sigma(1.0, iv.delta), Vec3::Zero());
    s.push_back(x);
  }
  EXPECT_NEAR(composite(s, Vec3::Ones()).accAlpha, 1 - std::exp(-1.0), 1e-3);
}

// Weights T_i a_i plus the final transmittance telescope to one; the pixel is
// a convex combination of sample colors and background; order matters.
TEST(CompositeProperty, TelescopingConvexOrdered) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RaySample> s;
    const int n = 1 + trial % 12;
    for (int i = 0; i < n; ++i) s.push_back(sample(u(rng) * 0.9, Vec3(u(rng), u(rng), u(rng))));
    const Vec3 bg(u(rng), u(rng), u(rng));
    double T = 1, wsum = 0;
    Vec3 want = Vec3::Zero();
    for (const RaySample& x : s) {
      want += T * x.alpha * x.color;
      wsum += T * x.alpha;
      T *= 1 - x.alpha;
    }
    want += T * bg;
    EXPECT_NEAR(wsum + T, 1.0, 1e-12);
    const CompositeResult c = composite(s, bg);
    EXPECT_NEAR((c.pixel - want).norm(), 0.0, 1e-12);
    EXPECT_NEAR(c.accAlpha, 1 - T, 1e-12);
    for (int a = 0; a < 3; ++a) {
      double lo = bg[a], hi = bg[a];
      for (const RaySample& x : s) {
        lo = std::min(lo, x.color[a]);
        hi = std::max(hi, x.color[a]);
      }
      EXPECT_GE(c.pixel[a], lo - 1e-12);
      EXPECT_LE(c.pixel[a], hi + 1e-12);
    }
  }
  std::vector<RaySample> ab{sample(0.6, Vec3(1, 0, 0)), sample(0.6, Vec3(0, 0, 1))};
  std::vector<RaySample> ba{ab[1], ab[0]};
  EXPECT_GT((composite(ab, Vec3::Zero()).pixel - composite(ba, Vec3::Zero()).pixel).norm(), 0.1);
}

TEST(CompositeBackward, FiniteDifferences) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  std::vector<RaySample> s(7);
  for (RaySample& x : s) {
    x.sigma = u(rng);
    x.delta = 0.1 * u(rng);
    x.alpha = alpha_from_sigma(x.sigma, x.delta);
    x.color = Vec3(u(rng), u(rng), u(rng)) / 2;
    x.empty = false;
  }
  const Vec3 bg(0.3, 0.7, 0.1), dPix(0.5, -1.0, 2.0);
  std::vector<Vec3> dC(s.size());
  std::vector<double> dS(s.size());
  composite_backward(s, bg, dPix, dC, dS);
  const double h = 1e-6;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto p = s, m = s;
    p[i].sigma += h;
    m[i].sigma -= h;
    p[i].alpha = alpha_from_sigma(p[i].sigma, p[i].delta);
    m[i].alpha = alpha_from_sigma(m[i].sigma, m[i].delta);
    const double fd = (dPix.dot(composite(p, bg).pixel) - dPix.dot(composite(m, bg).pixel)) / (2 * h);
    EXPECT_NEAR(dS[i], fd, 1e-7);
    for (int a = 0; a < 3; ++a) {
      p = s;
      m = s;
      p[i].color[a] += h;
      m[i].color[a] -= h;
      const double fc = (dPix.dot(composite(p, bg).pixel) - dPix.dot(composite(m, bg).pixel)) / (2 * h);
      EXPECT_NEAR(dC[i][a], fc, 1e-7);
    }
  }
}

class RenderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    toy_ = genie::testing::tiny_toy();
    bundle_ = genie::testing::tiny_bundle(toy_);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n01(0, 0.5);
    for (double& v : bundle_.grid.params().tables) v = n01(rng);
    for (double& v : bundle_.net.params()) v += 0.2 * n01(rng);
    bundle_.render.stratified = true;
    bundle_.render.seed = 11;
  }
  ToyScene toy_;
  SceneBundle bundle_;
};

TEST_F(RenderTest, EmptySceneIsBackground) {
  const GaussianSet empty;
  RenderConfig cfg = bundle_.render;
  cfg.background = Vec3(0.1, 0.2, 0.3);
  const Image img = render_image(toy_.dataset.cameras[0], empty, nullptr, bundle_.grid, bundle_.net, cfg);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      EXPECT_EQ(img.color(c, r), cfg.background);
      EXPECT_EQ(img.accAlpha(c, r), 0.0);
    }
}

TEST_F(RenderTest, DeterministicAcrossRunsAndThreads) {
  const ProximityIndex idx = ProximityIndex::build(bundle_.set, bundle_.render.splash.q);
  RenderConfig cfg = bundle_.render;
  const Camera& cam = toy_.dataset.cameras[1];
  const Image a = render_image(cam, bundle_.set, &idx, bundle_.grid, bundle_.net, cfg);
  const Image b = render_image(cam, bundle_.set, &idx, bundle_.grid, bundle_.net, cfg);
  cfg.threads = 3;
  const Image c = render_image(cam, bundle_.set, &idx, bundle_.grid, bundle_.net, cfg);
  EXPECT_TRUE(same_bits(a.rgba, b.rgba));
  EXPECT_TRUE(same_bits(a.rgba, c.rgba));
  cfg.seed = 12;
  const Image d = render_image(cam, bundle_.set, &idx, bundle_.grid, bundle_.net, cfg);
  EXPECT_FALSE(same_bits(a.rgba, d.rgba));
}

TEST_F(RenderTest, StaleIndexRejected) {
  const ProximityIndex idx = ProximityIndex::build(bundle_.set, bundle_.render.splash.q);
  bundle_.set.mutate([](std::vector<Gaussian>&) {});
  EXPECT_THROW(render_image(toy_.dataset.cameras[0], bundle_.set, &idx, bundle_.grid, bundle_.net,
                            bundle_.render),
               StaleIndexError);
}

TEST_F(RenderTest, RawFloatDumpLayout) {
  const ProximityIndex idx = ProximityIndex::build(bundle_.set, bundle_.render.splash.q);
  const Image img = render_image(toy_.dataset.cameras[2], bundle_.set, &idx, bundle_.grid,
                                 bundle_.net, bundle_.render);
  const auto raw = raw_float_dump(img);
  ASSERT_EQ(raw.size(), 8u + 16u * 12 * 12);
  std::int32_t w, h;
  std::memcpy(&w, raw.data(), 4);
  std::memcpy(&h, raw.data() + 4, 4);
  EXPECT_EQ(w, 12);
  EXPECT_EQ(h, 12);
  for (std::size_t i = 0; i < img.rgba.size(); ++i) {
    float v;
    std::memcpy(&v, raw.data() + 8 + 4 * i, 4);
    EXPECT_EQ(v, static_cast<float>(img.rgba[i]));
  }
}

TEST(RenderImage, OpaqueGaussianCoversCenterOnly) {
  HashGridConfig gc;
  gc.levels = 2;
  gc.baseResolution = 4;
  gc.tableSize = 1u << 8;
  const HashGrid grid(gc, 1);
  FieldArch arch;
  arch.inputDim = gc.outputDim();
  arch.hidden = 8;
  arch.dirFrequencies = 1;
  FieldNetwork net(arch);
  net.params()[sigmaBiasOffset(arch)] = 20.0;  // softplus(20) ~ 20 everywhere inside
  Gaussian g;
  g.logScale = Vec3::Constant(std::log(0.01));
  g.feature.assign(static_cast<std::size_t>(gc.outputDim()), 0.0);
  const GaussianSet set({g});
  const ProximityIndex idx = ProximityIndex::build(set, 2.0);
  const Camera cam = look_at_camera({0, 0, 3}, Vec3::Zero(), Vec3::UnitY(), 20, 15, 15, 1, 5);
  RenderConfig cfg;
  cfg.samples = 64;
  const Image img = render_image(cam, set, &idx, grid, net, cfg);
  EXPECT_GT(img.accAlpha(7, 7), 0.5);
  for (auto [c, r] : {std::pair{0, 0}, {14, 0}, {0, 14}, {14, 14}}) EXPECT_LT(img.accAlpha(c, r), 1e-6);
}

TEST(MeanAbsError, SizesMustMatch) {
  Image a, b;
  a.width = a.height = 1;
  a.rgba = {0, 0, 0, 1};
  b.width = 2;
  b.height = 1;
  b.rgba.assign(8, 0.0);
  EXPECT_THROW(mean_abs_error(a, b), std::invalid_argument);
  Image c = a;
  c.rgba = {0.3, 0, 0, 1};
  EXPECT_NEAR(mean_abs_error(a, c), 0.1, 1e-15);
}
