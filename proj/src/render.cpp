#include "genie/render.hpp"

#include "genie/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace genie {

std::vector<SampleInterval> sample_ray(const Ray& ray, int n, bool stratified,
                                       std::mt19937_64& rng) {
  if (n < 2) throw std::invalid_argument("sample_ray: need at least 2 samples");
  std::vector<SampleInterval> out(static_cast<std::size_t>(n));
  const double span = ray.tFar - ray.tNear;
  const double bin = span / n;
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double u = stratified ? jitter(rng) : 0.0;
    out[static_cast<std::size_t>(i)].t = ray.tNear + (i + u) * bin;
  }
  for (int i = 0; i + 1 < n; ++i) {
    out[static_cast<std::size_t>(i)].delta =
        out[static_cast<std::size_t>(i) + 1].t - out[static_cast<std::size_t>(i)].t;
  }
  out.back().delta = ray.tFar - out.back().t;
  out.front().delta += out.front().t - ray.tNear;
  return out;
}

double alpha_from_sigma(double sigma, double delta) { return -std::expm1(-sigma * delta); }

CompositeResult composite(std::span<const RaySample> samples, const Vec3& background) {
  CompositeResult out;
  double transmittance = 1.0;
  for (const RaySample& s : samples) {
    if (s.alpha == 0.0) continue;
    out.pixel += transmittance * s.alpha * s.color;
    transmittance *= 1.0 - s.alpha;
  }
  out.pixel += transmittance * background;
  out.accAlpha = 1.0 - transmittance;
  return out;
}

void composite_backward(std::span<const RaySample> samples, const Vec3& background,
                        const Vec3& dPixel, std::span<Vec3> dColor, std::span<double> dSigma) {
  const std::size_t n = samples.size();
  thread_local std::vector<double> trans;
  trans.resize(n);
  double t = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    trans[i] = t;
    t *= 1.0 - samples[i].alpha;
  }
  // Radiance reaching sample i's far side, per unit transmittance there.
  Vec3 behind = background;
  for (std::size_t i = n; i-- > 0;) {
    const RaySample& s = samples[i];
    dColor[i] = trans[i] * s.alpha * dPixel;
    const double dAlpha = trans[i] * dPixel.dot(s.color - behind);
    dSigma[i] = dAlpha * s.delta * (1.0 - s.alpha);
    behind = s.alpha * s.color + (1.0 - s.alpha) * behind;
  }
}

namespace {

bool clipToBox(const Vec3& lo, const Vec3& hi, Ray& ray) {
  double t0 = ray.tNear;
  double t1 = ray.tFar;
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / ray.direction[a];
    double ta = (lo[a] - ray.origin[a]) * inv;
    double tb = (hi[a] - ray.origin[a]) * inv;
    if (std::isnan(ta) || std::isnan(tb)) {
      // Parallel to the slab with the origin on a face.
      if (ray.origin[a] < lo[a] || ray.origin[a] > hi[a]) return false;
      continue;
    }
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return false;
  ray.tNear = t0;
  ray.tFar = t1;
  return true;
}

}  // namespace

CompositeResult trace_ray(const Ray& input, const FieldScene& scene, const RenderConfig& config,
                          std::mt19937_64& rng, RayTrace& trace) {
  trace.samples.clear();
  trace.column.clear();
  // backprop_ray reads the batch width; a ray with no live samples must not
  // inherit the previous ray's columns.
  trace.batch.input.resize(0, 0);
  trace.result = CompositeResult{config.background, 0.0};
  if (scene.set == nullptr || scene.set->empty() || scene.index == nullptr) return trace.result;

  Ray ray = input;
  if (config.clipToSpheres) {
    const auto& root = scene.index->nodes().front();
    if (!clipToBox(root.lo, root.hi, ray)) return trace.result;
  }
  const std::vector<SampleInterval> intervals =
      sample_ray(ray, config.samples, config.stratified, rng);
  const std::size_t n = intervals.size();
  trace.samples.resize(n);
  if (trace.splash.size() < n) trace.splash.resize(n);
  trace.column.assign(n, -1);

  int live = 0;
  for (std::size_t i = 0; i < n; ++i) {
    RaySample& s = trace.samples[i];
    s.t = intervals[i].t;
    s.delta = intervals[i].delta;
    s.position = ray.at(s.t);
    SplashOutput& sp = trace.splash[i];
    encode_point(s.position, *scene.set, *scene.index, *scene.features, config.splash, sp);
    s.empty = sp.empty;
    s.sigma = 0.0;
    s.alpha = 0.0;
    s.color.setZero();
    if (!sp.empty) trace.column[i] = live++;
  }
  if (live > 0) {
    FieldBatch& b = trace.batch;
    b.input.resize(static_cast<Eigen::Index>(scene.features->dim), live);
    for (std::size_t i = 0; i < n; ++i) {
      if (trace.column[i] < 0) continue;
      const auto& f = trace.splash[i].feature;
      std::copy(f.begin(), f.end(), b.input.col(trace.column[i]).data());
    }
    scene.net->forward_batch(ray.direction, b);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = trace.column[i];
      if (c < 0) continue;
      RaySample& s = trace.samples[i];
      s.sigma = b.sigma[c];
      s.color = b.color.col(c);
      s.alpha = alpha_from_sigma(s.sigma, s.delta);
    }
  }
  trace.result = composite(trace.samples, config.background);
  return trace.result;
}

void GradientSink::reset(std::size_t thetaSize, std::size_t gaussians, std::size_t featureDim) {
  dTheta.assign(thetaSize, 0.0);
  dFeature.dim = featureDim;
  dFeature.data.assign(gaussians * featureDim, 0.0);
  dMean.assign(gaussians, Vec3::Zero());
  dLogScale.assign(gaussians, Vec3::Zero());
  touched.assign(gaussians, 0);
}

void GradientSink::add(const GradientSink& other) {
  for (std::size_t i = 0; i < dTheta.size(); ++i) dTheta[i] += other.dTheta[i];
  for (std::size_t i = 0; i < touched.size(); ++i) {
    if (!other.touched[i]) continue;
    touched[i] = 1;
    dMean[i] += other.dMean[i];
    dLogScale[i] += other.dLogScale[i];
    auto dst = dFeature.row(i);
    const auto src = other.dFeature.row(i);
    for (std::size_t j = 0; j < dFeature.dim; ++j) dst[j] += src[j];
  }
}

void backprop_ray(const RayTrace& trace, const FieldScene& scene, const RenderConfig& config,
                  const Vec3& dPixel, GradientSink& sink) {
  const std::size_t n = trace.samples.size();
  if (n == 0) return;
  thread_local std::vector<Vec3> dColor;
  thread_local std::vector<double> dSigma;
  dColor.resize(n);
  dSigma.resize(n);
  composite_backward(trace.samples, config.background, dPixel, dColor, dSigma);

  const std::size_t dim = scene.features->dim;
  const FieldBatch& b = trace.batch;
  const Eigen::Index live = b.input.cols();
  if (live == 0) return;
  thread_local Eigen::Matrix3Xd dC;
  thread_local Eigen::RowVectorXd dS;
  thread_local Eigen::MatrixXd dX;
  dC.resize(3, live);
  dS.resize(live);
  for (std::size_t s = 0; s < n; ++s) {
    const int c = trace.column[s];
    if (c < 0) continue;
    dC.col(c) = dColor[s];
    dS[c] = dSigma[s];
  }
  scene.net->backward_batch(b, dC, dS, sink.dTheta, dX);

  for (std::size_t s = 0; s < n; ++s) {
    const int c = trace.column[s];
    if (c < 0) continue;
    const double* dFeat = dX.col(c).data();
    const SplashOutput& sp = trace.splash[s];
    const Vec3& x = trace.samples[s].position;
    for (std::size_t m = 0; m < sp.neighbors.size(); ++m) {
      const std::uint32_t i = sp.neighbors.indices[m];
      const double w = sp.weights[m];
      const auto f = scene.features->row(i);
      auto df = sink.dFeature.row(i);
      double dw = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        df[j] += w * dFeat[j];
        dw += dFeat[j] * f[j];
      }
      Vec3 dwdMean;
      Vec3 dwdLogScale;
      weight_gradients(x, (*scene.set)[i], w, dwdMean, dwdLogScale);
      sink.dMean[i] += dw * dwdMean;
      sink.dLogScale[i] += dw * dwdLogScale;
      sink.touched[i] = 1;
    }
  }
}

void finish_feature_gradients(const GaussianSet& set, const HashGrid& grid, GradientSink& sink,
                              GridGradientBuffer& gridGrad) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!sink.touched[i]) continue;
    sink.dMean[i] += grid.backward_accumulate(set[i].mean, sink.dFeature.row(i), gridGrad);
  }
}

Image render_image(const Camera& camera, const GaussianSet& set, const ProximityIndex* index,
                   const HashGrid& grid, const FieldNetwork& net, const RenderConfig& config) {
  FeatureTable features;
  if (!set.empty()) features = resolve_features(set, grid, config.splash.mode);
  const FieldScene scene{&set, index, &features, &net};
  return render_image(camera, scene, config);
}

Image render_image(const Camera& camera, const FieldScene& scene, const RenderConfig& config) {
  validate_camera(camera);
  const bool hasGaussians = scene.set != nullptr && !scene.set->empty();
  if (hasGaussians) {
    if (scene.index == nullptr) throw std::invalid_argument("render: non-empty scene without index");
    if (scene.index->builtEpoch() != scene.set->epoch()) {
      throw StaleIndexError(scene.index->builtEpoch(), scene.set->epoch());
    }
  }
  Image image;
  image.width = camera.width;
  image.height = camera.height;
  image.rgba.assign(static_cast<std::size_t>(camera.width) * camera.height * 4, 0.0);
  parallel_for(static_cast<std::size_t>(camera.height), config.threads, [&](std::size_t row) {
    thread_local RayTrace trace;
    for (int col = 0; col < camera.width; ++col) {
      const std::size_t pixel = row * static_cast<std::size_t>(camera.width) + col;
      std::mt19937_64 rng(mix_seed(config.seed, pixel));
      const Ray ray = camera_ray(camera, col + 0.5, static_cast<double>(row) + 0.5);
      const CompositeResult r = trace_ray(ray, scene, config, rng, trace);
      double* dst = image.rgba.data() + pixel * 4;
      dst[0] = r.pixel[0];
      dst[1] = r.pixel[1];
      dst[2] = r.pixel[2];
      dst[3] = r.accAlpha;
    }
  });
  return image;
}

double mean_abs_error(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("mean_abs_error: image sizes differ");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.rgba.size(); ++i) {
    if (i % 4 == 3) continue;
    sum += std::abs(a.rgba[i] - b.rgba[i]);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::vector<std::uint8_t> raw_float_dump(const Image& image) {
  static_assert(std::endian::native == std::endian::little, "raw dump assumes little-endian host");
  std::vector<std::uint8_t> out(8 + image.rgba.size() * 4);
  const std::int32_t w = image.width;
  const std::int32_t h = image.height;
  std::memcpy(out.data(), &w, 4);
  std::memcpy(out.data() + 4, &h, 4);
  for (std::size_t i = 0; i < image.rgba.size(); ++i) {
    const float v = static_cast<float>(image.rgba[i]);
    std::memcpy(out.data() + 8 + i * 4, &v, 4);
  }
  return out;
}

}  // namespace genie
