#include "genie/field.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace genie {

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void encode_direction(const Vec3& d, int frequencies, std::span<double> out) {
  out[0] = d[0];
  out[1] = d[1];
  out[2] = d[2];
  std::size_t o = 3;
  double freq = std::numbers::pi;
  for (int j = 0; j < frequencies; ++j) {
    for (int a = 0; a < 3; ++a) {
      out[o++] = std::sin(freq * d[a]);
      out[o++] = std::cos(freq * d[a]);
    }
    freq *= 2.0;
  }
}

FieldNetwork::Layout FieldNetwork::layoutFor(const FieldArch& arch) {
  const std::size_t in = static_cast<std::size_t>(arch.inputDim);
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  const std::size_t cin = h + static_cast<std::size_t>(arch.dirEncodingDim());
  Layout l{};
  l.w1 = 0;
  l.b1 = l.w1 + h * in;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + h * h;
  l.ws = l.b2 + h;
  l.bs = l.ws + h;
  l.wc = l.bs + 1;
  l.bc = l.wc + 3 * cin;
  l.total = l.bc + 3;
  return l;
}

std::size_t FieldNetwork::parameterCount(const FieldArch& arch) { return layoutFor(arch).total; }

FieldNetwork::FieldNetwork(FieldArch arch)
    : arch_(arch), layout_(layoutFor(arch)), params_(layout_.total, 0.0) {}

FieldNetwork::FieldNetwork(FieldArch arch, std::vector<double> params)
    : arch_(arch), layout_(layoutFor(arch)), params_(params.begin(), params.end()) {
  if (params_.size() != layout_.total) {
    throw std::invalid_argument("field: parameter vector does not match architecture");
  }
}

FieldNetwork FieldNetwork::init(FieldArch arch, std::uint64_t seed) {
  FieldNetwork net(arch);
  std::mt19937_64 rng(seed);
  const auto fill = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < rows * cols; ++i) net.params_[offset + i] = dist(rng);
  };
  const std::size_t in = static_cast<std::size_t>(arch.inputDim);
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  const std::size_t cin = h + static_cast<std::size_t>(arch.dirEncodingDim());
  fill(net.layout_.w1, h, in);
  fill(net.layout_.w2, h, h);
  fill(net.layout_.ws, 1, h);
  fill(net.layout_.wc, 3, cin);
  return net;
}

FieldOutput FieldNetwork::forward(std::span<const double> feature, const Vec3& direction,
                                  FieldCache* cache) const {
  const std::size_t in = static_cast<std::size_t>(arch_.inputDim);
  const std::size_t h = static_cast<std::size_t>(arch_.hidden);
  const std::size_t de = static_cast<std::size_t>(arch_.dirEncodingDim());
  if (feature.size() != in) throw std::invalid_argument("field: feature dimension mismatch");

  FieldCache local;
  FieldCache& c = cache != nullptr ? *cache : local;
  c.input.assign(feature.begin(), feature.end());
  c.h1.resize(h);
  c.h2.resize(h);
  c.dirEnc.resize(de);
  const double* p = params_.data();

  for (std::size_t r = 0; r < h; ++r) {
    const double* w = p + layout_.w1 + r * in;
    double acc = p[layout_.b1 + r];
    for (std::size_t j = 0; j < in; ++j) acc += w[j] * feature[j];
    c.h1[r] = acc > 0.0 ? acc : 0.0;
  }
  for (std::size_t r = 0; r < h; ++r) {
    const double* w = p + layout_.w2 + r * h;
    double acc = p[layout_.b2 + r];
    for (std::size_t j = 0; j < h; ++j) acc += w[j] * c.h1[j];
    c.h2[r] = acc > 0.0 ? acc : 0.0;
  }
  double s = p[layout_.bs];
  for (std::size_t j = 0; j < h; ++j) s += p[layout_.ws + j] * c.h2[j];
  c.sigmaPre = s;

  encode_direction(direction, arch_.dirFrequencies, c.dirEnc);
  const std::size_t cin = h + de;
  FieldOutput out;
  for (int ch = 0; ch < 3; ++ch) {
    const double* w = p + layout_.wc + static_cast<std::size_t>(ch) * cin;
    double acc = p[layout_.bc + static_cast<std::size_t>(ch)];
    for (std::size_t j = 0; j < h; ++j) acc += w[j] * c.h2[j];
    for (std::size_t j = 0; j < de; ++j) acc += w[h + j] * c.dirEnc[j];
    c.colorPre[ch] = acc;
    out.color[ch] = sigmoid(acc);
  }
  c.color = out.color;
  out.sigma = softplus(s);
  return out;
}

void FieldNetwork::backward(const FieldCache& c, const Vec3& dColor, double dSigma,
                            std::span<double> dParams, std::span<double> dFeature) const {
  const std::size_t in = static_cast<std::size_t>(arch_.inputDim);
  const std::size_t h = static_cast<std::size_t>(arch_.hidden);
  const std::size_t de = static_cast<std::size_t>(arch_.dirEncodingDim());
  const std::size_t cin = h + de;
  const double* p = params_.data();
  double* g = dParams.data();

  // Head pre-activation gradients.
  const double dS = dSigma * sigmoid(c.sigmaPre);
  Vec3 dC;
  for (int ch = 0; ch < 3; ++ch) dC[ch] = dColor[ch] * c.color[ch] * (1.0 - c.color[ch]);

  thread_local std::vector<double> dh2;
  thread_local std::vector<double> dh1;
  dh2.assign(h, 0.0);
  dh1.assign(h, 0.0);

  g[layout_.bs] += dS;
  for (std::size_t j = 0; j < h; ++j) {
    g[layout_.ws + j] += dS * c.h2[j];
    dh2[j] += dS * p[layout_.ws + j];
  }
  for (int ch = 0; ch < 3; ++ch) {
    const double d = dC[ch];
    if (d == 0.0) continue;
    const std::size_t row = layout_.wc + static_cast<std::size_t>(ch) * cin;
    g[layout_.bc + static_cast<std::size_t>(ch)] += d;
    for (std::size_t j = 0; j < h; ++j) {
      g[row + j] += d * c.h2[j];
      dh2[j] += d * p[row + j];
    }
    for (std::size_t j = 0; j < de; ++j) g[row + h + j] += d * c.dirEnc[j];
  }

  for (std::size_t r = 0; r < h; ++r) {
    if (c.h2[r] <= 0.0) continue;
    const double d = dh2[r];
    g[layout_.b2 + r] += d;
    const std::size_t row = layout_.w2 + r * h;
    for (std::size_t j = 0; j < h; ++j) {
      g[row + j] += d * c.h1[j];
      dh1[j] += d * p[row + j];
    }
  }

  for (std::size_t j = 0; j < in; ++j) dFeature[j] = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    if (c.h1[r] <= 0.0) continue;
    const double d = dh1[r];
    g[layout_.b1 + r] += d;
    const std::size_t row = layout_.w1 + r * in;
    for (std::size_t j = 0; j < in; ++j) {
      g[row + j] += d * c.input[j];
      dFeature[j] += d * p[row + j];
    }
  }
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

}  // namespace

void FieldNetwork::forward_batch(const Vec3& direction, FieldBatch& b) const {
  const Eigen::Index in = arch_.inputDim;
  const Eigen::Index h = arch_.hidden;
  const Eigen::Index de = arch_.dirEncodingDim();
  const Eigen::Index cin = h + de;
  if (b.input.rows() != in) throw std::invalid_argument("field: feature dimension mismatch");
  const double* p = params_.data();
  const ConstRowMap w1(p + layout_.w1, h, in);
  const ConstRowMap w2(p + layout_.w2, h, h);
  const ConstRowMap ws(p + layout_.ws, 1, h);
  const ConstRowMap wc(p + layout_.wc, 3, cin);
  const Eigen::Map<const Eigen::VectorXd> b1(p + layout_.b1, h);
  const Eigen::Map<const Eigen::VectorXd> b2(p + layout_.b2, h);
  const Eigen::Map<const Eigen::Vector3d> bc(p + layout_.bc);

  b.h1.noalias() = w1 * b.input;
  b.h1 = (b.h1.colwise() + b1).cwiseMax(0.0);
  b.h2.noalias() = w2 * b.h1;
  b.h2 = (b.h2.colwise() + b2).cwiseMax(0.0);
  b.sigmaPre.noalias() = ws * b.h2;
  b.sigmaPre.array() += p[layout_.bs];

  b.dirEnc.resize(de);
  encode_direction(direction, arch_.dirFrequencies, {b.dirEnc.data(), static_cast<std::size_t>(de)});
  const Eigen::Vector3d shift = wc.rightCols(de) * b.dirEnc + bc;
  b.color.noalias() = wc.leftCols(h) * b.h2;
  b.color.colwise() += shift;
  b.sigma.resize(b.sigmaPre.size());
  for (Eigen::Index i = 0; i < b.color.cols(); ++i) {
    for (int ch = 0; ch < 3; ++ch) b.color(ch, i) = sigmoid(b.color(ch, i));
    b.sigma[i] = softplus(b.sigmaPre[i]);
  }
}

void FieldNetwork::backward_batch(const FieldBatch& b, const Eigen::Matrix3Xd& dColor,
                                  const Eigen::RowVectorXd& dSigma, std::span<double> dParams,
                                  Eigen::MatrixXd& dInput) const {
  const Eigen::Index in = arch_.inputDim;
  const Eigen::Index h = arch_.hidden;
  const Eigen::Index de = arch_.dirEncodingDim();
  const Eigen::Index cin = h + de;
  const Eigen::Index m = b.input.cols();
  const double* p = params_.data();
  double* g = dParams.data();
  const ConstRowMap w1(p + layout_.w1, h, in);
  const ConstRowMap w2(p + layout_.w2, h, h);
  const ConstRowMap ws(p + layout_.ws, 1, h);
  const ConstRowMap wc(p + layout_.wc, 3, cin);
  RowMap gw1(g + layout_.w1, h, in);
  RowMap gw2(g + layout_.w2, h, h);
  RowMap gws(g + layout_.ws, 1, h);
  RowMap gwc(g + layout_.wc, 3, cin);
  Eigen::Map<Eigen::VectorXd> gb1(g + layout_.b1, h);
  Eigen::Map<Eigen::VectorXd> gb2(g + layout_.b2, h);
  Eigen::Map<Eigen::Vector3d> gbc(g + layout_.bc);

  thread_local Eigen::RowVectorXd dS;
  thread_local Eigen::Matrix3Xd dC;
  thread_local Eigen::MatrixXd dh2;
  thread_local Eigen::MatrixXd dh1;
  dS.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) dS[i] = dSigma[i] * sigmoid(b.sigmaPre[i]);
  dC = dColor.cwiseProduct(b.color).cwiseProduct((1.0 - b.color.array()).matrix());

  g[layout_.bs] += dS.sum();
  gws.noalias() += dS * b.h2.transpose();
  const Eigen::Vector3d dCsum = dC.rowwise().sum();
  gbc += dCsum;
  gwc.leftCols(h).noalias() += dC * b.h2.transpose();
  gwc.rightCols(de).noalias() += dCsum * b.dirEnc.transpose();

  dh2.noalias() = ws.transpose() * dS;
  dh2.noalias() += wc.leftCols(h).transpose() * dC;
  dh2.array() *= (b.h2.array() > 0.0).cast<double>();
  gb2 += dh2.rowwise().sum();
  gw2.noalias() += dh2 * b.h1.transpose();

  dh1.noalias() = w2.transpose() * dh2;
  dh1.array() *= (b.h1.array() > 0.0).cast<double>();
  gb1 += dh1.rowwise().sum();
  gw1.noalias() += dh1 * b.input.transpose();
  dInput.noalias() = w1.transpose() * dh1;
}

FieldOutput field_forward(std::span<const double> feature, const Vec3& direction,
                          const FieldNetwork& net, bool emptySpace, FieldCache* cache) {
  FieldOutput out = net.forward(feature, direction, cache);
  if (emptySpace) out.sigma = 0.0;
  return out;
}

}  // namespace genie
