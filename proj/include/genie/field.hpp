#pragma once

#include "genie/scene.hpp"

#include <Eigen/StdVector>

#include <cstdint>
#include <span>
#include <vector>

namespace genie {

struct FieldArch {
  int inputDim = 32;
  int hidden = 64;
  int dirFrequencies = 4;

  int dirEncodingDim() const { return 3 + 6 * dirFrequencies; }
};

/// Fixed base alignment keeps Eigen's vectorized kernels from choosing a
/// different reduction order per allocation, which would break bitwise
/// reproducibility.
using AlignedDoubles = std::vector<double, Eigen::aligned_allocator<double>>;

/// [d, sin(2^j pi d), cos(2^j pi d)] for j < frequencies.
void encode_direction(const Vec3& d, int frequencies, std::span<double> out);

struct FieldOutput {
  Vec3 color = Vec3::Zero();
  double sigma = 0.0;
};

/// Activations kept by forward for the backward pass.
struct FieldCache {
  std::vector<double> input;
  std::vector<double> h1;
  std::vector<double> h2;
  std::vector<double> dirEnc;
  double sigmaPre = 0.0;
  Vec3 colorPre = Vec3::Zero();
  Vec3 color = Vec3::Zero();
};

/// Column-batched activations for samples along one ray (shared direction).
/// `input` holds one feature per column and is filled by the caller.
struct FieldBatch {
  Eigen::MatrixXd input;
  Eigen::MatrixXd h1;
  Eigen::MatrixXd h2;
  Eigen::VectorXd dirEnc;
  Eigen::RowVectorXd sigmaPre;
  Eigen::RowVectorXd sigma;
  Eigen::Matrix3Xd color;
};

/// Two ReLU trunk layers, a softplus density head on the trunk and a
/// sigmoid color head on trunk (+) direction encoding. All parameters live in
/// one flat vector:
///   W1 [hidden x in], b1, W2 [hidden x hidden], b2, Ws [hidden], bs,
///   Wc [3 x (hidden + dirEnc)], bc.
class FieldNetwork {
 public:
  FieldNetwork() = default;
  explicit FieldNetwork(FieldArch arch);
  FieldNetwork(FieldArch arch, std::vector<double> params);

  static FieldNetwork init(FieldArch arch, std::uint64_t seed);
  static std::size_t parameterCount(const FieldArch& arch);

  const FieldArch& arch() const { return arch_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  FieldOutput forward(std::span<const double> feature, const Vec3& direction,
                      FieldCache* cache = nullptr) const;

  /// Accumulates parameter gradients into dParams and writes the input
  /// feature gradient to dFeature (overwritten).
  void backward(const FieldCache& cache, const Vec3& dColor, double dSigma,
                std::span<double> dParams, std::span<double> dFeature) const;

  /// Same math as forward/backward over every column of `batch.input`.
  void forward_batch(const Vec3& direction, FieldBatch& batch) const;
  void backward_batch(const FieldBatch& batch, const Eigen::Matrix3Xd& dColor,
                      const Eigen::RowVectorXd& dSigma, std::span<double> dParams,
                      Eigen::MatrixXd& dInput) const;

 private:
  struct Layout {
    std::size_t w1, b1, w2, b2, ws, bs, wc, bc, total;
  };
  static Layout layoutFor(const FieldArch& arch);

  FieldArch arch_;
  Layout layout_{};
  AlignedDoubles params_;
};

/// field_forward contract: density forced to zero in empty space.
FieldOutput field_forward(std::span<const double> feature, const Vec3& direction,
                          const FieldNetwork& net, bool emptySpace = false,
                          FieldCache* cache = nullptr);

double softplus(double x);
double sigmoid(double x);

}  // namespace genie
