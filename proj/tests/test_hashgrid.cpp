#include "genie/hashgrid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

using namespace genie;

namespace {

HashGridConfig small(std::uint32_t table = 1u << 12) {
  HashGridConfig c;
  c.levels = 5;
  c.baseResolution = 4;
  c.perLevelScale = 1.8;
  c.tableSize = table;
  c.featuresPerLevel = 2;
  return c;
}

HashGrid randomGrid(const HashGridConfig& c, std::uint64_t seed) {
  HashGridParams p = init_params(c, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0, 1);
  for (double& v : p.tables) v = n01(rng);
  return HashGrid(c, std::move(p));
}

}  // namespace

TEST(HashIndex, OriginIsZeroOnEveryLevel) {
  const HashGridConfig c = small(1u << 8);
  for (int l = 0; l < c.levels; ++l) EXPECT_EQ(hash_index({0, 0, 0}, l, c), 0u);
}

TEST(HashIndex, DenseRowMajor) {
  HashGridConfig c;
  c.levels = 1;
  c.baseResolution = 4;
  c.tableSize = 1u << 8;
  ASSERT_TRUE(c.isDense(0));
  EXPECT_EQ(hash_index({1, 2, 3}, 0, c), 86u);
}

TEST(HashIndex, HashedCellsSpreadUniformly) {
  HashGridConfig c;
  c.levels = 1;
  c.baseResolution = 512;
  c.tableSize = 1u << 8;
  ASSERT_FALSE(c.isDense(0));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::int64_t> cell(0, 512);
  std::vector<int> counts(c.tableSize, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const std::uint32_t idx = hash_index({cell(rng), cell(rng), cell(rng)}, 0, c);
    ASSERT_LT(idx, c.tableSize);
    ++counts[idx];
  }
  const double expected = static_cast<double>(n) / c.tableSize;
  double chi2 = 0;
  for (int k : counts) chi2 += (k - expected) * (k - expected) / expected;
  // 255 dof: the 0.999 quantile is about 330.5
  EXPECT_LT(chi2, 330.5);
}

TEST(HashGridConfig, RejectsBrokenLayouts) {
  HashGridConfig c = small();
  c.tableSize = 1000;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.perLevelScale = 1.01;  // floor() repeats a resolution
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.boundsMax.x() = c.boundsMin.x();
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.levels = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(HashGrid, InitIsSmallAndSymmetric) {
  const HashGridParams p = init_params(small(), 3);
  double mx = 0, sum = 0;
  for (double v : p.tables) {
    mx = std::max(mx, std::abs(v));
    sum += v;
  }
  EXPECT_LE(mx, 1e-4);
  EXPECT_LT(std::abs(sum / p.tables.size()), 1e-5);
}

TEST(HashGrid, VertexReturnsStoredRow) {
  HashGridConfig c = small();
  c.perLevelScale = 2.0;
  const HashGrid g = randomGrid(c, 2);
  for (int l = 0; l < c.levels; ++l) {
    const int res = c.resolution(l);
    const std::array<std::int64_t, 3> v{1, res / 2, res};
    const Vec3 x(-1 + 2.0 * v[0] / res, -1 + 2.0 * v[1] / res, -1 + 2.0 * v[2] / res);
    const auto e = g.encode(x);
    const std::size_t off = g.params().rowOffset(c, l, hash_index(v, l, c));
    for (int j = 0; j < c.featuresPerLevel; ++j) {
      EXPECT_EQ(e[l * c.featuresPerLevel + j], g.params().tables[off + j]);
    }
  }
}

TEST(HashGrid, OutOfBoundsClampsAndNonFiniteThrows) {
  const HashGrid g = randomGrid(small(), 4);
  EXPECT_EQ(g.encode(Vec3(5, -7, 0.3)), g.encode(Vec3(1, -1, 0.3)));
  EXPECT_THROW(g.encode(Vec3(NAN, 0, 0)), std::invalid_argument);
  std::vector<double> up(static_cast<std::size_t>(g.outputDim()), 1.0);
  const GridBackward b = g.encode_backward(Vec3(5, 0.1, 0.2), up);
  EXPECT_EQ(b.gradX.x(), 0.0);
}

TEST(HashGrid, ZeroUpstreamGivesZeroGradients) {
  const HashGrid g = randomGrid(small(), 5);
  std::vector<double> up(static_cast<std::size_t>(g.outputDim()), 0.0);
  const GridBackward b = g.encode_backward(Vec3(0.1, 0.2, -0.3), up);
  EXPECT_EQ(b.gradX, Vec3::Zero());
  for (const auto& [i, v] : b.gradParams) EXPECT_EQ(v, 0.0);
}

TEST(HashGrid, VertexBackwardPutsUpstreamOnThatRow) {
  HashGridConfig c = small();
  c.perLevelScale = 2.0;
  const HashGrid g = randomGrid(c, 6);
  const Vec3 x(-0.5, 0.0, 0.5);  // a vertex on every power-of-two level
  std::vector<double> up(static_cast<std::size_t>(g.outputDim()));
  for (std::size_t j = 0; j < up.size(); ++j) up[j] = 1.0 + static_cast<double>(j);
  std::map<std::size_t, double> grad;
  for (const auto& [i, v] : g.encode_backward(x, up).gradParams) grad[i] += v;
  for (int l = 0; l < c.levels; ++l) {
    const int res = c.resolution(l);
    const std::array<std::int64_t, 3> v{res / 4, res / 2, 3 * res / 4};
    const std::size_t off = g.params().rowOffset(c, l, hash_index(v, l, c));
    for (int j = 0; j < c.featuresPerLevel; ++j) {
      EXPECT_EQ(grad[off + j], up[l * c.featuresPerLevel + j]);
    }
  }
  EXPECT_LE(grad.size(), static_cast<std::size_t>(8 * c.levels * c.featuresPerLevel));
}

TEST(HashGrid, FiniteDifferences) {
  const HashGrid g = randomGrid(small(1u << 9), 7);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.95, 0.95);
  std::normal_distribution<double> n01(0, 1);
  const double h = 1e-4;
  const auto dim = static_cast<std::size_t>(g.outputDim());
  for (int t = 0; t < 25; ++t) {
    Vec3 x(u(rng), u(rng), u(rng));
    while (distance_to_cell_face(x, g.config()) < 3 * h) x = Vec3(u(rng), u(rng), u(rng));
    std::vector<double> up(dim);
    for (double& v : up) v = n01(rng);
    auto loss = [&](const HashGrid& grid, const Vec3& y) {
      const auto e = grid.encode(y);
      double s = 0;
      for (std::size_t j = 0; j < dim; ++j) s += up[j] * e[j];
      return s;
    };
    const GridBackward b = g.encode_backward(x, up);
    for (int a = 0; a < 3; ++a) {
      Vec3 p = x, m = x;
      p[a] += h;
      m[a] -= h;
      const double fd = (loss(g, p) - loss(g, m)) / (2 * h);
      EXPECT_NEAR(b.gradX[a], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
    std::map<std::size_t, double> grad;
    for (const auto& [i, v] : b.gradParams) grad[i] += v;
    HashGrid probe = g;
    for (const auto& [i, v] : grad) {
      double& w = probe.params().tables[i];
      const double keep = w;
      w = keep + h;
      const double lp = loss(probe, x);
      w = keep - h;
      const double lm = loss(probe, x);
      w = keep;
      EXPECT_NEAR(v, (lp - lm) / (2 * h), 1e-4 * std::max(1e-3, std::abs(v)));
    }
  }
}

TEST(HashGrid, BackwardVariantsAgree) {
  const HashGrid g = randomGrid(small(), 9);
  std::vector<double> up(static_cast<std::size_t>(g.outputDim()), 0.5);
  const Vec3 x(0.13, -0.42, 0.77);
  const GridBackward b = g.encode_backward(x, up);
  GridGradientBuffer buf;
  buf.resize(g.params().tables.size());
  const Vec3 gx = g.backward_accumulate(x, up, buf);
  EXPECT_EQ(gx, b.gradX);
  std::map<std::size_t, double> dense;
  for (const auto& [i, v] : b.gradParams) dense[i] += v;
  for (const auto& [i, v] : dense) EXPECT_DOUBLE_EQ(buf[i], v);
  buf.clear();
  for (const auto& [i, v] : dense) EXPECT_EQ(buf[i], 0.0);
  EXPECT_TRUE(buf.touched().empty());
}

TEST(HashGridProperty, LinearInParameters) {
  const HashGridConfig c = small();
  const HashGrid g1 = randomGrid(c, 10), g2 = randomGrid(c, 11);
  const double a = 0.7, b = -1.3;
  HashGridParams mix = g1.params();
  for (std::size_t i = 0; i < mix.tables.size(); ++i) {
    mix.tables[i] = a * g1.params().tables[i] + b * g2.params().tables[i];
  }
  const HashGrid gm(c, mix);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int t = 0; t < 300; ++t) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const auto e1 = g1.encode(x), e2 = g2.encode(x), em = gm.encode(x);
    for (std::size_t j = 0; j < em.size(); ++j) EXPECT_NEAR(em[j], a * e1[j] + b * e2[j], 1e-12);
  }
}

TEST(HashGridProperty, LipschitzPerLevel) {
  const HashGridConfig c = small();
  const HashGrid g = randomGrid(c, 13);
  double bound = 0;
  for (int l = 0; l < c.levels; ++l) {
    double mx = 0;
    for (std::uint32_t r = 0; r < c.tableSize; ++r) {
      for (int j = 0; j < c.featuresPerLevel; ++j) {
        mx = std::max(mx, std::abs(g.params().tables[g.params().rowOffset(c, l, r) + j]));
      }
    }
    // res/2 cells per unit, corner differences up to 2*mx
    bound += c.resolution(l) * mx;
  }
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-1, 1), d(-0.05, 0.05);
  for (int t = 0; t < 2000; ++t) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const Vec3 y = x + Vec3(d(rng), d(rng), d(rng));
    const auto ex = g.encode(x), ey = g.encode(y);
    double diff = 0;
    for (std::size_t j = 0; j < ex.size(); ++j) diff = std::max(diff, std::abs(ex[j] - ey[j]));
    EXPECT_LE(diff, bound * (x - y).lpNorm<1>() + 1e-12);
  }
}

// A rank-1 step along the parameter gradient changes the output to first order.
TEST(HashGridProperty, GradientStepIsFirstOrder) {
  const HashGrid g = randomGrid(small(), 15);
  const Vec3 x(0.31, -0.07, 0.52);
  std::vector<double> up(static_cast<std::size_t>(g.outputDim()));
  std::mt19937_64 rng(16);
  std::normal_distribution<double> n01(0, 1);
  for (double& v : up) v = n01(rng);
  const GridBackward b = g.encode_backward(x, up);
  auto lossOf = [&](const HashGrid& grid) {
    const auto e = grid.encode(x);
    double s = 0;
    for (std::size_t j = 0; j < e.size(); ++j) s += up[j] * e[j];
    return s;
  };
  const double delta = 1e-6;
  HashGrid moved = g;
  double sq = 0;
  std::map<std::size_t, double> grad;
  for (const auto& [i, v] : b.gradParams) grad[i] += v;
  for (const auto& [i, v] : grad) {
    moved.params().tables[i] += delta * v;
    sq += v * v;
  }
  EXPECT_NEAR(lossOf(moved) - lossOf(g), delta * sq, 1e-9 * std::max(1.0, delta * sq));
}
