#include "support/fixtures.hpp"

#include "genie/edit.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

using namespace genie;
using genie::testing::random_scene;
using genie::testing::same_bits;
using genie::testing::SceneSpec;

namespace {

GaussianSet bakedScene(std::size_t n, std::uint64_t seed) {
  SceneSpec spec;
  spec.n = n;
  spec.featureDim = 3;
  return random_scene(spec, seed);
}

Gaussian isoBaked(const Vec3& mean, double variance) {
  Gaussian g;
  g.mean = mean;
  g.logScale = Vec3::Constant(std::log(variance));
  g.feature = {0.1, 0.2, 0.3};
  g.baked = true;
  g.confidence = 0.7;
  return g;
}

TriMesh singleTriangle() {
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  m.faces = {{0, 1, 2}};
  m.frames = {m.vertices};
  return m;
}

std::filesystem::path scratchDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "genie_edit_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(ApplyTransform, IdentityOnlyBumpsEpoch) {
  GaussianSet set = bakedScene(20, 1);
  const GaussianSet before = set;
  apply_transform(set, Selection::all(set), Mat4::Identity());
  EXPECT_EQ(set.epoch(), before.epoch() + 1);
  EXPECT_TRUE(same_bits(set, before));
  apply_transform(set, Selection{}, translation(Vec3(1, 2, 3)));
  EXPECT_EQ(set.epoch(), before.epoch() + 2);
  EXPECT_TRUE(same_bits(set, before));
}

TEST(ApplyTransform, UniformScaleLaw) {
  GaussianSet set = bakedScene(20, 2);
  const GaussianSet before = set;
  apply_transform(set, Selection::all(set), scaling_about(Vec3::Constant(2.0)));
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR((set[i].mean - 2.0 * before[i].mean).norm(), 0.0, 1e-15);
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(set[i].variance()[a] / before[i].variance()[a], 4.0, 1e-12);
    EXPECT_EQ(set[i].feature, before[i].feature);
    EXPECT_EQ(set[i].confidence, before[i].confidence);
  }
}

TEST(ApplyTransform, SelectionOnlyMovesSelected) {
  GaussianSet set = bakedScene(10, 3);
  const GaussianSet before = set;
  apply_transform(set, Selection::of({7, 2, 2}, set), translation(Vec3(0.5, 0, 0)));
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool moved = i == 2 || i == 7;
    EXPECT_EQ(set[i].mean, moved ? Vec3(before[i].mean + Vec3(0.5, 0, 0)) : before[i].mean);
  }
}

TEST(ApplyTransform, RotationKeepsDistancesAndCovariance) {
  GaussianSet set = bakedScene(30, 4);
  const GaussianSet before = set;
  const Vec3 c(0.1, -0.2, 0.3);
  apply_transform(set, Selection::all(set), rotation_about(Vec3(1, 1, 0), 0.8, c));
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR((set[i].mean - c).norm(), (before[i].mean - c).norm(), 1e-12);
    EXPECT_NEAR((set[i].logScale - before[i].logScale).norm(), 0.0, 1e-12);
  }
}

TEST(ApplyTransform, CompositionMatchesSequence) {
  GaussianSet a = bakedScene(25, 5);
  GaussianSet b = a;
  const Mat4 s = scaling_about(Vec3(1.5, 0.5, 2.0), Vec3(0.1, 0, 0));
  const Mat4 t = translation(Vec3(-0.3, 0.2, 0.9));
  apply_transform(a, Selection::all(a), s);
  apply_transform(a, Selection::all(a), t);
  apply_transform(b, Selection::all(b), t * s);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR((a[i].mean - b[i].mean).norm(), 0.0, 1e-12);
    EXPECT_NEAR((a[i].logScale - b[i].logScale).norm(), 0.0, 1e-12);
  }
}

TEST(ApplyTransform, Rejections) {
  GaussianSet set = bakedScene(5, 6);
  Mat4 singular = Mat4::Identity();
  singular(2, 2) = 0;
  EXPECT_THROW(apply_transform(set, Selection::all(set), singular), EditError);
  Mat4 projective = Mat4::Identity();
  projective(3, 0) = 0.5;
  EXPECT_THROW(apply_transform(set, Selection::all(set), projective), EditError);
  set.mutate([](std::vector<Gaussian>& gs) { gs[1].baked = false; });
  EXPECT_THROW(apply_transform(set, Selection::all(set), Mat4::Identity()), EditError);
  EXPECT_THROW(Selection::of({5}, set), EditError);
}

TEST(Selection, SphereAndBox) {
  GaussianSet set({isoBaked(Vec3(0, 0, 0), 0.01), isoBaked(Vec3(1, 0, 0), 0.01),
                   isoBaked(Vec3(0, 2, 0), 0.01)});
  EXPECT_EQ(Selection::sphere(set, Vec3(0.1, 0, 0), 1.0).indices, (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(Selection::box(set, Vec3(-1, 1, -1), Vec3(1, 3, 1)).indices, (std::vector<std::uint32_t>{2}));
  EXPECT_EQ(Selection::all(set).indices, (std::vector<std::uint32_t>{0, 1, 2}));
}

TEST(TriangleSoup, StructureAndHalfLengths) {
  GaussianSet set = bakedScene(7, 7);
  set.mutate([](std::vector<Gaussian>& gs) { gs[0] = isoBaked(Vec3(0.2, 0.3, 0.4), 0.01); });
  const TriMesh soup = export_triangle_soup(set, 1.0);
  ASSERT_EQ(soup.faces.size(), 7u);
  ASSERT_EQ(soup.vertices.size(), 21u);
  for (std::size_t f = 0; f < 7; ++f) {
    const auto& face = soup.faces[f];
    const Vec3 centroid =
        (soup.vertices[face[0]] + soup.vertices[face[1]] + soup.vertices[face[2]]) / 3.0;
    EXPECT_NEAR((centroid - set[f].mean).norm(), 0.0, 1e-12);
  }
  // isotropic variance 0.01, q = 1: edges of 0.2 along x and y
  const Vec3 e1 = soup.vertices[1] - soup.vertices[0];
  const Vec3 e2 = soup.vertices[2] - soup.vertices[0];
  EXPECT_NEAR((e1 / 2 - Vec3(0.1, 0, 0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((e2 / 2 - Vec3(0, 0.1, 0)).norm(), 0.0, 1e-15);
  EXPECT_THROW(export_triangle_soup(set, 0.0), EditError);
}

TEST(TriangleSoup, BindingAndRestDeformReproduceMeans) {
  GaussianSet set = bakedScene(40, 8);
  const TriMesh soup = export_triangle_soup(set, 2.0);
  const MeshBinding binding = bind_to_mesh(set, soup);
  ASSERT_EQ(binding.entries.size(), set.size());
  TriMesh mesh = soup;
  mesh.frames = {soup.vertices};
  GaussianSet moved = set;
  const DeformReport r = deform_from_mesh(moved, binding, mesh, 0);
  EXPECT_TRUE(r.frozen.empty());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR((moved[i].mean - set[i].mean).norm(), 0.0, 1e-12);
    EXPECT_NEAR((moved[i].logScale - set[i].logScale).norm(), 0.0, 1e-12);
  }
}

TEST(BindToMesh, CentroidAndNormalSide) {
  const TriMesh m = singleTriangle();
  GaussianSet set({isoBaked(Vec3(1.0 / 3, 1.0 / 3, 0), 0.01), isoBaked(Vec3(0.2, 0.2, 0.3), 0.01),
                   isoBaked(Vec3(0.2, 0.2, -0.3), 0.01)});
  const MeshBinding b = bind_to_mesh(set, m);
  EXPECT_NEAR((b.entries[0].barycentric - Vec3::Constant(1.0 / 3)).norm(), 0.0, 1e-12);
  EXPECT_NEAR(b.entries[0].normalOffset, 0.0, 1e-15);
  // face normal (v1 - v0) x (v2 - v0) is +z
  EXPECT_GT(b.entries[1].normalOffset, 0.0);
  EXPECT_LT(b.entries[2].normalOffset, 0.0);
  EXPECT_THROW(bind_to_mesh(set, TriMesh{}), EditError);
}

TEST(ClosestPoint, MatchesBruteForceOverTriangle) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 2);
  const Vec3 a(0, 0, 0), b(1, 0.2, 0), c(0.1, 1, 0.3);
  for (int t = 0; t < 200; ++t) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const Vec3 w = closest_point_barycentric(p, a, b, c);
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_GE(w.minCoeff(), -1e-12);
    const double got = (w[0] * a + w[1] * b + w[2] * c - p).norm();
    double best = INFINITY;
    for (int i = 0; i <= 200; ++i)
      for (int j = 0; i + j <= 200; ++j) {
        const double s = i / 200.0, r = j / 200.0;
        best = std::min(best, ((1 - s - r) * a + s * b + r * c - p).norm());
      }
    EXPECT_LE(got, best + 1e-12);
  }
}

TEST(DeformFromMesh, TranslatedAndScaledFrames) {
  TriMesh m = singleTriangle();
  const Vec3 t(0.5, -1.0, 2.0);
  std::vector<Vec3> shifted, scaled;
  for (const Vec3& v : m.vertices) {
    shifted.push_back(v + t);
    scaled.push_back(2.0 * v);
  }
  m.frames = {m.vertices, shifted, scaled};
  GaussianSet set({isoBaked(Vec3(0.2, 0.3, 0.0), 0.01), isoBaked(Vec3(0.4, 0.1, 0.05), 0.02)});
  const MeshBinding b = bind_to_mesh(set, m);

  GaussianSet a = set;
  deform_from_mesh(a, b, m, 1);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR((a[i].mean - (set[i].mean + t)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((a[i].logScale - set[i].logScale).norm(), 0.0, 1e-12);
  }
  GaussianSet s = set;
  deform_from_mesh(s, b, m, 2);
  // in-plane offsets double; tangent variances (x, y) quadruple, normal (z) stays
  EXPECT_NEAR((s[0].mean - 2.0 * set[0].mean).norm(), 0.0, 1e-12);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR(s[i].variance()[0] / set[i].variance()[0], 4.0, 1e-12);
    EXPECT_NEAR(s[i].variance()[1] / set[i].variance()[1], 4.0, 1e-12);
    EXPECT_NEAR(s[i].variance()[2] / set[i].variance()[2], 1.0, 1e-12);
  }
  EXPECT_THROW(deform_from_mesh(s, b, m, 3), EditError);
}

TEST(DeformFromMesh, DegenerateTriangleFreezesWithWarning) {
  TriMesh m = singleTriangle();
  m.frames.push_back({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)});
  GaussianSet set({isoBaked(Vec3(0.2, 0.3, 0.0), 0.01)});
  const MeshBinding b = bind_to_mesh(set, m);
  GaussianSet out = set;
  const DeformReport r = deform_from_mesh(out, b, m, 1);
  EXPECT_EQ(r.frozen, std::vector<std::uint32_t>{0});
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("degenerate"), std::string::npos);
  EXPECT_EQ(out[0].mean, set[0].mean);
  EXPECT_EQ(out.epoch(), set.epoch() + 1);
}

// Deformation preserves everything except geometry and is frame-deterministic.
TEST(DeformProperty, OnlyGeometryChangesAndRerunsAgree) {
  GaussianSet set = bakedScene(30, 10);
  TriMesh soup = export_triangle_soup(set, 2.0);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 0.05);
  std::vector<Vec3> wobble = soup.vertices;
  for (Vec3& v : wobble) v += Vec3(n(rng), n(rng), n(rng));
  soup.frames = {soup.vertices, wobble};
  const MeshBinding b = bind_to_mesh(set, soup);
  GaussianSet x = set, y = set;
  deform_from_mesh(x, b, soup, 1);
  deform_from_mesh(y, b, soup, 1);
  EXPECT_TRUE(same_bits(x, y));
  ASSERT_EQ(x.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(x[i].feature, set[i].feature);
    EXPECT_EQ(x[i].confidence, set[i].confidence);
    EXPECT_TRUE(x[i].logScale.allFinite());
  }
}

TEST(Obj, RoundTripAndSequence) {
  const auto dir = scratchDir("obj");
  TriMesh m = singleTriangle();
  m.vertices.push_back(Vec3(0.125, 0.5, -3));
  m.faces.push_back({1, 3, 2});
  write_obj((dir / "mesh.obj").string(), m);
  const TriMesh back = read_obj((dir / "mesh.obj").string());
  EXPECT_EQ(back.vertices, m.vertices);
  EXPECT_EQ(back.faces, m.faces);

  for (int f = 0; f < 3; ++f) {
    TriMesh frame = m;
    for (Vec3& v : frame.vertices) v.z() += f;
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.obj", f);
    write_obj((dir / name).string(), frame);
  }
  const TriMesh seq = load_mesh_sequence(dir.string());
  ASSERT_EQ(seq.frames.size(), 3u);
  EXPECT_EQ(seq.vertices, seq.frames[0]);
  EXPECT_EQ(seq.frames[2][3], Vec3(0.125, 0.5, -1));
  EXPECT_THROW(read_obj((dir / "missing.obj").string()), EditError);
}

TEST(Obj, MalformedFaceRejected) {
  const auto dir = scratchDir("bad");
  const auto path = (dir / "bad.obj").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", f);
    std::fclose(f);
  }
  EXPECT_THROW(read_obj(path), EditError);
}
