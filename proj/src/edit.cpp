#include "genie/edit.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace genie {

namespace fs = std::filesystem;

Selection Selection::all(const GaussianSet& set) {
  Selection s;
  s.indices.resize(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) s.indices[i] = static_cast<std::uint32_t>(i);
  return s;
}

Selection Selection::of(std::vector<std::uint32_t> indices, const GaussianSet& set) {
  for (std::uint32_t i : indices) {
    if (i >= set.size()) {
      throw EditError("selection index " + std::to_string(i) + " out of range (" +
                      std::to_string(set.size()) + " Gaussians)");
    }
  }
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  return Selection{std::move(indices)};
}

Selection Selection::sphere(const GaussianSet& set, const Vec3& center, double radius) {
  Selection s;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if ((set[i].mean - center).squaredNorm() <= radius * radius) {
      s.indices.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return s;
}

Selection Selection::box(const GaussianSet& set, const Vec3& lo, const Vec3& hi) {
  Selection s;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Vec3& m = set[i].mean;
    if ((m.array() >= lo.array()).all() && (m.array() <= hi.array()).all()) {
      s.indices.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return s;
}

void apply_transform(GaussianSet& set, const Selection& selection, const Mat4& transform) {
  if (!transform.allFinite()) throw EditError("transform has non-finite entries");
  if (transform.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) {
    throw EditError("transform is not affine (last row must be 0 0 0 1)");
  }
  const Mat3 linear = transform.block<3, 3>(0, 0);
  if (std::abs(linear.determinant()) < 1e-12) throw EditError("transform is singular");
  for (const Gaussian& g : set.gaussians()) {
    if (!g.baked) throw EditError("edits require baked features; bake the scene first");
  }
  for (std::uint32_t i : selection.indices) {
    if (i >= set.size()) throw EditError("selection index " + std::to_string(i) + " out of range");
  }
  const Vec3 t = transform.block<3, 1>(0, 3);
  Vec3 logStretch;
  for (int a = 0; a < 3; ++a) logStretch[a] = 2.0 * std::log(linear.col(a).norm());
  set.mutate([&](std::vector<Gaussian>& gs) {
    for (std::uint32_t i : selection.indices) {
      gs[i].mean = linear * gs[i].mean + t;
      gs[i].logScale += logStretch;
    }
  });
}

Mat4 translation(const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.block<3, 1>(0, 3) = t;
  return m;
}

Mat4 rotation_about(const Vec3& axis, double angle, const Vec3& center) {
  if (!(axis.norm() > 0.0)) throw EditError("rotation axis must be non-zero");
  Mat4 m = Mat4::Identity();
  const Mat3 r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  m.block<3, 3>(0, 0) = r;
  m.block<3, 1>(0, 3) = center - r * center;
  return m;
}

Mat4 scaling_about(const Vec3& factors, const Vec3& center) {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = factors.asDiagonal();
  m.block<3, 1>(0, 3) = center - factors.cwiseProduct(center);
  return m;
}

void TriMesh::validate() const {
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (std::uint32_t v : faces[f]) {
      if (v >= vertices.size()) {
        throw EditError("mesh face " + std::to_string(f) + " references vertex " +
                        std::to_string(v) + " of " + std::to_string(vertices.size()));
      }
    }
  }
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (frames[k].size() != vertices.size()) {
      throw EditError("mesh frame " + std::to_string(k) + " has " +
                      std::to_string(frames[k].size()) + " vertices, expected " +
                      std::to_string(vertices.size()));
    }
  }
}

TriMesh export_triangle_soup(const GaussianSet& set, double q) {
  if (!(q > 0.0)) throw EditError("triangle soup: q must be positive");
  TriMesh mesh;
  mesh.vertices.reserve(set.size() * 3);
  mesh.faces.reserve(set.size());
  for (const Gaussian& g : set.gaussians()) {
    const Vec3 var = g.variance();
    std::array<int, 3> axes{0, 1, 2};
    std::stable_sort(axes.begin(), axes.end(), [&](int a, int b) { return var[a] > var[b]; });
    const Vec3 e1 = 2.0 * q * std::sqrt(var[axes[0]]) * Vec3::Unit(axes[0]);
    const Vec3 e2 = 2.0 * q * std::sqrt(var[axes[1]]) * Vec3::Unit(axes[1]);
    const Vec3 v0 = g.mean - (e1 + e2) / 3.0;
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(v0);
    mesh.vertices.push_back(v0 + e1);
    mesh.vertices.push_back(v0 + e2);
    mesh.faces.push_back({base, base + 1, base + 2});
  }
  return mesh;
}

Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk over vertices, edges and face.
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return {1, 0, 0};
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return {0, 1, 0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return {0, 0, 1};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return {1.0 - v - w, v, w};
}

namespace {

struct Frame {
  Vec3 v0, e1, e2, normal;
  double area;
};

Frame triangleFrame(const std::vector<Vec3>& verts, const std::array<std::uint32_t, 3>& f) {
  Frame fr;
  fr.v0 = verts[f[0]];
  fr.e1 = verts[f[1]] - fr.v0;
  fr.e2 = verts[f[2]] - fr.v0;
  const Vec3 n = fr.e1.cross(fr.e2);
  fr.area = 0.5 * n.norm();
  fr.normal = fr.area > 0.0 ? Vec3(n.normalized()) : Vec3(Vec3::Zero());
  return fr;
}

/// Coefficients (s, t) with v = s e1 + t e2 for v in the triangle plane.
std::array<double, 2> inPlaneCoords(const Vec3& v, const Vec3& e1, const Vec3& e2) {
  const double a = e1.dot(e1);
  const double b = e1.dot(e2);
  const double c = e2.dot(e2);
  const double det = a * c - b * b;
  if (det == 0.0) return {0.0, 0.0};
  const double r1 = e1.dot(v);
  const double r2 = e2.dot(v);
  return {(c * r1 - b * r2) / det, (a * r2 - b * r1) / det};
}

}  // namespace

MeshBinding bind_to_mesh(const GaussianSet& set, const TriMesh& mesh) {
  mesh.validate();
  if (mesh.faces.empty()) throw EditError("cannot bind to an empty mesh");
  std::vector<Frame> frames;
  frames.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) frames.push_back(triangleFrame(mesh.vertices, f));

  MeshBinding binding;
  binding.entries.resize(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Vec3& x = set[i].mean;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bestFace = 0;
    Vec3 bestBary = Vec3::Zero();
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      if (frames[f].area < 1e-12) continue;
      const auto& face = mesh.faces[f];
      const Vec3 bary = closest_point_barycentric(x, mesh.vertices[face[0]],
                                                  mesh.vertices[face[1]], mesh.vertices[face[2]]);
      const Vec3 p = bary[0] * mesh.vertices[face[0]] + bary[1] * mesh.vertices[face[1]] +
                     bary[2] * mesh.vertices[face[2]];
      const double d = (x - p).squaredNorm();
      if (d < best) {
        best = d;
        bestFace = f;
        bestBary = bary;
      }
    }
    if (!std::isfinite(best)) throw EditError("mesh has no non-degenerate triangle");
    const Frame& fr = frames[bestFace];
    const Vec3 p = fr.v0 + bestBary[1] * fr.e1 + bestBary[2] * fr.e2;
    const Vec3 d = x - p;
    const double along = d.dot(fr.normal);
    MeshBinding::Entry& e = binding.entries[i];
    e.triangle = static_cast<std::uint32_t>(bestFace);
    e.barycentric = bestBary;
    e.normalOffset = along / std::sqrt(fr.area);
    e.tangentOffset = inPlaneCoords(d - along * fr.normal, fr.e1, fr.e2);
    e.restEdgeFrame = {fr.e1, fr.e2};
    e.restLogScale = set[i].logScale;
  }
  return binding;
}

DeformReport deform_from_mesh(GaussianSet& set, const MeshBinding& binding, const TriMesh& mesh,
                              std::size_t frame) {
  mesh.validate();
  if (frame >= mesh.frames.size()) {
    throw EditError("deform frame " + std::to_string(frame) + " beyond sequence length " +
                    std::to_string(mesh.frames.size()));
  }
  if (binding.entries.size() != set.size()) {
    throw EditError("binding covers " + std::to_string(binding.entries.size()) +
                    " Gaussians, scene has " + std::to_string(set.size()));
  }
  const std::vector<Vec3>& verts = mesh.frames[frame];
  DeformReport report;
  set.mutate([&](std::vector<Gaussian>& gs) {
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const MeshBinding::Entry& e = binding.entries[i];
      if (e.triangle >= mesh.faces.size()) {
        throw EditError("binding references triangle " + std::to_string(e.triangle) +
                        " beyond the mesh");
      }
      const Frame fr = triangleFrame(verts, mesh.faces[e.triangle]);
      if (fr.area < 1e-12) {
        report.frozen.push_back(static_cast<std::uint32_t>(i));
        report.warnings.push_back("Gaussian " + std::to_string(i) + " frozen: triangle " +
                                  std::to_string(e.triangle) + " degenerate in frame " +
                                  std::to_string(frame));
        continue;
      }
      Gaussian& g = gs[i];
      g.mean = fr.v0 + e.barycentric[1] * fr.e1 + e.barycentric[2] * fr.e2 +
               e.normalOffset * std::sqrt(fr.area) * fr.normal + e.tangentOffset[0] * fr.e1 +
               e.tangentOffset[1] * fr.e2;

      // Tangent world axes are the two away from the rest normal's dominant
      // axis; each is stretched by how much the in-plane map lengthens its
      // projection onto the rest plane.
      const Vec3& r1 = e.restEdgeFrame[0];
      const Vec3& r2 = e.restEdgeFrame[1];
      const Vec3 restNormal = r1.cross(r2).normalized();
      int normalAxis = 0;
      restNormal.cwiseAbs().maxCoeff(&normalAxis);
      g.logScale = e.restLogScale;
      for (int a = 0; a < 3; ++a) {
        if (a == normalAxis) continue;
        const Vec3 u = Vec3::Unit(a) - restNormal[a] * restNormal;
        const double len = u.norm();
        if (len < 1e-12) continue;
        const auto st = inPlaneCoords(u, r1, r2);
        const double stretched = (st[0] * fr.e1 + st[1] * fr.e2).norm();
        g.logScale[a] += 2.0 * std::log(stretched / len);
      }
    }
  });
  return report;
}

TriMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EditError("cannot open mesh '" + path + "'");
  TriMesh mesh;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v[0] >> v[1] >> v[2])) {
        throw EditError(path + ":" + std::to_string(lineNo) + ": malformed vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ss >> tok) {
        const long raw = std::stol(tok.substr(0, tok.find('/')));
        const long resolved = raw < 0 ? static_cast<long>(mesh.vertices.size()) + raw : raw - 1;
        if (raw == 0 || resolved < 0) {
          throw EditError(path + ":" + std::to_string(lineNo) + ": bad face index " + tok);
        }
        idx.push_back(static_cast<std::uint32_t>(resolved));
      }
      if (idx.size() < 3) throw EditError(path + ":" + std::to_string(lineNo) + ": face needs 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  mesh.validate();
  return mesh;
}

void write_obj(const std::string& path, const TriMesh& mesh, std::size_t frame) {
  std::ofstream out(path);
  if (!out) throw EditError("cannot write mesh '" + path + "'");
  const std::vector<Vec3>& verts = frame == SIZE_MAX ? mesh.vertices : mesh.frames.at(frame);
  out << std::setprecision(17);
  for (const Vec3& v : verts) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

TriMesh load_mesh_sequence(const std::string& path) {
  if (!fs::is_directory(path)) {
    TriMesh mesh = read_obj(path);
    mesh.frames = {mesh.vertices};
    return mesh;
  }
  TriMesh mesh;
  for (int k = 0;; ++k) {
    std::ostringstream name;
    name << "frame_" << std::setw(4) << std::setfill('0') << k << ".obj";
    const fs::path file = fs::path(path) / name.str();
    if (!fs::exists(file)) break;
    TriMesh frame = read_obj(file.string());
    if (k == 0) {
      mesh.vertices = frame.vertices;
      mesh.faces = frame.faces;
    } else if (frame.faces != mesh.faces) {
      throw EditError(file.string() + ": topology differs from frame 0");
    }
    mesh.frames.push_back(std::move(frame.vertices));
  }
  if (mesh.frames.empty()) throw EditError("no frame_0000.obj in '" + path + "'");
  mesh.validate();
  return mesh;
}

}  // namespace genie
