#pragma once

#include "genie/scene.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace genie {

class EditError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Sorted, unique Gaussian indices valid for the epoch they were resolved at.
struct Selection {
  std::vector<std::uint32_t> indices;

  static Selection all(const GaussianSet& set);
  /// Sorts and dedups; throws EditError naming the first out-of-range index.
  static Selection of(std::vector<std::uint32_t> indices, const GaussianSet& set);
  static Selection sphere(const GaussianSet& set, const Vec3& center, double radius);
  static Selection box(const GaussianSet& set, const Vec3& lo, const Vec3& hi);
};

/// Maps selected means through the affine `transform` and adds
/// 2 ln |column a of the linear part| to logScale[a]. Rotations therefore
/// leave the (axis-aligned) covariance alone. One epoch bump, even for an
/// empty selection. Throws EditError for singular or non-affine transforms
/// and for sets with unbaked Gaussians.
void apply_transform(GaussianSet& set, const Selection& selection, const Mat4& transform);

Mat4 translation(const Vec3& t);
/// Rotation by `angle` radians about `axis` through `center`.
Mat4 rotation_about(const Vec3& axis, double angle, const Vec3& center = Vec3::Zero());
Mat4 scaling_about(const Vec3& factors, const Vec3& center = Vec3::Zero());

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
  /// Optional deformation sequence; frames[0] is normally the rest pose.
  std::vector<std::vector<Vec3>> frames;

  /// Throws EditError on out-of-range faces or mismatched frame sizes.
  void validate() const;
};

/// One triangle per Gaussian, centroid at the mean, edges from the first
/// vertex of length 2 q sqrt(variance) along the two largest-variance axes
/// (ties broken by axis order).
TriMesh export_triangle_soup(const GaussianSet& set, double q);

struct MeshBinding {
  struct Entry {
    std::uint32_t triangle = 0;
    /// Barycentric coordinates of the closest point on the triangle.
    Vec3 barycentric = Vec3::Zero();
    /// Signed distance along the face normal divided by sqrt(area).
    double normalOffset = 0.0;
    /// In-plane remainder (points whose normal projection falls outside the
    /// triangle) in units of the two rest edges.
    std::array<double, 2> tangentOffset{};
    /// Rest-pose edges v1 - v0 and v2 - v0.
    std::array<Vec3, 2> restEdgeFrame{};
    Vec3 restLogScale = Vec3::Zero();
  };
  std::vector<Entry> entries;
};

/// Nearest triangle per Gaussian against the mesh rest pose (`vertices`).
MeshBinding bind_to_mesh(const GaussianSet& set, const TriMesh& mesh);

struct DeformReport {
  /// Gaussians left at their previous pose because their triangle collapsed.
  std::vector<std::uint32_t> frozen;
  std::vector<std::string> warnings;
};

/// Moves every bound Gaussian with its triangle in `mesh.frames[frame]` and
/// stretches its tangent-axis variances by the in-plane edge ratios. One
/// epoch bump.
DeformReport deform_from_mesh(GaussianSet& set, const MeshBinding& binding, const TriMesh& mesh,
                              std::size_t frame);

/// Closest point on triangle (a, b, c) to p, returned as barycentric weights.
Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

TriMesh read_obj(const std::string& path);
void write_obj(const std::string& path, const TriMesh& mesh, std::size_t frame = SIZE_MAX);

/// Loads `<dir>/frame_0000.obj`, `frame_0001.obj`, ... until the first gap.
/// Frame 0 becomes the rest pose. A plain .obj path loads a single frame.
TriMesh load_mesh_sequence(const std::string& path);

}  // namespace genie
