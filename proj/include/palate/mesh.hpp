#ifndef PALATE_MESH_HPP
#define PALATE_MESH_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "palate/common.hpp"
#include "palate/volume.hpp"

namespace palate {

inline constexpr int kLandmarkCount = 7;

/// Canonical landmark order: three along the mid-sagittal line, then the
/// lateral pairs anchored at the boundary and apex landmarks.
inline constexpr std::array<std::string_view, kLandmarkCount> kLandmarkNames = {
    "incisor",        "midline_boundary", "midline_apex", "left_boundary",
    "right_boundary", "left_apex",        "right_apex"};

/// Position of `name` in kLandmarkNames, or -1.
int landmark_slot(std::string_view name);

/// Triangle mesh. Vertices are columns of a 3xN matrix, so the flattened
/// vertex buffer is (x1, y1, z1, x2, ...).
struct Mesh {
  Matrix3Xd vertices;
  Matrix3Xi faces;
  std::map<std::string, int> landmark_indices;

  Index vertex_count() const { return vertices.cols(); }
  Index face_count() const { return faces.cols(); }

  /// Throws on out-of-range or repeated face indices and unknown landmark names.
  void validate() const;
};

/// The seven named landmark positions in canonical order (column i is
/// kLandmarkNames[i]).
struct LandmarkSet {
  Eigen::Matrix<double, 3, kLandmarkCount> positions = Eigen::Matrix<double, 3, kLandmarkCount>::Zero();

  Vector3d operator[](std::string_view name) const;

  /// Builds a set from named entries; requires exactly the seven canonical
  /// names, each once.
  static LandmarkSet from_entries(const std::vector<std::pair<std::string, Vector3d>>& entries);
};

struct ClosestPoint {
  Vector3d point = Vector3d::Zero();
  double distance = 0.0;
};

Mesh load_mesh(const std::filesystem::path& path);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);

/// `<stem>.lmk` sidecar with `name index` lines.
void save_landmark_indices(const Mesh& mesh, const std::filesystem::path& path);
std::map<std::string, int> load_landmark_indices(const std::filesystem::path& path);
/// Loads an OBJ and, if present, its `<stem>.lmk` index sidecar.
Mesh load_mesh_with_landmarks(const std::filesystem::path& obj_path);
/// Writes the OBJ plus its `<stem>.lmk` index sidecar when landmarks are set.
void save_mesh_with_landmarks(const Mesh& mesh, const std::filesystem::path& obj_path);

/// World-coordinate landmark files: 7 lines `name x y z`.
LandmarkSet parse_landmark_set(const std::string& text);
std::string format_landmark_set(const LandmarkSet& set);
LandmarkSet load_landmark_set(const std::filesystem::path& path);
void save_landmark_set(const LandmarkSet& set, const std::filesystem::path& path);

/// Binary little-endian PLY with per-vertex uchar RGB.
using VertexColors = Eigen::Matrix<std::uint8_t, 3, Eigen::Dynamic>;
void save_colored_ply(const Mesh& mesh, const VertexColors& colors,
                      const std::filesystem::path& path);

/// Globally nearest surface point by exhaustive scan over all faces.
ClosestPoint closest_point_brute_force(const Vector3d& p, const Mesh& mesh);

/// Reusable closest-point query structure; answers match the brute-force scan.
class MeshDistanceQuery {
public:
  explicit MeshDistanceQuery(const Mesh& mesh);
  ClosestPoint closest(const Vector3d& p) const;

private:
  class Impl;
  std::shared_ptr<const Impl> impl_;
};

ClosestPoint closest_point_on_mesh(const Vector3d& p, const Mesh& mesh);

LandmarkSet landmark_positions(const Mesh& mesh);

/// Barycentric grid samples of every face with `subdivisions` segments per
/// edge. Points on shared edges appear once per adjacent face.
PointCloud sample_surface(const Mesh& mesh, int subdivisions);

/// Vertex neighbour lists derived from face edges, sorted ascending.
std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh);

double mean_edge_length(const Mesh& mesh);

/// Copy of `mesh` (faces, landmarks) with its vertex positions replaced.
Mesh with_vertices(const Mesh& mesh, const Matrix3Xd& vertices);

}  // namespace palate

#endif  // PALATE_MESH_HPP
