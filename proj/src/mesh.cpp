#include "palate/mesh.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "palate/spatial.hpp"

namespace palate {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::filesystem::path sidecar_path(const std::filesystem::path& obj_path) {
  auto p = obj_path;
  p.replace_extension(".lmk");
  return p;
}

// OBJ face token "i", "i/t", "i//n" or "i/t/n"; negative indices are relative.
int parse_face_index(const std::string& token, Index vertex_count, int lineno) {
  const auto slash = token.find('/');
  const std::string head = token.substr(0, slash);
  std::size_t used = 0;
  long value = 0;
  try {
    value = std::stol(head, &used);
  } catch (const std::exception&) {
    throw Error("mesh: malformed face on line " + std::to_string(lineno));
  }
  if (used != head.size() || value == 0)
    throw Error("mesh: malformed face on line " + std::to_string(lineno));
  const long idx = value > 0 ? value - 1 : static_cast<long>(vertex_count) + value;
  return static_cast<int>(idx);
}

}  // namespace

int landmark_slot(std::string_view name) {
  for (int i = 0; i < kLandmarkCount; ++i)
    if (kLandmarkNames[i] == name) return i;
  return -1;
}

void Mesh::validate() const {
  const Index n = vertices.cols();
  if (!vertices.allFinite()) throw Error("mesh: non-finite vertex");
  for (Index f = 0; f < faces.cols(); ++f) {
    for (int c = 0; c < 3; ++c)
      if (faces(c, f) < 0 || faces(c, f) >= n)
        throw Error("mesh: face " + std::to_string(f) + " index out of range");
    if (faces(0, f) == faces(1, f) || faces(1, f) == faces(2, f) || faces(0, f) == faces(2, f))
      throw Error("mesh: face " + std::to_string(f) + " is degenerate");
  }
  for (const auto& [name, idx] : landmark_indices) {
    if (landmark_slot(name) < 0) throw Error("mesh: unknown landmark " + name);
    if (idx < 0 || idx >= n) throw Error("mesh: landmark " + name + " index out of range");
  }
}

Vector3d LandmarkSet::operator[](std::string_view name) const {
  const int slot = landmark_slot(name);
  if (slot < 0) throw Error("landmarks: unknown name " + std::string(name));
  return positions.col(slot);
}

LandmarkSet LandmarkSet::from_entries(const std::vector<std::pair<std::string, Vector3d>>& entries) {
  LandmarkSet set;
  std::array<bool, kLandmarkCount> seen{};
  for (const auto& [name, pos] : entries) {
    const int slot = landmark_slot(name);
    if (slot < 0) throw Error("landmarks: unknown name " + name);
    if (seen[slot]) throw Error("landmarks: duplicate " + name);
    if (!pos.allFinite()) throw Error("landmarks: non-finite position for " + name);
    seen[slot] = true;
    set.positions.col(slot) = pos;
  }
  for (int i = 0; i < kLandmarkCount; ++i)
    if (!seen[i]) throw Error("landmarks: missing " + std::string(kLandmarkNames[i]));
  return set;
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("mesh: not found: " + path.string());
  std::vector<Vector3d> verts;
  std::vector<Eigen::Vector3i> tris;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vector3d p;
      if (!(ss >> p.x() >> p.y() >> p.z()) || !p.allFinite())
        throw Error("mesh: malformed vertex on line " + std::to_string(lineno));
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string token;
      while (ss >> token) poly.push_back(parse_face_index(token, static_cast<Index>(verts.size()), lineno));
      if (poly.size() < 3) throw Error("mesh: face with fewer than 3 vertices on line " + std::to_string(lineno));
      // Polygons are fan-triangulated around their first vertex.
      for (std::size_t i = 1; i + 1 < poly.size(); ++i) tris.emplace_back(poly[0], poly[i], poly[i + 1]);
    }
  }
  Mesh mesh;
  mesh.vertices.resize(3, static_cast<Index>(verts.size()));
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.col(static_cast<Index>(i)) = verts[i];
  mesh.faces.resize(3, static_cast<Index>(tris.size()));
  for (std::size_t i = 0; i < tris.size(); ++i) mesh.faces.col(static_cast<Index>(i)) = tris[i];
  mesh.validate();
  return mesh;
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("mesh: cannot write " + path.string());
  out << std::setprecision(17);
  for (Index v = 0; v < mesh.vertex_count(); ++v)
    out << "v " << mesh.vertices(0, v) << ' ' << mesh.vertices(1, v) << ' ' << mesh.vertices(2, v) << '\n';
  for (Index f = 0; f < mesh.face_count(); ++f)
    out << "f " << mesh.faces(0, f) + 1 << ' ' << mesh.faces(1, f) + 1 << ' ' << mesh.faces(2, f) + 1 << '\n';
}

void save_landmark_indices(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("landmarks: cannot write " + path.string());
  for (const auto name : kLandmarkNames) {
    const auto it = mesh.landmark_indices.find(std::string(name));
    if (it != mesh.landmark_indices.end()) out << name << ' ' << it->second << '\n';
  }
}

std::map<std::string, int> load_landmark_indices(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("landmarks: not found");
  std::map<std::string, int> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    std::string name;
    long idx = -1;
    if (!(ss >> name >> idx) || !(ss >> std::ws).eof())
      throw Error("landmarks: malformed index line " + std::to_string(lineno));
    if (landmark_slot(name) < 0) throw Error("landmarks: unknown name " + name);
    if (out.count(name)) throw Error("landmarks: duplicate " + name);
    out[name] = static_cast<int>(idx);
  }
  return out;
}

Mesh load_mesh_with_landmarks(const std::filesystem::path& obj_path) {
  Mesh mesh = load_mesh(obj_path);
  const auto lmk = sidecar_path(obj_path);
  if (std::filesystem::exists(lmk)) {
    mesh.landmark_indices = load_landmark_indices(lmk);
    mesh.validate();
  }
  return mesh;
}

void save_mesh_with_landmarks(const Mesh& mesh, const std::filesystem::path& obj_path) {
  save_mesh(mesh, obj_path);
  if (!mesh.landmark_indices.empty()) save_landmark_indices(mesh, sidecar_path(obj_path));
}

LandmarkSet parse_landmark_set(const std::string& text) {
  std::vector<std::pair<std::string, Vector3d>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    std::string name;
    Vector3d p;
    if (!(ss >> name >> p.x() >> p.y() >> p.z()) || !(ss >> std::ws).eof())
      throw Error("landmarks: malformed line " + std::to_string(lineno));
    entries.emplace_back(name, p);
  }
  return LandmarkSet::from_entries(entries);
}

std::string format_landmark_set(const LandmarkSet& set) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (int i = 0; i < kLandmarkCount; ++i)
    out << kLandmarkNames[i] << ' ' << set.positions(0, i) << ' ' << set.positions(1, i) << ' '
        << set.positions(2, i) << '\n';
  return out.str();
}

LandmarkSet load_landmark_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("landmarks: not found");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_landmark_set(buffer.str());
}

void save_landmark_set(const LandmarkSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("landmarks: cannot write " + path.string());
  out << format_landmark_set(set);
}

void save_colored_ply(const Mesh& mesh, const VertexColors& colors, const std::filesystem::path& path) {
  if (colors.cols() != mesh.vertex_count()) throw Error("ply: color count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("ply: cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertex_count() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "element face " << mesh.face_count() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  auto put = [&](const auto& value) {
    unsigned char bytes[sizeof(value)];
    std::memcpy(bytes, &value, sizeof(value));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(value));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(value));
  };
  for (Index v = 0; v < mesh.vertex_count(); ++v) {
    for (int c = 0; c < 3; ++c) put(static_cast<float>(mesh.vertices(c, v)));
    for (int c = 0; c < 3; ++c) put(colors(c, v));
  }
  for (Index f = 0; f < mesh.face_count(); ++f) {
    put(static_cast<std::uint8_t>(3));
    for (int c = 0; c < 3; ++c) put(static_cast<std::int32_t>(mesh.faces(c, f)));
  }
}

ClosestPoint closest_point_brute_force(const Vector3d& p, const Mesh& mesh) {
  if (mesh.face_count() == 0) throw Error("mesh: empty face list");
  ClosestPoint best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Index f = 0; f < mesh.face_count(); ++f) {
    const Vector3d foot = closest_point_on_triangle<double>(p, mesh.vertices.col(mesh.faces(0, f)),
                                                            mesh.vertices.col(mesh.faces(1, f)),
                                                            mesh.vertices.col(mesh.faces(2, f)));
    const double d2 = (foot - p).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.point = foot;
    }
  }
  best.distance = std::sqrt(best_d2);
  return best;
}

class MeshDistanceQuery::Impl {
public:
  explicit Impl(const Mesh& mesh) : bvh(mesh.vertices, mesh.faces) {}
  TriangleBvh bvh;
};

MeshDistanceQuery::MeshDistanceQuery(const Mesh& mesh) {
  if (mesh.face_count() == 0) throw Error("mesh: empty face list");
  impl_ = std::make_shared<const Impl>(mesh);
}

ClosestPoint MeshDistanceQuery::closest(const Vector3d& p) const {
  const auto hit = impl_->bvh.closest(p);
  return {hit.point, std::sqrt(hit.squared_distance)};
}

ClosestPoint closest_point_on_mesh(const Vector3d& p, const Mesh& mesh) {
  return MeshDistanceQuery(mesh).closest(p);
}

LandmarkSet landmark_positions(const Mesh& mesh) {
  LandmarkSet set;
  for (int i = 0; i < kLandmarkCount; ++i) {
    const auto it = mesh.landmark_indices.find(std::string(kLandmarkNames[i]));
    if (it == mesh.landmark_indices.end())
      throw Error("landmarks: missing " + std::string(kLandmarkNames[i]));
    if (it->second < 0 || it->second >= mesh.vertex_count())
      throw Error("landmarks: index out of range for " + it->first);
    set.positions.col(i) = mesh.vertices.col(it->second);
  }
  return set;
}

PointCloud sample_surface(const Mesh& mesh, int subdivisions) {
  if (subdivisions < 1) throw Error("sample: subdivisions must be >= 1");
  const int s = subdivisions;
  const Index per_face = static_cast<Index>((s + 1) * (s + 2) / 2);
  PointCloud cloud;
  cloud.points.resize(3, per_face * mesh.face_count());
  Index out = 0;
  for (Index f = 0; f < mesh.face_count(); ++f) {
    const Vector3d a = mesh.vertices.col(mesh.faces(0, f));
    const Vector3d b = mesh.vertices.col(mesh.faces(1, f));
    const Vector3d c = mesh.vertices.col(mesh.faces(2, f));
    for (int i = 0; i <= s; ++i)
      for (int j = 0; j <= s - i; ++j) {
        const double u = static_cast<double>(i) / s, v = static_cast<double>(j) / s;
        cloud.points.col(out++) = (1.0 - u - v) * a + u * b + v * c;
      }
  }
  return cloud;
}

std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh) {
  std::vector<std::set<int>> sets(static_cast<std::size_t>(mesh.vertex_count()));
  for (Index f = 0; f < mesh.face_count(); ++f)
    for (int c = 0; c < 3; ++c) {
      const int a = mesh.faces(c, f), b = mesh.faces((c + 1) % 3, f);
      sets[a].insert(b);
      sets[b].insert(a);
    }
  std::vector<std::vector<int>> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) out[i].assign(sets[i].begin(), sets[i].end());
  return out;
}

double mean_edge_length(const Mesh& mesh) {
  double total = 0.0;
  std::size_t count = 0;
  const auto nbrs = vertex_neighbors(mesh);
  for (std::size_t a = 0; a < nbrs.size(); ++a)
    for (int b : nbrs[a])
      if (static_cast<std::size_t>(b) > a) {
        total += (mesh.vertices.col(static_cast<Index>(a)) - mesh.vertices.col(b)).norm();
        ++count;
      }
  return count ? total / static_cast<double>(count) : 0.0;
}

Mesh with_vertices(const Mesh& mesh, const Matrix3Xd& vertices) {
  if (vertices.cols() != mesh.vertex_count()) throw Error("mesh: vertex count mismatch");
  Mesh out;
  out.vertices = vertices;
  out.faces = mesh.faces;
  out.landmark_indices = mesh.landmark_indices;
  return out;
}

}  // namespace palate
