#include "palate/volume.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace palate {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::map<std::string, std::string> read_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("volume: not found: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("volume: malformed header line " + std::to_string(lineno));
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

template <typename T>
T header_value(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw Error("volume: missing header key " + key);
  std::istringstream ss(it->second);
  T value{};
  ss >> value;
  if (!ss || !(ss >> std::ws).eof()) throw Error("volume: bad value for " + key);
  return value;
}

std::size_t voxel_count(const Dims& dims) {
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
         static_cast<std::size_t>(dims[2]);
}

}  // namespace

Volume::Volume(const Dims& dims_, const Vector3d& spacing_, const Vector3d& origin_,
               std::uint8_t fill)
    : dims(dims_), spacing(spacing_), origin(origin_) {
  for (int d : dims)
    if (d < 1) throw Error("volume: dims must be >= 1");
  voxels.assign(voxel_count(dims), fill);
  validate();
}

void Volume::validate() const {
  for (int d : dims)
    if (d < 1) throw Error("volume: dims must be >= 1");
  for (int a = 0; a < 3; ++a)
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw Error("volume: non-positive spacing");
  if (!origin.allFinite()) throw Error("volume: non-finite origin");
  if (voxels.size() != voxel_count(dims)) throw Error("volume: data length mismatch");
}

std::size_t TissueMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
}

SliceAxis parse_slice_axis(const std::string& name) {
  if (name == "sagittal") return SliceAxis::Sagittal;
  if (name == "coronal") return SliceAxis::Coronal;
  if (name == "axial") return SliceAxis::Axial;
  throw Error("slice: unknown axis " + name);
}

const char* to_string(SliceAxis axis) {
  switch (axis) {
    case SliceAxis::Sagittal: return "sagittal";
    case SliceAxis::Coronal: return "coronal";
    case SliceAxis::Axial: return "axial";
  }
  return "?";
}

Volume load_volume(const std::filesystem::path& header_path, VolumeLoadStats* stats) {
  const auto kv = read_header(header_path);

  Volume v;
  v.dims = {header_value<int>(kv, "dim_x"), header_value<int>(kv, "dim_y"),
            header_value<int>(kv, "dim_z")};
  v.spacing = {header_value<double>(kv, "spacing_x"), header_value<double>(kv, "spacing_y"),
               header_value<double>(kv, "spacing_z")};
  v.origin = {header_value<double>(kv, "origin_x"), header_value<double>(kv, "origin_y"),
              header_value<double>(kv, "origin_z")};
  const auto dtype = header_value<std::string>(kv, "dtype");
  for (int d : v.dims)
    if (d < 1) throw Error("volume: dims must be >= 1");
  for (int a = 0; a < 3; ++a)
    if (!(v.spacing[a] > 0.0)) throw Error("volume: non-positive spacing");

  std::size_t bytes_per_voxel = 0;
  if (dtype == "u8")
    bytes_per_voxel = 1;
  else if (dtype == "i16le")
    bytes_per_voxel = 2;
  else
    throw Error("volume: unknown dtype " + dtype);

  auto data_path = header_path;
  data_path.replace_extension(".rvd");
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw Error("volume: not found: " + data_path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  const std::size_t n = voxel_count(v.dims);
  if (raw.size() != n * bytes_per_voxel) throw Error("volume: data length mismatch");

  std::size_t clamped = 0;
  v.voxels.resize(n);
  if (bytes_per_voxel == 1) {
    std::copy(raw.begin(), raw.end(), v.voxels.begin());
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto value = static_cast<std::int16_t>(
          static_cast<std::uint16_t>(raw[2 * i]) | (static_cast<std::uint16_t>(raw[2 * i + 1]) << 8));
      if (value < 0 || value > 255) ++clamped;
      v.voxels[i] = static_cast<std::uint8_t>(std::clamp<int>(value, 0, 255));
    }
  }
  if (stats) stats->clamped = clamped;
  v.validate();
  return v;
}

void save_volume(const Volume& volume, const std::filesystem::path& header_path) {
  volume.validate();
  {
    std::ofstream out(header_path);
    if (!out) throw Error("volume: cannot write " + header_path.string());
    out << std::setprecision(17);
    out << "dim_x=" << volume.dims[0] << "\ndim_y=" << volume.dims[1]
        << "\ndim_z=" << volume.dims[2] << "\n";
    out << "spacing_x=" << volume.spacing.x() << "\nspacing_y=" << volume.spacing.y()
        << "\nspacing_z=" << volume.spacing.z() << "\n";
    out << "origin_x=" << volume.origin.x() << "\norigin_y=" << volume.origin.y()
        << "\norigin_z=" << volume.origin.z() << "\n";
    out << "dtype=u8\n";
  }
  auto data_path = header_path;
  data_path.replace_extension(".rvd");
  std::ofstream out(data_path, std::ios::binary);
  if (!out) throw Error("volume: cannot write " + data_path.string());
  out.write(reinterpret_cast<const char*>(volume.voxels.data()),
            static_cast<std::streamsize>(volume.voxels.size()));
}

Volume crop(const Volume& volume, const CropBox& box) {
  for (int a = 0; a < 3; ++a) {
    if (box.min_voxel[a] < 0 || box.max_voxel[a] >= volume.dims[a] ||
        box.min_voxel[a] > box.max_voxel[a])
      throw Error("crop: box outside volume");
  }
  Volume out;
  out.dims = {box.max_voxel[0] - box.min_voxel[0] + 1, box.max_voxel[1] - box.min_voxel[1] + 1,
              box.max_voxel[2] - box.min_voxel[2] + 1};
  out.spacing = volume.spacing;
  out.origin = volume.voxel_center(box.min_voxel[0], box.min_voxel[1], box.min_voxel[2]);
  out.voxels.resize(voxel_count(out.dims));
  for (int k = 0; k < out.dims[2]; ++k)
    for (int j = 0; j < out.dims[1]; ++j)
      for (int i = 0; i < out.dims[0]; ++i)
        out.at(i, j, k) =
            volume.at(i + box.min_voxel[0], j + box.min_voxel[1], k + box.min_voxel[2]);
  return out;
}

TissueMask segment_tissue(const Volume& volume, double threshold) {
  if (!std::isfinite(threshold)) throw Error("segment: threshold must be finite");
  TissueMask mask;
  mask.dims = volume.dims;
  mask.threshold_used = threshold;
  mask.bits.resize(volume.size());
  for (std::size_t i = 0; i < volume.size(); ++i)
    mask.bits[i] = static_cast<double>(volume.voxels[i]) > threshold;
  return mask;
}

TissueMask largest_component(const TissueMask& mask) {
  const auto [nx, ny, nz] = mask.dims;
  const std::size_t n = mask.bits.size();
  std::vector<int> label(n, -1);
  std::vector<std::size_t> sizes;
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!mask.bits[seed] || label[seed] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    label[seed] = id;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t cur = queue.front();
      queue.pop_front();
      ++sizes[id];
      const int i = static_cast<int>(cur % nx);
      const int j = static_cast<int>((cur / nx) % ny);
      const int k = static_cast<int>(cur / (static_cast<std::size_t>(nx) * ny));
      const int offsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      for (const auto& o : offsets) {
        const int a = i + o[0], b = j + o[1], c = k + o[2];
        if (a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) continue;
        const std::size_t idx = static_cast<std::size_t>(a) +
                                static_cast<std::size_t>(nx) *
                                    (static_cast<std::size_t>(b) + static_cast<std::size_t>(ny) * c);
        if (mask.bits[idx] && label[idx] < 0) {
          label[idx] = id;
          queue.push_back(idx);
        }
      }
    }
  }
  TissueMask out = mask;
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < n; ++i) out.bits[i] = label[i] == best;
  return out;
}

PointCloud extract_surface_points(const TissueMask& mask, const Volume& geometry) {
  if (mask.dims != geometry.dims) throw Error("surface: dims mismatch");
  const auto [nx, ny, nz] = mask.dims;
  auto tissue = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) return false;
    return mask.at(i, j, k);
  };
  std::vector<Vector3d> points;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        if (!mask.at(i, j, k)) continue;
        const bool interior = tissue(i + 1, j, k) && tissue(i - 1, j, k) && tissue(i, j + 1, k) &&
                              tissue(i, j - 1, k) && tissue(i, j, k + 1) && tissue(i, j, k - 1);
        if (!interior) points.push_back(geometry.voxel_center(i, j, k));
      }
  PointCloud cloud;
  cloud.points.resize(3, static_cast<Index>(points.size()));
  for (std::size_t p = 0; p < points.size(); ++p) cloud.points.col(static_cast<Index>(p)) = points[p];
  return cloud;
}

SliceImage slice_image(const Volume& volume, SliceAxis axis, int index) {
  // Fixed axis and the two in-plane axes (u fastest).
  int fixed = 0, u = 1, w = 2;
  switch (axis) {
    case SliceAxis::Sagittal: fixed = 0; u = 1; w = 2; break;
    case SliceAxis::Coronal: fixed = 1; u = 0; w = 2; break;
    case SliceAxis::Axial: fixed = 2; u = 0; w = 1; break;
  }
  if (index < 0 || index >= volume.dims[fixed])
    throw Error(std::string("slice: index out of range for ") + to_string(axis));

  SliceImage img;
  img.width = volume.dims[u];
  img.height = volume.dims[w];
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  std::array<int, 3> ijk{};
  ijk[fixed] = index;
  for (int b = 0; b < img.height; ++b)
    for (int a = 0; a < img.width; ++a) {
      ijk[u] = a;
      ijk[w] = b;
      img.pixels[static_cast<std::size_t>(a) + static_cast<std::size_t>(img.width) * b] =
          volume.at(ijk[0], ijk[1], ijk[2]);
    }
  img.origin = volume.origin;
  img.origin[fixed] += index * volume.spacing[fixed];
  img.step_u[u] = volume.spacing[u];
  img.step_v[w] = volume.spacing[w];
  return img;
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cloud: not found: " + path.string());
  std::vector<Vector3d> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    Vector3d p;
    if (!(ss >> p.x() >> p.y() >> p.z()) || !p.allFinite())
      throw Error("cloud: malformed line " + std::to_string(lineno));
    pts.push_back(p);
  }
  PointCloud cloud;
  cloud.points.resize(3, static_cast<Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) cloud.points.col(static_cast<Index>(i)) = pts[i];
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cloud: cannot write " + path.string());
  out << std::setprecision(17);
  for (Index i = 0; i < cloud.size(); ++i)
    out << cloud.points(0, i) << ' ' << cloud.points(1, i) << ' ' << cloud.points(2, i) << '\n';
}

}  // namespace palate
