#ifndef PALATE_VOLUME_HPP
#define PALATE_VOLUME_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "palate/common.hpp"

namespace palate {

using Dims = std::array<int, 3>;

/// Scalar scan volume. Voxels are stored x-fastest; voxel (0,0,0) is centered
/// at `origin` and neighbours are `spacing` millimeters apart.
struct Volume {
  Dims dims{1, 1, 1};
  Vector3d spacing = Vector3d::Ones();
  Vector3d origin = Vector3d::Zero();
  std::vector<std::uint8_t> voxels;

  Volume() = default;
  Volume(const Dims& dims, const Vector3d& spacing, const Vector3d& origin,
         std::uint8_t fill = 0);

  std::size_t size() const { return voxels.size(); }
  std::size_t linear_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }
  std::uint8_t at(int i, int j, int k) const { return voxels[linear_index(i, j, k)]; }
  std::uint8_t& at(int i, int j, int k) { return voxels[linear_index(i, j, k)]; }

  Vector3d voxel_center(int i, int j, int k) const {
    return origin + Vector3d(i, j, k).cwiseProduct(spacing);
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }

  /// Throws unless dims >= 1, spacing > 0 and the voxel buffer matches dims.
  void validate() const;
};

struct TissueMask {
  Dims dims{1, 1, 1};
  std::vector<bool> bits;
  double threshold_used = 0.0;

  bool at(int i, int j, int k) const {
    return bits[static_cast<std::size_t>(i) +
                static_cast<std::size_t>(dims[0]) *
                    (static_cast<std::size_t>(j) +
                     static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k))];
  }
  std::size_t count() const;
};

/// Unordered world-space points, one per column.
struct PointCloud {
  Matrix3Xd points;

  Index size() const { return points.cols(); }
  bool empty() const { return points.cols() == 0; }
};

/// Inclusive voxel-index bounds.
struct CropBox {
  std::array<int, 3> min_voxel{0, 0, 0};
  std::array<int, 3> max_voxel{0, 0, 0};
};

enum class SliceAxis { Sagittal, Coronal, Axial };

SliceAxis parse_slice_axis(const std::string& name);
const char* to_string(SliceAxis axis);

/// One plane of a volume. Pixel (i, j) lies at `origin + i * step_u + j * step_v`
/// in world millimeters. Pixels are stored i-fastest.
struct SliceImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  Vector3d origin = Vector3d::Zero();
  Vector3d step_u = Vector3d::Zero();
  Vector3d step_v = Vector3d::Zero();

  std::uint8_t at(int i, int j) const {
    return pixels[static_cast<std::size_t>(i) + static_cast<std::size_t>(width) * j];
  }
  Vector3d pixel_to_world(double i, double j) const { return origin + i * step_u + j * step_v; }
};

struct VolumeLoadStats {
  std::size_t clamped = 0;
};

/// Reads an RVH header and its sibling `.rvd` raw data file. Wider dtypes are
/// clamped into [0, 255]; the number of clamped voxels is reported in `stats`.
Volume load_volume(const std::filesystem::path& header_path, VolumeLoadStats* stats = nullptr);
/// Writes `<stem>.rvh` and `<stem>.rvd` (u8).
void save_volume(const Volume& volume, const std::filesystem::path& header_path);

Volume crop(const Volume& volume, const CropBox& box);

/// Strict comparison: voxel > threshold is tissue.
TissueMask segment_tissue(const Volume& volume, double threshold);

/// Keeps only the largest 6-connected tissue component (lowest linear index
/// of the component breaks size ties).
TissueMask largest_component(const TissueMask& mask);

/// One point per tissue voxel with a 6-neighbour that is non-tissue or outside
/// the volume. Points are voxel centers, emitted in x-fastest voxel order.
PointCloud extract_surface_points(const TissueMask& mask, const Volume& geometry);

SliceImage slice_image(const Volume& volume, SliceAxis axis, int index);

/// Plain-text cloud, one `x y z` triple per line.
PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace palate

#endif  // PALATE_VOLUME_HPP
