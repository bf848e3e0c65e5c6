#ifndef PALATE_PHANTOM_HPP
#define PALATE_PHANTOM_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "palate/mesh.hpp"
#include "palate/volume.hpp"

namespace palate {

/// Synthetic palate: a height-field dome over a width x length rectangle.
/// x runs left (-) to right (+), y from the incisors (0) backwards, z is height.
struct PhantomParams {
  int nu = 17;  // lateral samples; odd so a vertex column lies on the midline
  int nv = 32;  // front-to-back samples
  double width = 40.0;
  double length = 50.0;
  double dome_height = 15.0;
  /// Skews the dome towards +x (z scaled by 1 + asymmetry * u); |asymmetry| < 1.
  double asymmetry = 0.0;
  /// Sharpens (> 0) or flattens (< 0) the lateral profile; must exceed -1.
  double concavity = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Height of the phantom surface at normalized coordinates u in [-1, 1]
/// (lateral) and v in [0, 1] (front to back).
double phantom_height(const PhantomParams& params, double u, double v);

std::pair<Mesh, LandmarkSet> synth_palate(const PhantomParams& params);

/// n meshes with dome_height, concavity and asymmetry perturbed by seeded
/// Gaussian noise of scale `spread` (relative for dome_height). All members
/// share the face set and the landmark indices of `base`.
std::vector<Mesh> synth_population(const PhantomParams& base, int n, double spread, std::uint64_t seed);

struct RasterGeometry {
  Dims dims{1, 1, 1};
  Vector3d spacing = Vector3d::Ones();
  Vector3d origin = Vector3d::Zero();
};

/// Grid with the given spacing enclosing the mesh plus `margin` voxels per side.
RasterGeometry geometry_around(const Mesh& mesh, const Vector3d& spacing, int margin = 2);

/// Marks voxels whose centers lie on or below the mesh surface, within one
/// `shell_thickness` (default: one z spacing) of it, as tissue. The surface
/// height of a voxel column is the highest mesh crossing of its vertical line;
/// columns the mesh does not cover stay background.
Volume rasterize(const Mesh& mesh, const RasterGeometry& geometry, std::uint8_t tissue_value = 200,
                 std::uint8_t background = 0, double shell_thickness = 0.0);

}  // namespace palate

#endif  // PALATE_PHANTOM_HPP
