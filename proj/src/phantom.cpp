#include "palate/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace palate {

namespace {

int nearest_column(const PhantomParams& p, double u) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p.nu; ++i) {
    const double ui = -1.0 + 2.0 * i / (p.nu - 1);
    const double d = std::abs(ui - u);
    if (d < best_d - 1e-12) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

void PhantomParams::validate() const {
  if (nu < 4 || nv < 4) throw Error("phantom: grid must be at least 4x4");
  if (!(width > 0.0) || !(length > 0.0) || !(dome_height >= 0.0))
    throw Error("phantom: degenerate extents");
  if (!(std::abs(asymmetry) < 1.0)) throw Error("phantom: |asymmetry| must be < 1");
  if (!(concavity > -1.0)) throw Error("phantom: concavity must be > -1");
}

double phantom_height(const PhantomParams& p, double u, double v) {
  const double lateral = std::pow(std::max(0.0, 1.0 - u * u), 1.0 + p.concavity);
  const double t = (v - 0.45) / 0.28;
  const double profile = 0.35 + 0.65 * std::exp(-t * t);
  return p.dome_height * lateral * profile * (1.0 + p.asymmetry * u);
}

std::pair<Mesh, LandmarkSet> synth_palate(const PhantomParams& p) {
  p.validate();
  Mesh mesh;
  mesh.vertices.resize(3, static_cast<Index>(p.nu) * p.nv);
  for (int j = 0; j < p.nv; ++j)
    for (int i = 0; i < p.nu; ++i) {
      const double u = -1.0 + 2.0 * i / (p.nu - 1);
      const double v = static_cast<double>(j) / (p.nv - 1);
      mesh.vertices.col(static_cast<Index>(j) * p.nu + i) =
          Vector3d(0.5 * p.width * u, p.length * v, phantom_height(p, u, v));
    }

  mesh.faces.resize(3, 2 * static_cast<Index>(p.nu - 1) * (p.nv - 1));
  Index f = 0;
  for (int j = 0; j + 1 < p.nv; ++j)
    for (int i = 0; i + 1 < p.nu; ++i) {
      const int a = j * p.nu + i, b = a + 1, c = a + p.nu, d = c + 1;
      mesh.faces.col(f++) = Eigen::Vector3i(a, b, d);
      mesh.faces.col(f++) = Eigen::Vector3i(a, d, c);
    }

  // Midline apex: interior midline vertex of greatest profile curvature.
  const int mid = p.nu / 2;
  const double dy = p.length / (p.nv - 1);
  int apex_row = 1;
  double best_kappa = -1.0;
  for (int j = 1; j + 1 < p.nv; ++j) {
    const double z0 = mesh.vertices(2, (j - 1) * p.nu + mid);
    const double z1 = mesh.vertices(2, j * p.nu + mid);
    const double z2 = mesh.vertices(2, (j + 1) * p.nu + mid);
    const double d1 = (z2 - z0) / (2.0 * dy);
    const double d2 = (z2 - 2.0 * z1 + z0) / (dy * dy);
    const double kappa = std::abs(d2) / std::pow(1.0 + d1 * d1, 1.5);
    if (kappa > best_kappa) {
      best_kappa = kappa;
      apex_row = j;
    }
  }

  const int boundary_row = p.nv - 1;
  const int left = nearest_column(p, -2.0 / 3.0);
  const int right = nearest_column(p, 2.0 / 3.0);
  mesh.landmark_indices = {
      {"incisor", mid},
      {"midline_boundary", boundary_row * p.nu + mid},
      {"midline_apex", apex_row * p.nu + mid},
      {"left_boundary", boundary_row * p.nu + left},
      {"right_boundary", boundary_row * p.nu + right},
      {"left_apex", apex_row * p.nu + left},
      {"right_apex", apex_row * p.nu + right},
  };
  mesh.validate();
  LandmarkSet landmarks = landmark_positions(mesh);
  return {std::move(mesh), landmarks};
}

std::vector<Mesh> synth_population(const PhantomParams& base, int n, double spread, std::uint64_t seed) {
  if (n < 2) throw Error("phantom: population needs n >= 2");
  if (!(spread >= 0.0)) throw Error("phantom: spread must be >= 0");
  base.validate();
  const auto landmark_indices = synth_palate(base).first.landmark_indices;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Mesh> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    PhantomParams p = base;
    const double a = normal(rng), b = normal(rng), c = normal(rng);
    p.dome_height = std::max(0.0, base.dome_height * (1.0 + spread * a));
    p.concavity = std::max(-0.9, base.concavity + spread * b);
    p.asymmetry = std::clamp(base.asymmetry + spread * c, -0.9, 0.9);
    Mesh m = synth_palate(p).first;
    m.landmark_indices = landmark_indices;
    out.push_back(std::move(m));
  }
  return out;
}

RasterGeometry geometry_around(const Mesh& mesh, const Vector3d& spacing, int margin) {
  if (mesh.vertex_count() == 0) throw Error("rasterize: empty mesh");
  const Vector3d lo = mesh.vertices.rowwise().minCoeff();
  const Vector3d hi = mesh.vertices.rowwise().maxCoeff();
  RasterGeometry g;
  g.spacing = spacing;
  g.origin = lo - margin * spacing;
  for (int a = 0; a < 3; ++a)
    g.dims[a] = static_cast<int>(std::ceil((hi[a] - lo[a]) / spacing[a])) + 2 * margin + 1;
  return g;
}

Volume rasterize(const Mesh& mesh, const RasterGeometry& geometry, std::uint8_t tissue_value,
                 std::uint8_t background, double shell_thickness) {
  if (tissue_value <= background) throw Error("rasterize: tissue_value must exceed background");
  Volume vol(geometry.dims, geometry.spacing, geometry.origin, background);
  const Vector3d lo = geometry.origin - 0.5 * geometry.spacing;
  const Vector3d hi = geometry.origin +
                      (Vector3d(geometry.dims[0], geometry.dims[1], geometry.dims[2]).array() - 0.5).matrix()
                          .cwiseProduct(geometry.spacing);
  for (Index v = 0; v < mesh.vertex_count(); ++v)
    for (int a = 0; a < 3; ++a)
      if (mesh.vertices(a, v) < lo[a] || mesh.vertices(a, v) > hi[a])
        throw Error("rasterize: mesh exceeding bounds");

  const double thickness = shell_thickness > 0.0 ? shell_thickness : geometry.spacing.z();
  const int nx = geometry.dims[0], ny = geometry.dims[1];
  std::vector<double> height(static_cast<std::size_t>(nx) * ny, -std::numeric_limits<double>::infinity());

  for (Index f = 0; f < mesh.face_count(); ++f) {
    const Vector3d a = mesh.vertices.col(mesh.faces(0, f));
    const Vector3d b = mesh.vertices.col(mesh.faces(1, f));
    const Vector3d c = mesh.vertices.col(mesh.faces(2, f));
    const double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
    if (std::abs(det) < 1e-14) continue;  // vertical in projection
    const double xmin = std::min({a.x(), b.x(), c.x()}), xmax = std::max({a.x(), b.x(), c.x()});
    const double ymin = std::min({a.y(), b.y(), c.y()}), ymax = std::max({a.y(), b.y(), c.y()});
    const int i0 = std::max(0, static_cast<int>(std::ceil((xmin - geometry.origin.x()) / geometry.spacing.x())));
    const int i1 = std::min(nx - 1, static_cast<int>(std::floor((xmax - geometry.origin.x()) / geometry.spacing.x())));
    const int j0 = std::max(0, static_cast<int>(std::ceil((ymin - geometry.origin.y()) / geometry.spacing.y())));
    const int j1 = std::min(ny - 1, static_cast<int>(std::floor((ymax - geometry.origin.y()) / geometry.spacing.y())));
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        const double px = geometry.origin.x() + i * geometry.spacing.x();
        const double py = geometry.origin.y() + j * geometry.spacing.y();
        const double l1 = ((px - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (py - a.y())) / det;
        const double l2 = ((b.x() - a.x()) * (py - a.y()) - (px - a.x()) * (b.y() - a.y())) / det;
        const double l0 = 1.0 - l1 - l2;
        constexpr double kTol = -1e-12;
        if (l0 < kTol || l1 < kTol || l2 < kTol) continue;
        const double z = l0 * a.z() + l1 * b.z() + l2 * c.z();
        double& h = height[static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * j];
        h = std::max(h, z);
      }
  }

  std::size_t tissue = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double h = height[static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * j];
      if (!std::isfinite(h)) continue;
      for (int k = 0; k < geometry.dims[2]; ++k) {
        const double z = geometry.origin.z() + k * geometry.spacing.z();
        if (z <= h && z > h - thickness) {
          vol.at(i, j, k) = tissue_value;
          ++tissue;
        }
      }
    }
  if (tissue == 0) throw Error("rasterize: mesh does not intersect any voxel column");
  return vol;
}

}  // namespace palate
