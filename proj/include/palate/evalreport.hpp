#ifndef PALATE_EVALREPORT_HPP
#define PALATE_EVALREPORT_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "palate/align.hpp"
#include "palate/mesh.hpp"

namespace palate {

struct ErrorReport {
  std::vector<double> per_vertex_mm;
  std::vector<double> sorted_mm;
  std::string mesh_id;
  std::string reference_id;

  std::size_t size() const { return per_vertex_mm.size(); }
  double max() const { return sorted_mm.empty() ? 0.0 : sorted_mm.back(); }
  double mean() const;
  /// Linear-interpolated quantile of the sorted errors, q in [0, 1].
  double quantile(double q) const;

  static ErrorReport from_errors(std::vector<double> errors, std::string mesh_id = {},
                                 std::string reference_id = {});
};

struct CdfSample {
  double distance_mm = 0.0;
  double fraction = 0.0;
};

/// Distance from every vertex of `mesh` to the closest point on `reference`.
/// The caller aligns the two beforehand.
ErrorReport per_vertex_errors(const Mesh& mesh, const Mesh& reference, std::string mesh_id = {},
                              std::string reference_id = {});

/// Empirical CDF F(d) = #(e <= d) / N at `n_bins` thresholds evenly spaced on
/// [0, max error].
std::vector<CdfSample> cumulative_error(const ErrorReport& report, int n_bins = 256);

/// #(e < threshold) / N.
double fraction_below(const ErrorReport& report, double threshold_mm);

/// Linear blue (0 mm) to red (>= d_max) colour ramp, channels rounded.
VertexColors heatmap_colors(const ErrorReport& report, double d_max_mm);

struct ColoredMesh {
  Mesh mesh;
  VertexColors colors;
};
ColoredMesh heatmap_mesh(const Mesh& mesh, const ErrorReport& report, double d_max_mm);

std::string cdf_csv(const std::vector<CdfSample>& cdf);
/// Self-contained SVG line plot of the CDF on a 640x480 viewBox.
std::string cdf_svg(const std::vector<CdfSample>& cdf, const std::string& title = {});

/// Rigid (no scale) alignment of `mesh` onto `reference` from both landmark
/// sets, refined by trimmed ICP against dense reference surface samples.
SimilarityTransform rigid_align_for_evaluation(const Mesh& mesh, const Mesh& reference,
                                               const IcpParams& icp = {}, int subdivisions = 4);

}  // namespace palate

#endif  // PALATE_EVALREPORT_HPP
