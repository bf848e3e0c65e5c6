#include "palate/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace palate {

double ErrorReport::mean() const {
  if (per_vertex_mm.empty()) return 0.0;
  return std::accumulate(per_vertex_mm.begin(), per_vertex_mm.end(), 0.0) /
         static_cast<double>(per_vertex_mm.size());
}

double ErrorReport::quantile(double q) const {
  if (sorted_mm.empty()) throw Error("report: empty report");
  q = std::clamp(q, 0.0, 1.0);
  const double pos = q * static_cast<double>(sorted_mm.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted_mm.size() - 1);
  return sorted_mm[lo] + (pos - static_cast<double>(lo)) * (sorted_mm[hi] - sorted_mm[lo]);
}

ErrorReport ErrorReport::from_errors(std::vector<double> errors, std::string mesh_id,
                                     std::string reference_id) {
  for (double e : errors)
    if (!(e >= 0.0) || !std::isfinite(e)) throw Error("report: errors must be finite and >= 0");
  ErrorReport r;
  r.per_vertex_mm = std::move(errors);
  r.sorted_mm = r.per_vertex_mm;
  std::sort(r.sorted_mm.begin(), r.sorted_mm.end());
  r.mesh_id = std::move(mesh_id);
  r.reference_id = std::move(reference_id);
  return r;
}

ErrorReport per_vertex_errors(const Mesh& mesh, const Mesh& reference, std::string mesh_id,
                              std::string reference_id) {
  if (reference.face_count() == 0) throw Error("evaluate: empty reference");
  const MeshDistanceQuery query(reference);
  std::vector<double> errors(static_cast<std::size_t>(mesh.vertex_count()));
  for (Index v = 0; v < mesh.vertex_count(); ++v) errors[v] = query.closest(mesh.vertices.col(v)).distance;
  return ErrorReport::from_errors(std::move(errors), std::move(mesh_id), std::move(reference_id));
}

std::vector<CdfSample> cumulative_error(const ErrorReport& report, int n_bins) {
  if (report.sorted_mm.empty()) throw Error("evaluate: empty report");
  if (n_bins < 2) throw Error("evaluate: n_bins must be >= 2");
  const double max_err = report.max();
  const double n = static_cast<double>(report.sorted_mm.size());
  std::vector<CdfSample> out(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    const double d = b == n_bins - 1 ? max_err : max_err * b / (n_bins - 1);
    const auto count = std::upper_bound(report.sorted_mm.begin(), report.sorted_mm.end(), d) -
                       report.sorted_mm.begin();
    out[b] = {d, static_cast<double>(count) / n};
  }
  return out;
}

double fraction_below(const ErrorReport& report, double threshold_mm) {
  if (report.sorted_mm.empty()) throw Error("evaluate: empty report");
  const auto count = std::lower_bound(report.sorted_mm.begin(), report.sorted_mm.end(), threshold_mm) -
                     report.sorted_mm.begin();
  return static_cast<double>(count) / static_cast<double>(report.sorted_mm.size());
}

VertexColors heatmap_colors(const ErrorReport& report, double d_max_mm) {
  if (!(d_max_mm > 0.0)) throw Error("heatmap: d_max must be > 0");
  VertexColors colors(3, static_cast<Index>(report.size()));
  for (std::size_t v = 0; v < report.size(); ++v) {
    const double t = std::clamp(report.per_vertex_mm[v] / d_max_mm, 0.0, 1.0);
    colors(0, v) = static_cast<std::uint8_t>(std::lround(255.0 * t));
    colors(1, v) = 0;
    colors(2, v) = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t)));
  }
  return colors;
}

ColoredMesh heatmap_mesh(const Mesh& mesh, const ErrorReport& report, double d_max_mm) {
  if (static_cast<Index>(report.size()) != mesh.vertex_count())
    throw Error("heatmap: report length does not match vertex count");
  return {mesh, heatmap_colors(report, d_max_mm)};
}

std::string cdf_csv(const std::vector<CdfSample>& cdf) {
  std::ostringstream out;
  out << std::setprecision(10) << "distance_mm,fraction\n";
  for (const auto& s : cdf) out << s.distance_mm << ',' << s.fraction << '\n';
  return out.str();
}

std::string cdf_svg(const std::vector<CdfSample>& cdf, const std::string& title) {
  constexpr double kWidth = 640, kHeight = 480, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const double max_d = cdf.empty() || cdf.back().distance_mm <= 0.0 ? 1.0 : cdf.back().distance_mm;
  auto px = [&](double d) { return kLeft + plot_w * d / max_d; };
  auto py = [&](double f) { return kTop + plot_h * (1.0 - f); };

  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 480\" width=\"640\" height=\"480\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    out << "<line x1=\"" << kLeft << "\" y1=\"" << py(f) << "\" x2=\"" << kLeft + plot_w << "\" y2=\"" << py(f)
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(f) + 4 << "\" font-size=\"12\" text-anchor=\"end\">"
        << f << "</text>\n";
    const double d = max_d * i / 4.0;
    out << "<text x=\"" << px(d) << "\" y=\"" << kTop + plot_h + 18
        << "\" font-size=\"12\" text-anchor=\"middle\">" << d << "</text>\n";
  }
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 15
      << "\" font-size=\"14\" text-anchor=\"middle\">error (mm)</text>\n";
  out << "<text x=\"18\" y=\"" << kTop + plot_h / 2 << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << kTop + plot_h / 2 << ")\">fraction of vertices</text>\n";
  if (!title.empty())
    out << "<text x=\"320\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">" << title << "</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (const auto& s : cdf) out << px(s.distance_mm) << ',' << py(s.fraction) << ' ';
  out << "\"/>\n</svg>\n";
  return out.str();
}

SimilarityTransform rigid_align_for_evaluation(const Mesh& mesh, const Mesh& reference,
                                               const IcpParams& icp, int subdivisions) {
  const SimilarityTransform init =
      similarity_from_landmarks(landmark_positions(mesh), landmark_positions(reference), false);
  return icp_refine(mesh, sample_surface(reference, subdivisions), init, icp).transform;
}

}  // namespace palate
