#ifndef PALATE_TOOLS_CLI_HPP
#define PALATE_TOOLS_CLI_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "palate/align.hpp"
#include "palate/modelfit.hpp"
#include "palate/templatefit.hpp"
#include "palate/volume.hpp"

namespace palate::cli {

/// Settings shared by every command. Loaded from a JSON file; absent keys keep
/// their defaults and unknown keys are rejected.
///
///   threshold            segmentation threshold (voxel > t is tissue)
///   crop                 {"min": [i, j, k], "max": [i, j, k]} inclusive voxel box
///   largest_component    keep only the largest connected tissue region
///   template             template OBJ for `extract`
///   output_dir           base directory for relative output paths
///   variance_keep        fraction of variance kept by `train`
///   fit                  max_iter, grad_tol, correspondence_cutoff,
///                        refresh_correspondences_every, max_refreshes, refine_pose
///   templatefit          smoothness_weight, max_outer_iter, correspondence_cutoff,
///                        convergence_tol, stiffness_ratio
///   gpa                  max_iter, tol
///   icp                  max_iter, tol, trim_fraction
struct PipelineConfig {
  double threshold = 25.0;
  std::optional<CropBox> crop;
  bool largest_component = false;
  std::string template_path;
  std::string output_dir;
  double variance_keep = 1.0;
  FitParams fit;
  TemplateFitParams templatefit;
  GpaParams gpa;
  IcpParams icp;
};

PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string format_config(const PipelineConfig& config);

/// crop -> segment -> (largest component) -> surface points.
PointCloud cloud_from_volume(const Volume& volume, const PipelineConfig& config);

/// PNG (8-bit grayscale) of a slice, bytes in memory.
std::vector<std::uint8_t> encode_png(const SliceImage& image);

/// HTTP endpoints for the landmark annotator, one volume per instance.
///
///   GET /meta                    dims, spacing, origin, landmark names (JSON)
///   GET /slice/{axis}/{index}    PNG; X-Pixel-Origin / X-Pixel-Step-U / X-Pixel-Step-V
///                                headers give the pixel-to-world mapping in mm
///   GET /landmarks               world landmark file, 404 until one exists
///   PUT /landmarks               replaces the file; 422 unless all seven names appear once
class AnnotationServer {
public:
  AnnotationServer(Volume volume, std::filesystem::path landmarks_path);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds `host:port`; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires a successful bind().
  void run();
  void stop();
  /// Blocks until the listener is accepting connections.
  void wait_until_ready() const;

private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

/// Entry point shared by the executable and the tests. Returns the exit code;
/// failures print one `error: <reason>` line to stderr.
int run(int argc, const char* const* argv);

}  // namespace palate::cli

#endif  // PALATE_TOOLS_CLI_HPP
