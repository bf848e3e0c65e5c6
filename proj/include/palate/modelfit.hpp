#ifndef PALATE_MODELFIT_HPP
#define PALATE_MODELFIT_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "palate/align.hpp"
#include "palate/mesh.hpp"
#include "palate/shapespace.hpp"
#include "palate/volume.hpp"

namespace palate {

struct FitParams {
  /// Total quasi-Newton iteration budget across all correspondence refreshes.
  int max_iter = 200;
  /// Infinity-norm tolerance on the projected gradient d energy / d c.
  double grad_tol = 1e-6;
  /// Model vertices farther than this (mm) from the cloud get no target.
  double correspondence_cutoff = 5.0;
  /// Quasi-Newton iterations between nearest-point refreshes.
  int refresh_correspondences_every = 5;
  /// Cap on nearest-point refreshes (cloud) or pose rounds (landmarks). Past it the
  /// cloud fit keeps its vertex-to-point pairs and alternates pose and shape until
  /// the iteration budget runs out or the pose stops improving.
  int max_refreshes = 10;
  /// Re-pose the current fitted shape (landmarks, then ICP) after each block,
  /// keeping the new pose only when it lowers the truncated data energy.
  bool refine_pose = true;
  IcpParams icp;
};

struct FitResult {
  SimilarityTransform transform;
  CoefficientVector coefficients;
  double final_energy = 0.0;  // mm^2
  int iterations = 0;
  double log_density = 0.0;

  int refreshes = 0;
  bool converged = false;
  /// Energy (mm^2) after every accepted optimizer step, one list per
  /// correspondence block.
  std::vector<std::vector<double>> energy_blocks;
};

/// Vertex-to-point targets in the model frame.
struct FitTargets {
  std::vector<int> vertices;
  Matrix3Xd points;

  Index size() const { return static_cast<Index>(vertices.size()); }
};

struct EnergyValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// Sum over targets of |v_j(c) - q|^2 with its analytic gradient in c.
EnergyValue fitting_energy(const ShapeSpaceModel& model, const CoefficientVector& c,
                           const FitTargets& targets);

/// fitting_energy with the target rows of the basis gathered once.
class FittingEnergy {
public:
  FittingEnergy(const ShapeSpaceModel& model, const FitTargets& targets);
  double operator()(const CoefficientVector& c, Eigen::VectorXd& gradient) const;

private:
  Eigen::MatrixXd basis_rows_;
  Eigen::VectorXd offset_;  // mean rows + basis rows * coeff_means - targets
};

FitResult fit_to_cloud(const ShapeSpaceModel& model, const PointCloud& cloud,
                       const LandmarkSet& user_landmarks, const FitParams& params = {});

FitResult fit_to_landmarks(const ShapeSpaceModel& model, const LandmarkSet& data_landmarks,
                           const FitParams& params = {});

/// The fitted mesh mapped into the data frame.
Mesh fitted_mesh(const ShapeSpaceModel& model, const FitResult& fit);

std::string format_fit_result(const FitResult& fit);
FitResult parse_fit_result(const std::string& text);
void save_fit_result(const FitResult& fit, const std::filesystem::path& path);

}  // namespace palate

#endif  // PALATE_MODELFIT_HPP
