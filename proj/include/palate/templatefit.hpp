#ifndef PALATE_TEMPLATEFIT_HPP
#define PALATE_TEMPLATEFIT_HPP

#include <vector>

#include <Eigen/SparseCore>

#include "palate/align.hpp"
#include "palate/mesh.hpp"
#include "palate/volume.hpp"

namespace palate {

/// Laplacian-regularized nearest-point deformation of a template mesh. This is
/// a simplified nonrigid fit: the template is first posed from the landmarks
/// and ICP, then its displacement field is smoothed with the uniform graph
/// Laplacian while vertices are pulled onto their nearest cloud points.
struct TemplateFitParams {
  double smoothness_weight = 1.0;
  int max_outer_iter = 20;
  /// Correspondences farther than this (mm) are dropped.
  double correspondence_cutoff = 5.0;
  /// Stop once the RMS vertex update (mm) falls below this.
  double convergence_tol = 1e-6;
  /// Relative weight of the displacement-magnitude term; keeps the system
  /// positive definite and fixes the translation left free by the Laplacian.
  double stiffness_ratio = 1e-3;
  IcpParams icp;
};

struct TemplateFitResult {
  Mesh mesh;
  SimilarityTransform pose;
  Mesh posed_template;
  int iterations = 0;
  /// Total energy at the start of each outer iteration (fresh correspondences)
  /// and after its linear solve.
  std::vector<double> energy_before;
  std::vector<double> energy_after;
  /// Data term before and after each re-correspondence step, and how many
  /// vertices gained a correspondence in that step.
  std::vector<double> data_before_refresh;
  std::vector<double> data_after_refresh;
  std::vector<int> gained_correspondences;
};

/// Uniform graph Laplacian: (L x)_j = x_j - mean of x over j's neighbours.
Eigen::SparseMatrix<double> uniform_laplacian(const Mesh& mesh);

/// Solves (S + w (LᵀL + εI)) D = S R for the displacement field D, where S
/// selects vertices with `has_target` and R = target - base. Columns of the
/// returned 3xN matrix are per-vertex displacements.
Matrix3Xd solve_displacements(const Eigen::SparseMatrix<double>& laplacian,
                              const std::vector<bool>& has_target, const Matrix3Xd& residual,
                              double smoothness_weight, double stiffness_ratio);

TemplateFitResult fit_template_detailed(const Mesh& templ, const PointCloud& cloud,
                                        const LandmarkSet& user_landmarks,
                                        const TemplateFitParams& params = {});

Mesh fit_template(const Mesh& templ, const PointCloud& cloud, const LandmarkSet& user_landmarks,
                  const TemplateFitParams& params = {});

}  // namespace palate

#endif  // PALATE_TEMPLATEFIT_HPP
