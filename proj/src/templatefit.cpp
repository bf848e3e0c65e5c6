#include "palate/templatefit.hpp"

#include <cmath>

#include <Eigen/SparseCholesky>

#include "palate/spatial.hpp"

namespace palate {

namespace {

struct Targets {
  std::vector<bool> has;
  Matrix3Xd points;
  int count = 0;
  double data_term = 0.0;
};

Targets nearest_targets(const Matrix3Xd& vertices, const KdTree& tree, double cutoff) {
  Targets t;
  const Index n = vertices.cols();
  t.has.assign(static_cast<std::size_t>(n), false);
  t.points = Matrix3Xd::Zero(3, n);
  const double cutoff2 = cutoff * cutoff;
  for (Index j = 0; j < n; ++j) {
    const auto hit = tree.nearest(vertices.col(j));
    if (hit.squared_distance <= cutoff2) {
      t.has[j] = true;
      t.points.col(j) = tree.points().col(hit.index);
      t.data_term += hit.squared_distance;
      ++t.count;
    }
  }
  return t;
}

double data_term(const Matrix3Xd& vertices, const Targets& t) {
  double sum = 0.0;
  for (Index j = 0; j < vertices.cols(); ++j)
    if (t.has[j]) sum += (vertices.col(j) - t.points.col(j)).squaredNorm();
  return sum;
}

double regularizer(const Eigen::SparseMatrix<double>& lap, const Matrix3Xd& disp, double w,
                   double eps) {
  const Eigen::MatrixXd ld = lap * disp.transpose();
  return w * (ld.squaredNorm() + eps * disp.squaredNorm());
}

}  // namespace

Eigen::SparseMatrix<double> uniform_laplacian(const Mesh& mesh) {
  const auto nbrs = vertex_neighbors(mesh);
  const Index n = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trip;
  for (Index j = 0; j < n; ++j) {
    trip.emplace_back(j, j, 1.0);
    const auto& nb = nbrs[j];
    if (nb.empty()) continue;
    const double w = 1.0 / static_cast<double>(nb.size());
    for (int k : nb) trip.emplace_back(j, k, -w);
  }
  Eigen::SparseMatrix<double> lap(n, n);
  lap.setFromTriplets(trip.begin(), trip.end());
  return lap;
}

Matrix3Xd solve_displacements(const Eigen::SparseMatrix<double>& laplacian,
                              const std::vector<bool>& has_target, const Matrix3Xd& residual,
                              double smoothness_weight, double stiffness_ratio) {
  const Index n = laplacian.rows();
  if (residual.cols() != n || static_cast<Index>(has_target.size()) != n)
    throw Error("templatefit: system size mismatch");
  if (smoothness_weight < 0.0 || stiffness_ratio < 0.0)
    throw Error("templatefit: negative regularization weight");

  Eigen::SparseMatrix<double> system = smoothness_weight * (laplacian.transpose() * laplacian);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 3);
  std::vector<Eigen::Triplet<double>> diag;
  // Unconstrained vertices with no regularization keep a zero displacement.
  const double ridge = smoothness_weight * stiffness_ratio > 0.0 ? smoothness_weight * stiffness_ratio : 1e-12;
  for (Index j = 0; j < n; ++j) {
    double d = ridge;
    if (has_target[j]) {
      d += 1.0;
      rhs.row(j) = residual.col(j).transpose();
    }
    diag.emplace_back(j, j, d);
  }
  Eigen::SparseMatrix<double> dmat(n, n);
  dmat.setFromTriplets(diag.begin(), diag.end());
  system += dmat;

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(system);
  if (solver.info() != Eigen::Success) throw Error("templatefit: factorization failed");
  const Eigen::MatrixXd disp = solver.solve(rhs);
  if (solver.info() != Eigen::Success) throw Error("templatefit: solve failed");
  return disp.transpose();
}

TemplateFitResult fit_template_detailed(const Mesh& templ, const PointCloud& cloud,
                                        const LandmarkSet& user_landmarks,
                                        const TemplateFitParams& params) {
  if (cloud.empty()) throw Error("templatefit: empty cloud");
  if (!(params.smoothness_weight >= 0.0)) throw Error("templatefit: smoothness_weight must be >= 0");
  if (!(params.correspondence_cutoff > 0.0)) throw Error("templatefit: cutoff must be > 0");
  templ.validate();

  TemplateFitResult result;
  const SimilarityTransform init =
      similarity_from_landmarks(landmark_positions(templ), user_landmarks, true);
  result.pose = icp_refine(templ, cloud, init, params.icp).transform;
  const Matrix3Xd base = result.pose.apply(templ.vertices);
  result.posed_template = with_vertices(templ, base);

  const KdTree tree(cloud.points);
  const auto lap = uniform_laplacian(templ);
  const double w = params.smoothness_weight;
  const double eps = params.stiffness_ratio;

  Matrix3Xd current = base;
  Targets targets = nearest_targets(current, tree, params.correspondence_cutoff);
  if (targets.count == 0) throw Error("templatefit: no correspondences within cutoff");

  for (int outer = 0; outer < params.max_outer_iter; ++outer) {
    const Matrix3Xd disp_before = current - base;
    result.energy_before.push_back(targets.data_term + regularizer(lap, disp_before, w, eps));

    Matrix3Xd residual = Matrix3Xd::Zero(3, current.cols());
    for (Index j = 0; j < current.cols(); ++j)
      if (targets.has[j]) residual.col(j) = targets.points.col(j) - base.col(j);
    const Matrix3Xd disp = solve_displacements(lap, targets.has, residual, w, eps);
    const Matrix3Xd next = base + disp;
    result.energy_after.push_back(data_term(next, targets) + regularizer(lap, disp, w, eps));

    const double change = rmsd(next, current);
    current = next;
    result.iterations = outer + 1;
    if (change < params.convergence_tol) break;

    const double before = data_term(current, targets);
    Targets refreshed = nearest_targets(current, tree, params.correspondence_cutoff);
    int gained = 0;
    for (std::size_t j = 0; j < refreshed.has.size(); ++j)
      if (refreshed.has[j] && !targets.has[j]) ++gained;
    result.data_before_refresh.push_back(before);
    result.data_after_refresh.push_back(refreshed.data_term);
    result.gained_correspondences.push_back(gained);
    if (refreshed.count == 0) break;
    targets = std::move(refreshed);
  }

  result.mesh = with_vertices(templ, current);
  return result;
}

Mesh fit_template(const Mesh& templ, const PointCloud& cloud, const LandmarkSet& user_landmarks,
                  const TemplateFitParams& params) {
  return fit_template_detailed(templ, cloud, user_landmarks, params).mesh;
}

}  // namespace palate
