#include "palate/modelfit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "palate/lbfgsb.hpp"
#include "palate/spatial.hpp"

namespace palate {

namespace {

FitTargets nearest_targets(const Matrix3Xd& vertices, const KdTree& tree, double cutoff,
                           std::vector<Index>* hits = nullptr) {
  FitTargets t;
  std::vector<Index> found;
  const double cutoff2 = cutoff * cutoff;
  for (Index j = 0; j < vertices.cols(); ++j) {
    const auto hit = tree.nearest(vertices.col(j));
    if (hit.squared_distance <= cutoff2) {
      t.vertices.push_back(static_cast<int>(j));
      found.push_back(hit.index);
    }
  }
  t.points.resize(3, static_cast<Index>(found.size()));
  for (std::size_t k = 0; k < found.size(); ++k) t.points.col(static_cast<Index>(k)) = tree.points().col(found[k]);
  if (hits) *hits = std::move(found);
  return t;
}

// Sum over vertices of min(d^2, cutoff^2) to the nearest data point, so
// poses matching different vertex subsets stay comparable.
double truncated_energy(const Matrix3Xd& vertices, const KdTree& tree, double cutoff) {
  const double cap = cutoff * cutoff;
  double sum = 0.0;
  for (Index j = 0; j < vertices.cols(); ++j) sum += std::min(tree.nearest(vertices.col(j)).squared_distance, cap);
  return sum;
}

// Minimizes the mm^2 energy over c inside the box |c_i| <= sqrt(lambda_i).
// Returns the report; `c` is updated in place.
LbfgsbReport<double> solve_block(const ShapeSpaceModel& model, const FitTargets& targets,
                                 double scale, int budget, double grad_tol, Eigen::VectorXd& c) {
  const Eigen::VectorXd sd = model.standard_deviations();
  const FittingEnergy energy(model, targets);
  const double s2 = scale * scale;
  auto objective = [&](const Eigen::VectorXd& cc, Eigen::VectorXd& grad) {
    const double value = energy(cc, grad);
    grad *= s2;
    return s2 * value;
  };
  LbfgsbOptions<double> opts;
  opts.max_iter = budget;
  opts.pg_tol = grad_tol;
  // The clamp onto these bounds returns sd_i itself, so the box holds exactly.
  return minimize_box_constrained<double>(objective, c, Eigen::VectorXd(-sd), sd, opts);
}

FitResult finish(const ShapeSpaceModel& model, FitResult fit, const Eigen::VectorXd& c) {
  fit.coefficients = c;
  fit.log_density = log_density(model, fit.coefficients);
  return fit;
}

void check_params(const FitParams& params) {
  if (params.max_iter < 1) throw Error("fit: max_iter must be >= 1");
  if (!(params.grad_tol > 0.0)) throw Error("fit: grad_tol must be > 0");
  if (!(params.correspondence_cutoff > 0.0)) throw Error("fit: correspondence_cutoff must be > 0");
  if (params.refresh_correspondences_every < 1) throw Error("fit: refresh interval must be >= 1");
}

}  // namespace

EnergyValue fitting_energy(const ShapeSpaceModel& model, const CoefficientVector& c,
                           const FitTargets& targets) {
  if (targets.size() == 0) throw Error("fit: empty target list");
  if (targets.points.cols() != targets.size()) throw Error("fit: target size mismatch");
  if (c.size() != model.modes()) throw Error("fit: coefficient length mismatch");
  const Eigen::VectorXd x = generate_vector(model, c);
  const Index nv = model.vertex_count();
  EnergyValue out;
  out.gradient = Eigen::VectorXd::Zero(model.modes());
  for (Index t = 0; t < targets.size(); ++t) {
    const int j = targets.vertices[t];
    if (j < 0 || j >= nv) throw Error("fit: target vertex index out of range");
    const Vector3d r = x.segment<3>(3 * j) - targets.points.col(t);
    out.value += r.squaredNorm();
    out.gradient.noalias() += 2.0 * model.basis.middleRows<3>(3 * j).transpose() * r;
  }
  return out;
}

FittingEnergy::FittingEnergy(const ShapeSpaceModel& model, const FitTargets& targets) {
  if (targets.size() == 0) throw Error("fit: empty target list");
  const Index nt = targets.size();
  const Index nv = model.vertex_count();
  basis_rows_.resize(3 * nt, model.modes());
  Eigen::VectorXd base(3 * nt);
  for (Index t = 0; t < nt; ++t) {
    const int j = targets.vertices[t];
    if (j < 0 || j >= nv) throw Error("fit: target vertex index out of range");
    basis_rows_.middleRows<3>(3 * t) = model.basis.middleRows<3>(3 * j);
    base.segment<3>(3 * t) = model.mean.segment<3>(3 * j) - targets.points.col(t);
  }
  offset_ = base + basis_rows_ * model.coeff_means;
}

double FittingEnergy::operator()(const CoefficientVector& c, Eigen::VectorXd& gradient) const {
  const Eigen::VectorXd r = offset_ + basis_rows_ * c;
  gradient = 2.0 * (basis_rows_.transpose() * r);
  return r.squaredNorm();
}

FitResult fit_to_cloud(const ShapeSpaceModel& model, const PointCloud& cloud,
                       const LandmarkSet& user_landmarks, const FitParams& params) {
  if (cloud.empty()) throw Error("fit: empty cloud");
  check_params(params);

  const Mesh mean_mesh = generate(model, CoefficientVector::Zero(model.modes()));
  const SimilarityTransform init =
      similarity_from_landmarks(landmark_positions(mean_mesh), user_landmarks, true);

  FitResult fit;
  fit.transform = icp_refine(mean_mesh, cloud, init, params.icp).transform;

  const KdTree data_tree(cloud.points);
  // Correspondences are searched in the model frame; distances there are mm / scale.
  KdTree tree(fit.transform.inverse().apply(cloud.points));
  double cutoff = params.correspondence_cutoff / fit.transform.scale;

  Eigen::VectorXd c = Eigen::VectorXd::Zero(model.modes());
  std::vector<Index> hits;
  FitTargets targets = nearest_targets(shape_vertices(generate_vector(model, c)), tree, cutoff, &hits);
  if (targets.size() == 0) throw Error("fit: no correspondences within cutoff");

  int used = 0;
  while (used < params.max_iter) {
    const int remaining = params.max_iter - used;
    const bool may_refresh = fit.refreshes < params.max_refreshes;
    const int budget = may_refresh ? std::min(remaining, params.refresh_correspondences_every) : remaining;
    const auto report = solve_block(model, targets, fit.transform.scale, budget, params.grad_tol, c);
    used += report.iterations;
    fit.iterations = used;
    fit.converged = report.converged;
    fit.final_energy = report.value;
    fit.energy_blocks.push_back(report.history);

    // Re-pose the current shape; kept only when it lowers the data energy.
    bool moved = false;
    if (params.refine_pose) {
      const Mesh shape = generate(model, c);
      const SimilarityTransform start =
          similarity_from_landmarks(landmark_positions(shape), user_landmarks, true);
      const SimilarityTransform candidate = icp_refine(shape, cloud, start, params.icp).transform;
      const double now = truncated_energy(fit.transform.apply(shape.vertices), data_tree,
                                          params.correspondence_cutoff);
      const double then = truncated_energy(candidate.apply(shape.vertices), data_tree,
                                           params.correspondence_cutoff);
      if (then < now * (1.0 - 1e-12)) {
        fit.transform = candidate;
        tree = KdTree(fit.transform.inverse().apply(cloud.points));
        cutoff = params.correspondence_cutoff / fit.transform.scale;
        moved = true;
      }
    }

    if (may_refresh) {
      std::vector<Index> new_hits;
      FitTargets next = nearest_targets(shape_vertices(generate_vector(model, c)), tree, cutoff, &new_hits);
      if (next.size() == 0) break;
      const bool same = next.vertices == targets.vertices && new_hits == hits;
      if (same && !moved && report.converged) break;
      if (!same) ++fit.refreshes;
      targets = std::move(next);
      hits = std::move(new_hits);
    } else {
      if (!moved && report.converged) break;
      // Same vertex-to-point pairs, re-expressed in the new model frame.
      for (std::size_t k = 0; k < hits.size(); ++k) targets.points.col(static_cast<Index>(k)) = tree.points().col(hits[k]);
    }
    if (!moved && report.iterations == 0) break;
  }
  return finish(model, std::move(fit), c);
}

FitResult fit_to_landmarks(const ShapeSpaceModel& model, const LandmarkSet& data_landmarks,
                           const FitParams& params) {
  check_params(params);
  std::vector<int> vertices;
  for (int i = 0; i < kLandmarkCount; ++i) {
    const auto it = model.landmark_indices.find(std::string(kLandmarkNames[i]));
    if (it == model.landmark_indices.end())
      throw Error("fit: model lacks landmark " + std::string(kLandmarkNames[i]));
    vertices.push_back(it->second);
  }
  const Matrix3Xd data = data_landmarks.positions;
  auto model_landmarks = [&](const Eigen::VectorXd& c) {
    const Matrix3Xd v = shape_vertices(generate_vector(model, c));
    Matrix3Xd out(3, kLandmarkCount);
    for (int i = 0; i < kLandmarkCount; ++i) out.col(i) = v.col(vertices[i]);
    return out;
  };

  FitResult fit;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(model.modes());
  fit.transform = fit_similarity<double>(model_landmarks(c), data, true);
  int used = 0;
  for (int r = 0; r <= params.max_refreshes; ++r) {
    FitTargets targets;
    targets.vertices = vertices;
    targets.points = fit.transform.inverse().apply(data);
    const int remaining = params.max_iter - used;
    if (remaining <= 0) break;
    const auto report = solve_block(model, targets, fit.transform.scale, remaining, params.grad_tol, c);
    used += report.iterations;
    fit.iterations = used;
    fit.converged = report.converged;
    fit.final_energy = report.value;
    fit.refreshes = r;
    fit.energy_blocks.push_back(report.history);
    if (!params.refine_pose || r == params.max_refreshes) break;

    // Correspondences are fixed; only the pose is re-estimated.
    const Matrix3Xd current = model_landmarks(c);
    const SimilarityTransform candidate = fit_similarity<double>(current, data, true);
    const double now = (fit.transform.apply(current) - data).squaredNorm();
    const double then = (candidate.apply(current) - data).squaredNorm();
    if (!(then < now * (1.0 - 1e-12))) break;
    fit.transform = candidate;
  }
  return finish(model, std::move(fit), c);
}

Mesh fitted_mesh(const ShapeSpaceModel& model, const FitResult& fit) {
  Mesh mesh = generate(model, fit.coefficients);
  mesh.vertices = fit.transform.apply(mesh.vertices);
  return mesh;
}

std::string format_fit_result(const FitResult& fit) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "transform\n" << format_transform(fit.transform);
  out << "coefficients " << fit.coefficients.size() << '\n';
  for (Index i = 0; i < fit.coefficients.size(); ++i) out << fit.coefficients[i] << '\n';
  out << "energy " << fit.final_energy << '\n';
  out << "iterations " << fit.iterations << '\n';
  out << "log_density " << fit.log_density << '\n';
  return out.str();
}

FitResult parse_fit_result(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  FitResult fit;
  if (!(in >> tag) || tag != "transform") throw Error("fit result: expected transform block");
  std::ostringstream block;
  for (int i = 0; i < 13; ++i) {
    double v;
    if (!(in >> v)) throw Error("fit result: truncated transform");
    block << std::setprecision(17) << v << ' ';
  }
  fit.transform = parse_transform(block.str());
  Index d = 0;
  if (!(in >> tag >> d) || tag != "coefficients" || d < 0) throw Error("fit result: expected coefficients");
  fit.coefficients.resize(d);
  for (Index i = 0; i < d; ++i)
    if (!(in >> fit.coefficients[i])) throw Error("fit result: truncated coefficients");
  if (!(in >> tag >> fit.final_energy) || tag != "energy") throw Error("fit result: expected energy");
  if (!(in >> tag >> fit.iterations) || tag != "iterations") throw Error("fit result: expected iterations");
  if (!(in >> tag >> fit.log_density) || tag != "log_density") throw Error("fit result: expected log_density");
  return fit;
}

void save_fit_result(const FitResult& fit, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("fit result: cannot write " + path.string());
  out << format_fit_result(fit);
}

}  // namespace palate
