#include "palate/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "palate/spatial.hpp"

namespace palate {

namespace {

struct Correspondences {
  std::vector<int> kept;  // moving vertex indices, ascending by distance
  Matrix3Xd targets;      // one column per kept vertex
  double trimmed_mse = 0.0;
};

Correspondences correspond(const Matrix3Xd& posed, const KdTree& tree, Index keep) {
  const Index n = posed.cols();
  std::vector<KdTree::Hit> hits(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) hits[i] = tree.nearest(posed.col(i));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return hits[a].squared_distance < hits[b].squared_distance;
  });
  order.resize(static_cast<std::size_t>(keep));

  Correspondences c;
  c.kept = order;
  c.targets.resize(3, keep);
  double sum = 0.0;
  for (Index k = 0; k < keep; ++k) {
    c.targets.col(k) = tree.points().col(hits[order[k]].index);
    sum += hits[order[k]].squared_distance;
  }
  c.trimmed_mse = sum / static_cast<double>(keep);
  return c;
}

// Principal axes of a centered shape as rows of a proper rotation. Axis signs
// follow the index-weighted coordinate sum, which is pose independent because
// vertex order is shared across shapes.
Matrix3d principal_frame(const Matrix3Xd& shape) {
  const Matrix3d cov = shape * shape.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
  Matrix3d axes;
  axes.row(0) = eig.eigenvectors().col(2).transpose();
  axes.row(1) = eig.eigenvectors().col(1).transpose();
  const Eigen::VectorXd weights = Eigen::VectorXd::LinSpaced(shape.cols(), 1.0, static_cast<double>(shape.cols()));
  for (int r = 0; r < 2; ++r) {
    const double s = (axes.row(r) * shape).dot(weights.transpose());
    if (s < 0.0) axes.row(r) *= -1.0;
  }
  axes.row(2) = axes.row(0).cross(axes.row(1));
  return axes;
}

Matrix3d rotation_onto(const Matrix3Xd& shape, const Matrix3Xd& target) {
  const Matrix3d cov = target * shape.transpose();
  Eigen::JacobiSVD<Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector3d d = Vector3d::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d[2] = -1.0;
  return svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace

SimilarityTransform similarity_from_landmarks(const LandmarkSet& src, const LandmarkSet& dst,
                                              bool allow_scale) {
  return fit_similarity<double>(src.positions, dst.positions, allow_scale);
}

IcpResult icp_refine(const Mesh& moving, const PointCloud& target, const SimilarityTransform& init,
                     const IcpParams& params) {
  return icp_refine(moving.vertices, target, init, params);
}

IcpResult icp_refine(const Matrix3Xd& moving, const PointCloud& target,
                     const SimilarityTransform& init, const IcpParams& params) {
  if (target.empty()) throw Error("icp: empty target cloud");
  if (moving.cols() < 3) throw Error("icp: need at least 3 moving points");
  if (!(params.trim_fraction >= 0.0 && params.trim_fraction < 1.0))
    throw Error("icp: trim_fraction must be in [0, 1)");

  const KdTree tree(target.points);
  const Index n = moving.cols();
  const Index keep = std::max<Index>(
      3, static_cast<Index>(std::ceil((1.0 - params.trim_fraction) * static_cast<double>(n))));

  IcpResult result;
  result.transform = init;
  Correspondences corr = correspond(init.apply(moving), tree, keep);
  result.trimmed_mse.push_back(corr.trimmed_mse);

  for (int iter = 0; iter < params.max_iter; ++iter) {
    if (corr.trimmed_mse == 0.0) break;
    Matrix3Xd src(3, keep);
    for (Index k = 0; k < keep; ++k) src.col(k) = result.transform.scale * moving.col(corr.kept[k]);

    SimilarityTransform step;
    try {
      step = fit_similarity<double>(src, corr.targets, false);
    } catch (const Error&) {
      break;
    }
    SimilarityTransform candidate = step;
    candidate.scale = result.transform.scale;

    Correspondences next = correspond(candidate.apply(moving), tree, keep);
    const double previous = corr.trimmed_mse;
    if (next.trimmed_mse > previous) break;  // rounding-level stall
    result.transform = candidate;
    corr = std::move(next);
    result.trimmed_mse.push_back(corr.trimmed_mse);
    result.iterations = iter + 1;
    if (previous - corr.trimmed_mse <= params.tol * previous) break;
  }
  return result;
}

Matrix3Xd normalize_shape(const Matrix3Xd& shape) {
  Matrix3Xd centered = shape.colwise() - shape.rowwise().mean();
  const double size = centered.norm();
  if (!(size > 0.0)) throw Error("gpa: shape has zero centroid size");
  return centered / size;
}

double rmsd(const Matrix3Xd& a, const Matrix3Xd& b) {
  if (a.cols() != b.cols()) throw Error("rmsd: vertex count mismatch");
  if (a.cols() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.cols()));
}

GpaResult gpa(const std::vector<Mesh>& meshes, const GpaParams& params) {
  std::vector<Matrix3Xd> shapes;
  shapes.reserve(meshes.size());
  for (const auto& m : meshes) {
    if (!shapes.empty() && (m.faces.cols() != meshes.front().faces.cols() ||
                            m.faces != meshes.front().faces))
      throw Error("gpa: meshes do not share a face set");
    shapes.push_back(m.vertices);
  }
  return gpa(shapes, params);
}

GpaResult gpa(const std::vector<Matrix3Xd>& shapes, const GpaParams& params) {
  if (shapes.size() < 2) throw Error("gpa: need at least 2 shapes");
  const Index nv = shapes.front().cols();
  for (const auto& s : shapes)
    if (s.cols() != nv) throw Error("gpa: mismatched vertex counts");

  std::vector<Matrix3Xd> normalized;
  normalized.reserve(shapes.size());
  for (const auto& s : shapes) normalized.push_back(normalize_shape(s));

  GpaResult result;
  result.aligned = normalized;
  Matrix3Xd consensus = normalized.front();
  for (int iter = 0; iter < params.max_iter; ++iter) {
    Matrix3Xd sum = Matrix3Xd::Zero(3, nv);
    for (std::size_t i = 0; i < normalized.size(); ++i) {
      result.aligned[i] = rotation_onto(normalized[i], consensus) * normalized[i];
      sum += result.aligned[i];
    }
    Matrix3Xd next = normalize_shape(sum);
    result.final_change = rmsd(next, consensus);
    consensus = std::move(next);
    result.iterations = iter + 1;
    if (result.final_change < params.tol) break;
  }
  for (std::size_t i = 0; i < normalized.size(); ++i)
    result.aligned[i] = rotation_onto(normalized[i], consensus) * normalized[i];

  const Matrix3d frame = principal_frame(consensus);
  result.consensus = frame * consensus;
  for (auto& a : result.aligned) a = frame * a;
  return result;
}

std::string format_transform(const SimilarityTransform& t) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (int r = 0; r < 3; ++r)
    out << t.rotation(r, 0) << ' ' << t.rotation(r, 1) << ' ' << t.rotation(r, 2) << '\n';
  out << t.translation.x() << ' ' << t.translation.y() << ' ' << t.translation.z() << '\n';
  out << t.scale << '\n';
  return out.str();
}

SimilarityTransform parse_transform(const std::string& text) {
  std::istringstream in(text);
  SimilarityTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(in >> t.rotation(r, c))) throw Error("transform: expected 13 numbers");
  for (int c = 0; c < 3; ++c)
    if (!(in >> t.translation[c])) throw Error("transform: expected 13 numbers");
  if (!(in >> t.scale)) throw Error("transform: expected 13 numbers");
  if (!(t.scale > 0.0)) throw Error("transform: scale must be positive");
  if ((t.rotation.transpose() * t.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      t.rotation.determinant() <= 0.0)
    throw Error("transform: rotation is not a proper orthonormal matrix");
  return t;
}

void save_transform(const SimilarityTransform& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("transform: cannot write " + path.string());
  out << format_transform(t);
}

SimilarityTransform load_transform(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("transform: not found: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_transform(buffer.str());
}

}  // namespace palate
