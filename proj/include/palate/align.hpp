#ifndef PALATE_ALIGN_HPP
#define PALATE_ALIGN_HPP

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "palate/common.hpp"
#include "palate/mesh.hpp"
#include "palate/volume.hpp"

namespace palate {

/// x -> scale * rotation * x + translation.
template <typename Scalar>
struct Similarity {
  Scalar scale = Scalar(1);
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();

  Vec3<Scalar> apply(const Vec3<Scalar>& p) const { return scale * (rotation * p) + translation; }

  Points3<Scalar> apply(const Points3<Scalar>& points) const {
    Points3<Scalar> out = scale * (rotation * points);
    out.colwise() += translation;
    return out;
  }

  Similarity inverse() const {
    Similarity inv;
    inv.scale = Scalar(1) / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.scale * (inv.rotation * translation));
    return inv;
  }

  /// (*this) after `first`.
  Similarity compose(const Similarity& first) const {
    Similarity out;
    out.scale = scale * first.scale;
    out.rotation = rotation * first.rotation;
    out.translation = scale * (rotation * first.translation) + translation;
    return out;
  }
};

using SimilarityTransform = Similarity<double>;

/// Least-squares similarity (or rigid, when `allow_scale` is false) mapping the
/// columns of `src` onto the columns of `dst`, with det(R) forced to +1.
/// Throws when the source points are collinear or coincident.
template <typename Scalar>
Similarity<Scalar> fit_similarity(const Points3<Scalar>& src, const Points3<Scalar>& dst,
                                  bool allow_scale) {
  if (src.cols() != dst.cols() || src.cols() < 3)
    throw Error("align: need at least 3 matched points");
  const Scalar n = static_cast<Scalar>(src.cols());
  const Vec3<Scalar> mu_src = src.rowwise().mean();
  const Vec3<Scalar> mu_dst = dst.rowwise().mean();
  const Points3<Scalar> a = src.colwise() - mu_src;
  const Points3<Scalar> b = dst.colwise() - mu_dst;

  const Mat3<Scalar> src_cov = a * a.transpose() / n;
  Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> spread(src_cov);
  const Vec3<Scalar> ev = spread.eigenvalues();  // ascending
  if (!(ev[2] > Scalar(0)) || ev[1] <= ev[2] * Scalar(1e-12))
    throw Error("align: degenerate landmark configuration (collinear points)");

  const Mat3<Scalar> cov = b * a.transpose() / n;
  Eigen::JacobiSVD<Mat3<Scalar>> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3<Scalar> d = Vec3<Scalar>::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < Scalar(0)) d[2] = Scalar(-1);

  Similarity<Scalar> t;
  t.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  if (allow_scale) {
    const Scalar src_var = a.squaredNorm() / n;
    t.scale = svd.singularValues().dot(d) / src_var;
  }
  t.translation = mu_dst - t.scale * (t.rotation * mu_src);
  return t;
}

SimilarityTransform similarity_from_landmarks(const LandmarkSet& src, const LandmarkSet& dst,
                                              bool allow_scale);

struct IcpParams {
  int max_iter = 50;
  double tol = 1e-9;
  double trim_fraction = 0.1;
};

struct IcpResult {
  SimilarityTransform transform;
  /// Trimmed mean squared correspondence distance, starting with the value at
  /// the initial transform; one entry per completed iteration after that.
  std::vector<double> trimmed_mse;
  int iterations = 0;
};

/// Trimmed point-to-point ICP of the mesh vertices onto the target cloud.
/// Rotation and translation are refined; the scale stays at `init.scale`.
IcpResult icp_refine(const Mesh& moving, const PointCloud& target, const SimilarityTransform& init,
                     const IcpParams& params = {});
IcpResult icp_refine(const Matrix3Xd& moving, const PointCloud& target,
                     const SimilarityTransform& init, const IcpParams& params = {});

struct GpaParams {
  int max_iter = 100;
  double tol = 1e-9;
};

struct GpaResult {
  std::vector<Matrix3Xd> aligned;
  Matrix3Xd consensus;
  int iterations = 0;
  /// RMS per-vertex consensus movement in the last iteration.
  double final_change = 0.0;
};

/// Centroid-size normalized shape: zero centroid, root-sum-of-squares 1.
Matrix3Xd normalize_shape(const Matrix3Xd& shape);

/// Generalized Procrustes alignment. The result is expressed in the principal
/// axes frame of the consensus, so it does not depend on input order or pose.
GpaResult gpa(const std::vector<Mesh>& meshes, const GpaParams& params = {});
GpaResult gpa(const std::vector<Matrix3Xd>& shapes, const GpaParams& params = {});

/// Root mean square of per-vertex distances.
double rmsd(const Matrix3Xd& a, const Matrix3Xd& b);

/// Text form: 13 numbers, R row-major (9), translation (3), scale (1).
void save_transform(const SimilarityTransform& t, const std::filesystem::path& path);
SimilarityTransform load_transform(const std::filesystem::path& path);
std::string format_transform(const SimilarityTransform& t);
SimilarityTransform parse_transform(const std::string& text);

}  // namespace palate

#endif  // PALATE_ALIGN_HPP
