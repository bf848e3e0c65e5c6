#ifndef PALATE_SHAPESPACE_HPP
#define PALATE_SHAPESPACE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "palate/common.hpp"
#include "palate/mesh.hpp"

namespace palate {

/// PCA shape space with a diagonal Gaussian over the coefficients.
///
/// A shape vector stacks vertex coordinates as (x1, y1, z1, x2, ...). Shapes
/// are generated as
///
///     x = mean + sum_i (coeff_means[i] + c[i]) * basis.col(i)
///
/// and the coefficient offsets c are what fitting and sampling operate on.
struct ShapeSpaceModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;  // k x d, orthonormal columns
  Eigen::VectorXd coeff_means;
  Eigen::VectorXd variances;  // non-increasing
  Matrix3Xi faces;
  std::map<std::string, int> landmark_indices;
  std::uint32_t n_train = 0;
  /// Divisor used for the sample covariance: n - 1 (tag 1) or n (tag 0).
  std::uint8_t covariance_divisor_tag = 1;

  Index dimension() const { return mean.size(); }
  Index modes() const { return basis.cols(); }
  Index vertex_count() const { return mean.size() / 3; }

  /// Per-mode box half-widths sqrt(lambda_i).
  Eigen::VectorXd standard_deviations() const { return variances.cwiseSqrt(); }

  /// Throws if any structural invariant fails (orthonormality to 1e-10,
  /// ordering, sizes, face indices).
  void validate() const;
};

using CoefficientVector = Eigen::VectorXd;

/// Stacks vertex columns into a shape vector.
inline Eigen::VectorXd shape_vector(const Matrix3Xd& vertices) {
  return Eigen::Map<const Eigen::VectorXd>(vertices.data(), vertices.size());
}

inline Matrix3Xd shape_vertices(const Eigen::VectorXd& x) {
  return Eigen::Map<const Matrix3Xd>(x.data(), 3, x.size() / 3);
}

/// Trains on meshes that are already Procrustes aligned. Keeps the smallest
/// number of leading modes whose variance reaches `variance_keep` of the total.
ShapeSpaceModel train(const std::vector<Mesh>& meshes, double variance_keep = 1.0);

Mesh generate(const ShapeSpaceModel& model, const CoefficientVector& c);
/// Shape vector of generate(model, c) without building a mesh.
Eigen::VectorXd generate_vector(const ShapeSpaceModel& model, const CoefficientVector& c);

CoefficientVector project(const ShapeSpaceModel& model, const Mesh& mesh);
CoefficientVector project(const ShapeSpaceModel& model, const Eigen::VectorXd& shape);

/// Log of the diagonal Gaussian density of the coefficient offsets.
double log_density(const ShapeSpaceModel& model, const CoefficientVector& c);

/// Binary "PSM1" format, little-endian.
void save_model(const ShapeSpaceModel& model, const std::filesystem::path& path);
ShapeSpaceModel load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const ShapeSpaceModel& model);
ShapeSpaceModel deserialize_model(const std::vector<std::uint8_t>& bytes);

}  // namespace palate

#endif  // PALATE_SHAPESPACE_HPP
