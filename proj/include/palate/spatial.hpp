#ifndef PALATE_SPATIAL_HPP
#define PALATE_SPATIAL_HPP

#include <limits>
#include <vector>

#include <Eigen/Geometry>

#include "palate/common.hpp"

namespace palate {

/// Closest point to `p` on the closed triangle (a, b, c), by Voronoi-region
/// classification (vertex, edge, or face interior).
template <typename Scalar>
Vec3<Scalar> closest_point_on_triangle(const Vec3<Scalar>& p, const Vec3<Scalar>& a,
                                       const Vec3<Scalar>& b, const Vec3<Scalar>& c) {
  const Vec3<Scalar> ab = b - a;
  const Vec3<Scalar> ac = c - a;
  const Vec3<Scalar> ap = p - a;
  const Scalar d1 = ab.dot(ap);
  const Scalar d2 = ac.dot(ap);
  if (d1 <= Scalar(0) && d2 <= Scalar(0)) return a;

  const Vec3<Scalar> bp = p - b;
  const Scalar d3 = ab.dot(bp);
  const Scalar d4 = ac.dot(bp);
  if (d3 >= Scalar(0) && d4 <= d3) return b;

  const Scalar vc = d1 * d4 - d3 * d2;
  if (vc <= Scalar(0) && d1 >= Scalar(0) && d3 <= Scalar(0)) {
    const Scalar v = d1 / (d1 - d3);
    return a + v * ab;
  }

  const Vec3<Scalar> cp = p - c;
  const Scalar d5 = ab.dot(cp);
  const Scalar d6 = ac.dot(cp);
  if (d6 >= Scalar(0) && d5 <= d6) return c;

  const Scalar vb = d5 * d2 - d1 * d6;
  if (vb <= Scalar(0) && d2 >= Scalar(0) && d6 <= Scalar(0)) {
    const Scalar w = d2 / (d2 - d6);
    return a + w * ac;
  }

  const Scalar va = d3 * d6 - d5 * d4;
  if (va <= Scalar(0) && (d4 - d3) >= Scalar(0) && (d5 - d6) >= Scalar(0)) {
    const Scalar w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return b + w * (c - b);
  }

  const Scalar denom = Scalar(1) / (va + vb + vc);
  const Scalar v = vb * denom;
  const Scalar w = vc * denom;
  return a + ab * v + ac * w;
}

/// Exact nearest-neighbour queries over a fixed point set. Equal distances
/// resolve to the lowest point index, matching a linear scan.
class KdTree {
public:
  KdTree() = default;
  explicit KdTree(const Matrix3Xd& points);

  struct Hit {
    Index index = -1;
    double squared_distance = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vector3d& query) const;
  Index size() const { return points_.cols(); }
  const Matrix3Xd& points() const { return points_; }

private:
  struct Node {
    Eigen::AlignedBox3d box;
    int begin = 0;
    int end = 0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);
  void search(int node, const Vector3d& q, Hit& best) const;

  Matrix3Xd points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Bounding-volume hierarchy over triangles for closest-point queries. The
/// result is identical to scanning every triangle in index order and keeping
/// the first minimum.
class TriangleBvh {
public:
  TriangleBvh() = default;
  TriangleBvh(const Matrix3Xd& vertices, const Matrix3Xi& faces);

  struct Hit {
    Vector3d point = Vector3d::Zero();
    double squared_distance = std::numeric_limits<double>::infinity();
    Index face = -1;
  };

  Hit closest(const Vector3d& query) const;

private:
  struct Node {
    Eigen::AlignedBox3d box;
    int begin = 0;
    int end = 0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);
  void search(int node, const Vector3d& q, Hit& best) const;

  Matrix3Xd vertices_;
  Matrix3Xi faces_;
  Matrix3Xd centroids_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace palate

#endif  // PALATE_SPATIAL_HPP
