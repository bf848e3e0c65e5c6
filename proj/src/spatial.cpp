#include "palate/spatial.hpp"

#include <algorithm>
#include <numeric>

namespace palate {

namespace {

constexpr int kLeafSize = 8;

double box_squared_distance(const Eigen::AlignedBox3d& box, const Vector3d& q) {
  return box.squaredExteriorDistance(q);
}

}  // namespace

KdTree::KdTree(const Matrix3Xd& points) : points_(points) {
  order_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  for (int i = begin; i < end; ++i) box.extend(points_.col(order_[i]));
  nodes_[id].box = box;
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= kLeafSize) return id;

  Index axis = 0;
  box.sizes().maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double pa = points_(axis, a), pb = points_(axis, b);
                     return pa < pb || (pa == pb && a < b);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node_id, const Vector3d& q, Hit& best) const {
  const Node& node = nodes_[node_id];
  if (box_squared_distance(node.box, q) > best.squared_distance) return;
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const double d2 = (points_.col(idx) - q).squaredNorm();
      if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) {
        best.squared_distance = d2;
        best.index = idx;
      }
    }
    return;
  }
  const double dl = box_squared_distance(nodes_[node.left].box, q);
  const double dr = box_squared_distance(nodes_[node.right].box, q);
  if (dl <= dr) {
    search(node.left, q, best);
    search(node.right, q, best);
  } else {
    search(node.right, q, best);
    search(node.left, q, best);
  }
}

KdTree::Hit KdTree::nearest(const Vector3d& query) const {
  Hit best;
  if (!nodes_.empty()) search(0, query, best);
  return best;
}

TriangleBvh::TriangleBvh(const Matrix3Xd& vertices, const Matrix3Xi& faces)
    : vertices_(vertices), faces_(faces) {
  centroids_.resize(3, faces_.cols());
  for (Index f = 0; f < faces_.cols(); ++f)
    centroids_.col(f) = (vertices_.col(faces_(0, f)) + vertices_.col(faces_(1, f)) +
                         vertices_.col(faces_(2, f))) /
                        3.0;
  order_.resize(static_cast<std::size_t>(faces_.cols()));
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int TriangleBvh::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroid_box;
  for (int i = begin; i < end; ++i) {
    const int f = order_[i];
    for (int c = 0; c < 3; ++c) box.extend(vertices_.col(faces_(c, f)));
    centroid_box.extend(centroids_.col(f));
  }
  nodes_[id].box = box;
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= kLeafSize) return id;

  Index axis = 0;
  centroid_box.sizes().maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double ca = centroids_(axis, a), cb = centroids_(axis, b);
                     return ca < cb || (ca == cb && a < b);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void TriangleBvh::search(int node_id, const Vector3d& q, Hit& best) const {
  const Node& node = nodes_[node_id];
  if (box_squared_distance(node.box, q) > best.squared_distance) return;
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int f = order_[i];
      const Vector3d foot = closest_point_on_triangle<double>(
          q, vertices_.col(faces_(0, f)), vertices_.col(faces_(1, f)), vertices_.col(faces_(2, f)));
      const double d2 = (foot - q).squaredNorm();
      if (d2 < best.squared_distance || (d2 == best.squared_distance && f < best.face)) {
        best.squared_distance = d2;
        best.point = foot;
        best.face = f;
      }
    }
    return;
  }
  const double dl = box_squared_distance(nodes_[node.left].box, q);
  const double dr = box_squared_distance(nodes_[node.right].box, q);
  if (dl <= dr) {
    search(node.left, q, best);
    search(node.right, q, best);
  } else {
    search(node.right, q, best);
    search(node.left, q, best);
  }
}

TriangleBvh::Hit TriangleBvh::closest(const Vector3d& query) const {
  Hit best;
  if (!nodes_.empty()) search(0, query, best);
  return best;
}

}  // namespace palate
