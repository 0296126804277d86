#include "avatarfit/spatial.hpp"

#include "avatarfit/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace avatarfit {

// Real-Time Collision Detection (Ericson), 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return a + v * ab;
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return a + w * ac;
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return b + w * (c - b);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return a + ab * v + ac * w;
}

namespace {
constexpr int kLeafSize = 4;
}

SurfaceIndex::SurfaceIndex(const TriMesh& mesh) {
  if (mesh.num_faces() == 0) throw Error(ErrorCode::InvalidMesh, "surface index needs at least one face");
  corners_.resize(mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int c = 0; c < 3; ++c) corners_[f][c] = mesh.vertex(mesh.faces(f, c));
  }
  order_.resize(corners_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * corners_.size() / kLeafSize + 2);
  build(0, static_cast<int>(order_.size()));
}

int SurfaceIndex::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroid_box;
  for (int i = begin; i < end; ++i) {
    const auto& tri = corners_[order_[i]];
    for (const auto& p : tri) box.extend(p);
    centroid_box.extend((tri[0] + tri[1] + tri[2]) / 3.0);
  }
  nodes_[id].box = box;
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  int axis = 0;
  centroid_box.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int x, int y) {
    const double cx = corners_[x][0][axis] + corners_[x][1][axis] + corners_[x][2][axis];
    const double cy = corners_[y][0][axis] + corners_[y][1][axis] + corners_[y][2][axis];
    return cx < cy || (cx == cy && x < y);
  });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void SurfaceIndex::query(int node_id, const Vec3& q, SurfacePoint& best) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int f = order_[i];
      const auto& tri = corners_[f];
      const Vec3 p = closest_point_on_triangle(q, tri[0], tri[1], tri[2]);
      const double d = (p - q).norm();
      if (d < best.distance || (d == best.distance && f < best.face_id)) {
        best = {p, f, d};
      }
    }
    return;
  }
  const double dl = nodes_[node.left].box.exteriorDistance(q);
  const double dr = nodes_[node.right].box.exteriorDistance(q);
  const int first = dl <= dr ? node.left : node.right;
  const int second = dl <= dr ? node.right : node.left;
  // Equality keeps subtrees that could hold an equal-distance, lower-id face.
  if (std::min(dl, dr) <= best.distance) query(first, q, best);
  if (std::max(dl, dr) <= best.distance) query(second, q, best);
}

SurfacePoint SurfaceIndex::nearest(const Vec3& query_point) const {
  SurfacePoint best{Vec3::Zero(), -1, std::numeric_limits<double>::infinity()};
  query(0, query_point, best);
  return best;
}

SurfacePoint nearest_point_on_surface(const TriMesh& mesh, const Vec3& query) {
  return SurfaceIndex(mesh).nearest(query);
}

PointIndex::PointIndex(const Points& points) : points_(points) {
  if (points_.rows() == 0) throw Error(ErrorCode::InvalidArgument, "point index needs at least one point");
  std::vector<int> ids(points_.rows());
  std::iota(ids.begin(), ids.end(), 0);
  nodes_.reserve(ids.size());
  root_ = build(ids, 0, static_cast<int>(ids.size()), 0);
}

int PointIndex::build(std::vector<int>& ids, int begin, int end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(ids.begin() + begin, ids.begin() + mid, ids.begin() + end, [&](int a, int b) {
    return points_(a, axis) < points_(b, axis) || (points_(a, axis) == points_(b, axis) && a < b);
  });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({ids[mid], axis, -1, -1});
  const int left = build(ids, begin, mid, depth + 1);
  const int right = build(ids, mid + 1, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void PointIndex::query(int node_id, const Vec3& q, int& best, double& best_d2) const {
  if (node_id < 0) return;
  const Node& node = nodes_[node_id];
  const double d2 = (points_.row(node.point).transpose() - q).squaredNorm();
  if (d2 < best_d2 || (d2 == best_d2 && node.point < best)) {
    best_d2 = d2;
    best = node.point;
  }
  const double delta = q[node.axis] - points_(node.point, node.axis);
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  query(near, q, best, best_d2);
  if (delta * delta <= best_d2) query(far, q, best, best_d2);
}

int PointIndex::nearest(const Vec3& q) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  query(root_, q, best, best_d2);
  return best;
}

double PointIndex::nearest_distance(const Vec3& q) const {
  return (points_.row(nearest(q)).transpose() - q).norm();
}

}  // namespace avatarfit
