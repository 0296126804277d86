#pragma once

#include "avatarfit/mesh.hpp"
#include "avatarfit/types.hpp"

#include <Eigen/Geometry>
#include <array>
#include <vector>

namespace avatarfit {

struct SurfacePoint {
  Vec3 point;
  int face_id = -1;
  double distance = 0.0;
};

/// Closest point to p on triangle (a, b, c), via Voronoi-region classification.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Bounding-volume hierarchy over the triangles of a mesh for exact
/// closest-point queries. Holds a copy of the geometry; immutable and safe
/// for concurrent queries once built.
class SurfaceIndex {
 public:
  explicit SurfaceIndex(const TriMesh& mesh);

  /// Exact closest surface point. Ties between faces resolve to the lowest
  /// face id.
  SurfacePoint nearest(const Vec3& query) const;

  int num_faces() const { return static_cast<int>(corners_.size()); }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;   // child node, or -1 for leaves
    int right = -1;
    int begin = 0;   // range into order_ for leaves
    int end = 0;
  };

  int build(int begin, int end);
  void query(int node, const Vec3& q, SurfacePoint& best) const;

  std::vector<std::array<Vec3, 3>> corners_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// One-shot closest point on a mesh (builds a temporary index).
SurfacePoint nearest_point_on_surface(const TriMesh& mesh, const Vec3& query);

/// KD-tree over a point set for exact Euclidean nearest neighbours.
class PointIndex {
 public:
  explicit PointIndex(const Points& points);

  /// Index of the nearest point; ties resolve to the lowest index.
  int nearest(const Vec3& query) const;
  double nearest_distance(const Vec3& query) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::vector<int>& ids, int begin, int end, int depth);
  void query(int node, const Vec3& q, int& best, double& best_d2) const;

  Points points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace avatarfit
