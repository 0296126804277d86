#pragma once

#include "avatarfit/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace avatarfit {

using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Pinhole camera with world-to-camera extrinsics: x_cam = R x_world + t.
struct Camera {
  std::string id;
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 0;
  int height = 0;

  /// P = K [R | t].
  Mat34 projection() const;
  void validate() const;
};

struct CameraSet {
  std::vector<Camera> cameras;

  /// Index of the camera with `id`, or -1.
  int find(const std::string& id) const;
  void validate() const;
};

struct Observation2D {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
};

/// Observations of one frame: views[c][j] is joint j in camera c (CameraSet
/// order). An absent view is an empty vector.
struct Frame2D {
  int frame = 0;
  std::vector<std::vector<Observation2D>> views;
};

struct Keypoints2D {
  std::vector<Frame2D> frames;
};

struct Joint3D {
  Vec3 point = Vec3::Zero();
  std::vector<int> inliers;  // camera indices
  double error_px = 0.0;
};

struct Frame3D {
  int frame = 0;
  std::vector<std::optional<Joint3D>> joints;
  /// reprojections[c][j]: joint j reprojected into camera c (nullopt when
  /// the joint is invalid or lies behind the camera).
  std::vector<std::vector<std::optional<Vec2>>> reprojections;
};

struct Keypoints3D {
  std::vector<Frame3D> frames;
};

struct RansacParams {
  double tau = 8.0;
  double p = 0.99;
  int v = 2;
  long max_iters_init = 10000;
  double min_error_init = 1000.0;
  double conf_min = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProjectedPoint {
  Vec2 pixel;
  double depth = 0.0;
};

/// Projects X and reports the homogeneous depth. Never throws.
ProjectedPoint project_with_depth(const Mat34& P, const Vec3& X);

/// Perspective projection; throws BehindCamera when depth <= 0.
Vec2 project(const Mat34& P, const Vec3& X);

struct ViewObservation {
  Mat34 P;
  Vec2 pixel;
};

/// Homogeneous DLT from >= 2 views. Throws DegenerateGeometry when the
/// solution is ambiguous (two near-equal smallest singular values or rank < 3).
Vec3 triangulate_dlt(const std::vector<ViewObservation>& observations);

/// ⌈log(1−p) / log(1−r^v)⌉, clamped to 1 for perfect consensus.
long adaptive_iterations(double p, double inlier_ratio, int v);

struct RansacResult {
  Vec3 point = Vec3::Zero();
  std::vector<int> inliers;
  double error_px = 0.0;
  long iterations = 0;
};

/// Adaptive RANSAC over views for one joint. obs[c] is camera c's detection.
/// Throws InsufficientViews or NoConsensus.
RansacResult ransac_triangulate_joint(const std::vector<std::optional<Observation2D>>& obs, const CameraSet& cameras,
                                      const RansacParams& params);

/// Per-frame, per-joint RANSAC. Invalid joints come back as nullopt. The
/// random stream of each (frame, joint) is derived from params.seed, so the
/// result does not depend on `jobs`.
Keypoints3D triangulate_sequence(const Keypoints2D& keypoints, const CameraSet& cameras, const RansacParams& params,
                                 int jobs = 1);

}  // namespace avatarfit
