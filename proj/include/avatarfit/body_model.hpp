#pragma once

#include "avatarfit/mesh.hpp"
#include "avatarfit/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace avatarfit {

enum class TensorDtype { F32, F64 };

/// Linear-blend-skinning body model.
///
/// Per-vertex coefficient tensors are stored flattened to N rows:
///   shape_dirs  N × 3|β|        column c*|β| + b
///   expr_dirs   N × 3|ψ|        column c*|ψ| + e
///   pose_dirs   N × 3·9(K−1)    column c*9(K−1) + f
///   skin_weights N × K
/// and the joint regressor is K × N.
struct ParametricModel {
  std::string name = "model";
  Points template_vertices;
  Faces faces;
  RowMatrix shape_dirs;
  RowMatrix expr_dirs;
  RowMatrix pose_dirs;
  RowMatrix joint_regressor;
  RowMatrix skin_weights;
  /// Parent joint per joint; -1 marks the root (joint 0).
  std::vector<int> parents;
  std::vector<std::string> joint_names;
  Points2 uv_coords;
  Faces uv_faces;
  /// Precision used when the model is written back to disk.
  TensorDtype storage_dtype = TensorDtype::F32;

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_joints() const { return static_cast<int>(parents.size()); }
  int shape_dim() const;
  int expr_dim() const;
  int pose_feature_dim() const { return 9 * (num_joints() - 1); }

  /// Throws ShapeMismatch or InvariantViolation on the first violated
  /// invariant (tensor shapes, skin-weight partition of unity, parent tree).
  void validate() const;

  /// Template geometry as a mesh (UVs included when present).
  TriMesh rest_mesh() const;
};

struct BodyParams {
  /// K × 3 axis-angle rotations, row 0 is the global orientation.
  Points theta;
  Eigen::VectorXd beta;
  Eigen::VectorXd psi;
  std::optional<Points> displacement;

  /// Zero pose, shape and expression for `model`.
  static BodyParams zeros(const ParametricModel& model);
};

struct PosedResult {
  Points vertices;
  Points joints_rest;
  /// World transform of each joint frame: rotation composed along the
  /// parent chain, translation equal to the posed joint location.
  std::vector<RigidTransform> joint_transforms;
};

Mat3 rodrigues(const Vec3& axis_angle);

/// T̄ + shape and expression blend offsets.
Points shaped_template(const ParametricModel& model, const Eigen::VectorXd& beta,
                       const Eigen::VectorXd& psi);

/// Concatenated (R(θ_k) − I) row-major for the non-root joints.
Eigen::VectorXd pose_feature(const Points& theta);

/// Pose-dependent offsets pose_dirs · pose_feature(θ).
Points pose_offsets(const ParametricModel& model, const Points& theta);

Points regress_joints(const ParametricModel& model, const Points& shaped_vertices);

/// World joint transforms from rest joints and pose.
std::vector<RigidTransform> joint_world_transforms(const ParametricModel& model,
                                                   const Points& joints_rest, const Points& theta);

/// Rest-space T_P = shaped template + pose offsets + displacement.
Points displaced_template(const ParametricModel& model, const BodyParams& params);

PosedResult lbs_forward(const ParametricModel& model, const BodyParams& params);

/// Maps posed vertices back to the T-pose by inverting each vertex's
/// blended skinning transform. `params.displacement` is ignored. Returns T_P
/// (displacement included); subtract displaced_template() without D to get D.
Points lbs_inverse(const ParametricModel& model, const Points& posed_vertices, const BodyParams& params);

/// Throws DimensionMismatch unless params match the model dimensions.
void check_params(const ParametricModel& model, const BodyParams& params);

}  // namespace avatarfit
