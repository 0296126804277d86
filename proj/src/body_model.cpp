#include "avatarfit/body_model.hpp"

#include "avatarfit/error.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace avatarfit {

namespace {

std::string dims(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void expect_shape(const char* name, const RowMatrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::ShapeMismatch, std::string(name) + " has shape " + dims(m.rows(), m.cols()) +
                                              ", expected " + dims(rows, cols));
  }
}

// Contracts an N × 3D coefficient block with a D-vector into N × 3 offsets.
Points contract(const RowMatrix& dirs, const Eigen::VectorXd& coeffs) {
  const Eigen::Index n = dirs.rows();
  const Eigen::Index d = coeffs.size();
  Points out = Points::Zero(n, 3);
  if (d == 0) return out;
  for (int c = 0; c < 3; ++c) out.col(c) = dirs.middleCols(c * d, d) * coeffs;
  return out;
}

}  // namespace

int ParametricModel::shape_dim() const { return static_cast<int>(shape_dirs.cols() / 3); }
int ParametricModel::expr_dim() const { return static_cast<int>(expr_dirs.cols() / 3); }

void ParametricModel::validate() const {
  const int n = num_vertices();
  const int k = num_joints();
  if (k < 1) throw Error(ErrorCode::InvariantViolation, "model has no joints");
  if (shape_dirs.cols() % 3 != 0) throw Error(ErrorCode::ShapeMismatch, "shape_dirs column count not a multiple of 3");
  if (expr_dirs.cols() % 3 != 0) throw Error(ErrorCode::ShapeMismatch, "expr_dirs column count not a multiple of 3");
  expect_shape("shape_dirs", shape_dirs, n, shape_dirs.cols());
  expect_shape("expr_dirs", expr_dirs, n, expr_dirs.cols());
  expect_shape("pose_dirs", pose_dirs, n, 3 * pose_feature_dim());
  expect_shape("joint_regressor", joint_regressor, k, n);
  expect_shape("skin_weights", skin_weights, n, k);

  if (parents[0] != -1) throw Error(ErrorCode::InvariantViolation, "joint 0 must be the root (parent -1)");
  for (int j = 1; j < k; ++j) {
    if (parents[j] < 0 || parents[j] >= j) {
      throw Error(ErrorCode::InvariantViolation,
                  "joint " + std::to_string(j) + " has parent " + std::to_string(parents[j]) +
                      "; parents must precede children");
    }
  }
  for (int v = 0; v < n; ++v) {
    const auto row = skin_weights.row(v);
    if ((row.array() < -1e-12).any() || (row.array() > 1.0 + 1e-12).any()) {
      throw Error(ErrorCode::InvariantViolation, "skin weight outside [0,1] at vertex " + std::to_string(v));
    }
    if (std::abs(row.sum() - 1.0) > 1e-6) {
      throw Error(ErrorCode::InvariantViolation, "skin weights of vertex " + std::to_string(v) + " sum to " +
                                                     std::to_string(row.sum()));
    }
  }
  if (!joint_names.empty() && static_cast<int>(joint_names.size()) != k) {
    throw Error(ErrorCode::ShapeMismatch, "joint_names length differs from joint count");
  }
  rest_mesh().validate();
}

TriMesh ParametricModel::rest_mesh() const {
  TriMesh mesh;
  mesh.vertices = template_vertices;
  mesh.faces = faces;
  mesh.uv_coords = uv_coords;
  mesh.uv_faces = uv_faces;
  return mesh;
}

BodyParams BodyParams::zeros(const ParametricModel& model) {
  BodyParams p;
  p.theta = Points::Zero(model.num_joints(), 3);
  p.beta = Eigen::VectorXd::Zero(model.shape_dim());
  p.psi = Eigen::VectorXd::Zero(model.expr_dim());
  return p;
}

void check_params(const ParametricModel& model, const BodyParams& params) {
  if (params.theta.rows() != model.num_joints()) {
    throw Error(ErrorCode::DimensionMismatch, "theta has " + std::to_string(params.theta.rows()) +
                                                  " joints, model has " + std::to_string(model.num_joints()));
  }
  if (params.beta.size() != model.shape_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "beta has " + std::to_string(params.beta.size()) +
                                                  " entries, model has " + std::to_string(model.shape_dim()));
  }
  if (params.psi.size() != model.expr_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "psi has " + std::to_string(params.psi.size()) +
                                                  " entries, model has " + std::to_string(model.expr_dim()));
  }
  if (params.displacement && params.displacement->rows() != model.num_vertices()) {
    throw Error(ErrorCode::DimensionMismatch, "displacement row count differs from vertex count");
  }
}

Mat3 rodrigues(const Vec3& axis_angle) {
  const double angle2 = axis_angle.squaredNorm();
  Mat3 k;
  k << 0.0, -axis_angle.z(), axis_angle.y(),
       axis_angle.z(), 0.0, -axis_angle.x(),
       -axis_angle.y(), axis_angle.x(), 0.0;
  double a;  // sin(θ)/θ
  double b;  // (1 − cos θ)/θ²
  if (angle2 < 1e-12) {
    a = 1.0 - angle2 / 6.0;
    b = 0.5 - angle2 / 24.0;
  } else {
    const double angle = std::sqrt(angle2);
    a = std::sin(angle) / angle;
    b = (1.0 - std::cos(angle)) / angle2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

Points shaped_template(const ParametricModel& model, const Eigen::VectorXd& beta, const Eigen::VectorXd& psi) {
  if (beta.size() != model.shape_dim() || psi.size() != model.expr_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "shape/expression coefficient count differs from model");
  }
  return model.template_vertices + contract(model.shape_dirs, beta) + contract(model.expr_dirs, psi);
}

Eigen::VectorXd pose_feature(const Points& theta) {
  const Eigen::Index k = theta.rows();
  Eigen::VectorXd feature = Eigen::VectorXd::Zero(k > 0 ? 9 * (k - 1) : 0);
  for (Eigen::Index j = 1; j < k; ++j) {
    const Mat3 r = rodrigues(theta.row(j).transpose()) - Mat3::Identity();
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) feature(9 * (j - 1) + 3 * a + b) = r(a, b);
    }
  }
  return feature;
}

Points pose_offsets(const ParametricModel& model, const Points& theta) {
  return contract(model.pose_dirs, pose_feature(theta));
}

Points regress_joints(const ParametricModel& model, const Points& shaped_vertices) {
  if (shaped_vertices.rows() != model.num_vertices()) {
    throw Error(ErrorCode::DimensionMismatch, "regress_joints: vertex count differs from model");
  }
  return model.joint_regressor * shaped_vertices;
}

std::vector<RigidTransform> joint_world_transforms(const ParametricModel& model, const Points& joints_rest,
                                                   const Points& theta) {
  const int k = model.num_joints();
  std::vector<RigidTransform> world(k);
  for (int j = 0; j < k; ++j) {
    const Mat3 local = rodrigues(theta.row(j).transpose());
    const Vec3 joint = joints_rest.row(j).transpose();
    const int parent = model.parents[j];
    if (parent < 0) {
      world[j].rotation = local;
      world[j].translation = joint;
    } else {
      const RigidTransform& p = world[parent];
      world[j].rotation = p.rotation * local;
      world[j].translation = p.apply(joint - joints_rest.row(parent).transpose());
    }
  }
  return world;
}

Points displaced_template(const ParametricModel& model, const BodyParams& params) {
  check_params(model, params);
  Points tp = shaped_template(model, params.beta, params.psi) + pose_offsets(model, params.theta);
  if (params.displacement) tp += *params.displacement;
  return tp;
}

namespace {

struct SkinningTransforms {
  std::vector<Mat3> rotation;
  std::vector<Vec3> offset;  // t_k − R_k J_k
  Points joints_rest;
  std::vector<RigidTransform> world;
};

SkinningTransforms skinning_transforms(const ParametricModel& model, const BodyParams& params) {
  SkinningTransforms s;
  const Eigen::VectorXd no_expr = Eigen::VectorXd::Zero(model.expr_dim());
  // Joints come from the shape-only template; expressions do not move them.
  s.joints_rest = regress_joints(model, shaped_template(model, params.beta, no_expr));
  s.world = joint_world_transforms(model, s.joints_rest, params.theta);
  const int k = model.num_joints();
  s.rotation.resize(k);
  s.offset.resize(k);
  for (int j = 0; j < k; ++j) {
    s.rotation[j] = s.world[j].rotation;
    s.offset[j] = s.world[j].translation - s.world[j].rotation * s.joints_rest.row(j).transpose();
  }
  return s;
}

}  // namespace

PosedResult lbs_forward(const ParametricModel& model, const BodyParams& params) {
  const Points tp = displaced_template(model, params);
  SkinningTransforms s = skinning_transforms(model, params);
  const int n = model.num_vertices();
  const int k = model.num_joints();
  PosedResult result;
  result.vertices.resize(n, 3);
  for (int v = 0; v < n; ++v) {
    Mat3 a = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (int j = 0; j < k; ++j) {
      const double w = model.skin_weights(v, j);
      if (w == 0.0) continue;
      a += w * s.rotation[j];
      b += w * s.offset[j];
    }
    result.vertices.row(v) = (a * tp.row(v).transpose() + b).transpose();
  }
  result.joints_rest = std::move(s.joints_rest);
  result.joint_transforms = std::move(s.world);
  return result;
}

Points lbs_inverse(const ParametricModel& model, const Points& posed_vertices, const BodyParams& params) {
  check_params(model, params);
  if (posed_vertices.rows() != model.num_vertices()) {
    throw Error(ErrorCode::DimensionMismatch, "lbs_inverse: vertex count differs from model");
  }
  const SkinningTransforms s = skinning_transforms(model, params);
  const int n = model.num_vertices();
  const int k = model.num_joints();
  Points rest(n, 3);
  for (int v = 0; v < n; ++v) {
    Mat3 a = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (int j = 0; j < k; ++j) {
      const double w = model.skin_weights(v, j);
      if (w == 0.0) continue;
      a += w * s.rotation[j];
      b += w * s.offset[j];
    }
    const Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (!(sv(2) > 0.0) || sv(0) / sv(2) > 1e12) {
      throw Error(ErrorCode::SingularBlend, "blended transform of vertex " + std::to_string(v) + " is singular");
    }
    rest.row(v) = svd.solve(posed_vertices.row(v).transpose() - b).transpose();
  }
  return rest;
}

}  // namespace avatarfit
