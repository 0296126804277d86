#pragma once

#include "avatarfit/body_model.hpp"
#include "avatarfit/mesh.hpp"
#include "avatarfit/spatial.hpp"

#include <Eigen/SparseCore>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace avatarfit {

struct Stage1Config {
  int max_gauss_newton_iters = 20;
  double data_weight = 1.0;
  double rigidity_weight = 10.0;
  double smooth_weight = 1.0;
  double correspondence_max_dist = 0.05;
  double normal_angle_max = 60.0;  // degrees
  bool point_to_plane = false;
  /// Stop once the relative energy decrease of an iteration drops below this.
  double convergence_tol = 1e-7;
};

struct Stage2Config {
  double laplacian_weight = 1.0;
  double correspondence_max_dist = 0.05;
  double normal_angle_max = 60.0;  // degrees
};

struct FitConfig {
  int k = 2;
  double alpha = 1.5;
  Stage1Config stage1;
  Stage2Config stage2;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
};

/// Embedded nodes on the T-pose template with sparse vertex weights.
struct DeformationGraph {
  struct Weight {
    int node;
    double weight;
  };
  std::vector<int> node_vertex_ids;
  Points node_positions;
  std::vector<double> base_radii;
  std::vector<std::vector<Weight>> vertex_weights;
  /// Unordered node pairs (i < j).
  std::vector<std::pair<int, int>> smooth_edges;
  /// Vertices that no node reached; each was bound to its hop-nearest node.
  std::vector<int> uncovered_vertices;

  int num_nodes() const { return static_cast<int>(node_vertex_ids.size()); }
};

struct NodeTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Random node selection: pick a candidate, drop its k-hop neighbourhood,
/// repeat until no candidates remain.
std::vector<int> sample_nodes(const VertexGraph& graph, int k, std::uint64_t seed);

/// Mean geodesic distance from `node` to the other vertices within k hops.
double base_radius(const VertexGraph& graph, int node, int k);

/// max(0, (1 − d²/(α r)²)³).
double node_weight(double d, double r, double alpha);

DeformationGraph build_graph(const TriMesh& template_mesh, const FitConfig& config);

/// Copy of `graph` with node positions taken from the posed vertices.
DeformationGraph place_graph(const DeformationGraph& graph, const TriMesh& posed_mesh);

/// Σ_i w_i (R_i (v − g_i) + g_i + t_i) for every vertex.
Points warp_vertices(const DeformationGraph& graph, const Points& vertices, const std::vector<NodeTransform>& transforms);

struct Stage1Iteration {
  int iteration = 0;
  double energy_before = 0.0;
  double energy_after = 0.0;
  int correspondences = 0;
  int damped_retries = 0;
};

struct Stage1Report {
  std::vector<Stage1Iteration> iterations;
  double final_energy = 0.0;
  double max_rigidity_residual = 0.0;  // max_i ‖R_iᵀR_i − I‖_F
  int num_nodes = 0;
  int num_smooth_edges = 0;
  int uncovered_vertices = 0;
  bool converged = false;
};

struct Stage1Result {
  TriMesh warped_mesh;
  std::vector<NodeTransform> transforms;
  Stage1Report report;
};

Stage1Result solve_stage1(const TriMesh& posed_mesh, const DeformationGraph& graph, const TriMesh& scan,
                          const FitConfig& config);

struct Stage2Report {
  int correspondences = 0;
  int unmatched = 0;
  double relative_residual = 0.0;
  double data_residual = 0.0;       // Σ m_v ‖v + d_v − c_v‖²
  double laplacian_residual = 0.0;  // ‖L d‖²
};

struct Stage2Result {
  TriMesh fitted_mesh;
  Points shifts;
  Stage2Report report;
};

struct Correspondences {
  Points targets;
  std::vector<bool> mask;
  int count = 0;
};

/// Closest scan points for each vertex, pruned by distance and by the angle
/// between the vertex normal and the scan face normal.
Correspondences find_correspondences(const TriMesh& mesh, const SurfaceIndex& scan_index, const Points& scan_face_normals,
                                     double max_dist, double max_angle_deg, int jobs);

/// Uniform umbrella Laplacian: (L x)_v = x_v − mean of v's neighbours.
Eigen::SparseMatrix<double> umbrella_laplacian(const VertexGraph& graph);

/// Solves (M + λ LᵀL) d = M (c − v) for the masked targets.
Stage2Result solve_shifts(const TriMesh& mesh, const Correspondences& corr, double laplacian_weight);

Stage2Result solve_stage2(const TriMesh& stage1_mesh, const TriMesh& scan, const FitConfig& config);

struct FitResult {
  TriMesh posed_mesh;
  TriMesh stage1_mesh;
  TriMesh fitted_mesh;
  DeformationGraph graph;
  Stage1Report stage1;
  Stage2Report stage2;
  /// T-pose displacement recovered by inverse skinning of the fitted mesh.
  Points displacement;
};

enum class FitStages { Stage1Only, Stage2Only, Both };

FitResult fit(const ParametricModel& model, const BodyParams& params, const TriMesh& scan, const FitConfig& config,
              FitStages stages = FitStages::Both);

}  // namespace avatarfit
