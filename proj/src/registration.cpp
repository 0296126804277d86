#include "avatarfit/registration.hpp"

#include "avatarfit/error.hpp"
#include "avatarfit/util.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>

namespace avatarfit {

void FitConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "fit config: k must be >= 1");
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "fit config: alpha must be > 0");
  if (stage1.data_weight < 0.0 || stage1.rigidity_weight < 0.0 || stage1.smooth_weight < 0.0 ||
      stage2.laplacian_weight < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "fit config: weights must be >= 0");
  }
  if (stage1.max_gauss_newton_iters < 0) {
    throw Error(ErrorCode::InvalidArgument, "fit config: max_gauss_newton_iters must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// Deformation graph construction

std::vector<int> sample_nodes(const VertexGraph& graph, int k, std::uint64_t seed) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "sample_nodes requires k >= 1");
  const int n = graph.num_vertices();
  std::vector<int> pool(n);
  std::vector<int> slot(n);
  for (int v = 0; v < n; ++v) pool[v] = slot[v] = v;

  Rng rng(seed);
  std::vector<int> nodes;
  while (!pool.empty()) {
    const int node = pool[rng.index(pool.size())];
    nodes.push_back(node);
    for (int v : hop_neighborhood(graph, node, k)) {
      const int s = slot[v];
      if (s < 0) continue;
      const int last = pool.back();
      pool[s] = last;
      slot[last] = s;
      pool.pop_back();
      slot[v] = -1;
    }
  }
  return nodes;
}

double base_radius(const VertexGraph& graph, int node, int k) {
  const auto ball = hop_neighborhood(graph, node, k);
  if (ball.size() <= 1) {
    throw Error(ErrorCode::IsolatedVertex, "vertex " + std::to_string(node) + " has no neighbours");
  }
  // A hop-shortest path stays inside the ball, so k times the longest edge
  // touching the ball bounds every geodesic we need.
  double longest = 0.0;
  for (int v : ball) {
    for (const auto& nb : graph.adjacency[v]) longest = std::max(longest, nb.length);
  }
  const auto dist = geodesic_distance_field(graph, node, k * longest);
  double sum = 0.0;
  for (int v : ball) sum += dist[v];
  return sum / static_cast<double>(ball.size() - 1);
}

double node_weight(double d, double r, double alpha) {
  const double reach = alpha * r;
  const double x = 1.0 - (d * d) / (reach * reach);
  if (x <= 0.0) return 0.0;
  return x * x * x;
}

DeformationGraph build_graph(const TriMesh& template_mesh, const FitConfig& config) {
  config.validate();
  template_mesh.validate();
  const int n = template_mesh.num_vertices();
  const VertexGraph vgraph = build_vertex_graph(template_mesh);

  DeformationGraph g;
  g.node_vertex_ids = sample_nodes(vgraph, config.k, config.seed);
  const int m = g.num_nodes();
  g.node_positions.resize(m, 3);
  g.base_radii.assign(m, 0.0);
  g.vertex_weights.assign(n, {});
  for (int i = 0; i < m; ++i) {
    const int vid = g.node_vertex_ids[i];
    g.node_positions.row(i) = template_mesh.vertices.row(vid);
    if (vgraph.adjacency[vid].empty()) continue;  // lone vertex: bound below
    g.base_radii[i] = base_radius(vgraph, vid, config.k);
  }

  for (int i = 0; i < m; ++i) {
    const double r = g.base_radii[i];
    if (!(r > 0.0)) continue;
    const auto dist = geodesic_distance_field(vgraph, g.node_vertex_ids[i], config.alpha * r);
    for (int v = 0; v < n; ++v) {
      if (!std::isfinite(dist[v])) continue;
      const double w = node_weight(dist[v], r, config.alpha);
      if (w > 0.0) g.vertex_weights[v].push_back({i, w});
    }
  }

  // Vertices outside every node's support get the hop-nearest node.
  std::vector<int> owner(n, -1);
  std::deque<int> frontier;
  for (int i = 0; i < m; ++i) {
    const int vid = g.node_vertex_ids[i];
    if (owner[vid] < 0) {
      owner[vid] = i;
      frontier.push_back(vid);
    }
  }
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop_front();
    for (const auto& nb : vgraph.adjacency[v]) {
      if (owner[nb.vertex] < 0) {
        owner[nb.vertex] = owner[v];
        frontier.push_back(nb.vertex);
      }
    }
  }
  for (int v = 0; v < n; ++v) {
    auto& row = g.vertex_weights[v];
    if (row.empty()) {
      g.uncovered_vertices.push_back(v);
      row.push_back({owner[v], 1.0});
      continue;
    }
    double total = 0.0;
    for (const auto& w : row) total += w.weight;
    for (auto& w : row) w.weight /= total;
  }

  const double max_radius = m > 0 ? *std::max_element(g.base_radii.begin(), g.base_radii.end()) : 0.0;
  for (int i = 0; i < m; ++i) {
    if (!(max_radius > 0.0)) break;
    const auto dist = geodesic_distance_field(vgraph, g.node_vertex_ids[i], 2.0 * max_radius);
    for (int j = i + 1; j < m; ++j) {
      const double d = dist[g.node_vertex_ids[j]];
      if (d < 2.0 * std::max(g.base_radii[i], g.base_radii[j])) g.smooth_edges.push_back({i, j});
    }
  }
  return g;
}

DeformationGraph place_graph(const DeformationGraph& graph, const TriMesh& posed_mesh) {
  DeformationGraph placed = graph;
  for (int i = 0; i < graph.num_nodes(); ++i) {
    placed.node_positions.row(i) = posed_mesh.vertices.row(graph.node_vertex_ids[i]);
  }
  return placed;
}

Points warp_vertices(const DeformationGraph& graph, const Points& vertices,
                     const std::vector<NodeTransform>& transforms) {
  Points out(vertices.rows(), 3);
  for (Eigen::Index v = 0; v < vertices.rows(); ++v) {
    const Vec3 p = vertices.row(v).transpose();
    Vec3 acc = Vec3::Zero();
    for (const auto& [node, w] : graph.vertex_weights[v]) {
      const Vec3 g = graph.node_positions.row(node).transpose();
      acc += w * (transforms[node].rotation * (p - g) + g + transforms[node].translation);
    }
    out.row(v) = acc.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correspondences

Correspondences find_correspondences(const TriMesh& mesh, const SurfaceIndex& scan_index,
                                     const Points& scan_face_normals, double max_dist, double max_angle_deg,
                                     int jobs) {
  const int n = mesh.num_vertices();
  const Points normals = vertex_normals(mesh);
  const double cos_max = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  Correspondences corr;
  corr.targets.resize(n, 3);
  std::vector<char> keep(n, 0);
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t i) {
    const int v = static_cast<int>(i);
    const SurfacePoint hit = scan_index.nearest(mesh.vertex(v));
    corr.targets.row(v) = hit.point.transpose();
    bool ok = hit.distance <= max_dist;
    const Vec3 nv = normals.row(v).transpose();
    const Vec3 nf = scan_face_normals.row(hit.face_id).transpose();
    if (ok && nv.squaredNorm() > 0.0 && nf.squaredNorm() > 0.0) ok = nv.dot(nf) >= cos_max;
    keep[v] = ok ? 1 : 0;
  });
  corr.mask.assign(n, false);
  for (int v = 0; v < n; ++v) {
    corr.mask[v] = keep[v] != 0;
    corr.count += keep[v];
  }
  return corr;
}

// ---------------------------------------------------------------------------
// Stage 1: embedded deformation

namespace {

constexpr int kBlock = 12;  // 9 rotation entries (row-major) + 3 translation
using Block = Eigen::Matrix<double, kBlock, kBlock>;
using BlockVec = Eigen::Matrix<double, kBlock, 1>;

// Symmetric block-sparse accumulator for JᵀJ and Jᵀr.
class BlockSystem {
 public:
  explicit BlockSystem(int nodes) : nodes_(nodes), rhs_(nodes, BlockVec::Zero()) {}

  Block& block(int i, int j) {
    const auto key = std::make_pair(std::min(i, j), std::max(i, j));
    auto it = index_.find(key);
    if (it == index_.end()) {
      it = index_.emplace(key, blocks_.size()).first;
      blocks_.push_back(Block::Zero());
    }
    return blocks_[it->second];
  }

  // Adds the contribution of residual r = Σ_a A_a x_{node_a} + r0.
  template <int Rows>
  void add(const std::vector<std::pair<int, Eigen::Matrix<double, Rows, kBlock>>>& terms,
           const Eigen::Matrix<double, Rows, 1>& r0) {
    for (std::size_t a = 0; a < terms.size(); ++a) {
      const auto& [ia, ja] = terms[a];
      rhs_[ia] += ja.transpose() * r0;
      for (std::size_t b = a; b < terms.size(); ++b) {
        const auto& [ib, jb] = terms[b];
        if (ia == ib) {
          Block contrib = ja.transpose() * jb;
          if (a != b) contrib += contrib.transpose().eval();
          block(ia, ia) += contrib;
        } else if (ia < ib) {
          block(ia, ib) += ja.transpose() * jb;
        } else {
          block(ib, ia) += jb.transpose() * ja;
        }
      }
    }
  }

  // JᵀJ + λ·diag(max(JᵀJ_dd, floor)): Marquardt scaling, so rotation and
  // translation unknowns are damped in their own units.
  Eigen::SparseMatrix<double> matrix(double lambda, double floor) const {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(blocks_.size() * kBlock * kBlock * 2);
    for (const auto& [key, idx] : index_) {
      const auto [i, j] = key;
      const Block& b = blocks_[idx];
      for (int r = 0; r < kBlock; ++r) {
        for (int c = 0; c < kBlock; ++c) {
          if (b(r, c) == 0.0) continue;
          triplets.emplace_back(i * kBlock + r, j * kBlock + c, b(r, c));
          if (i != j) triplets.emplace_back(j * kBlock + c, i * kBlock + r, b(r, c));
        }
      }
    }
    for (int i = 0; i < nodes_; ++i) {
      const auto it = index_.find({i, i});
      for (int r = 0; r < kBlock; ++r) {
        const double d = it == index_.end() ? 0.0 : blocks_[it->second](r, r);
        triplets.emplace_back(i * kBlock + r, i * kBlock + r, lambda * std::max(d, floor));
      }
    }
    Eigen::SparseMatrix<double> h(nodes_ * kBlock, nodes_ * kBlock);
    h.setFromTriplets(triplets.begin(), triplets.end());
    return h;
  }

  Eigen::VectorXd rhs() const {
    Eigen::VectorXd out(nodes_ * kBlock);
    for (int i = 0; i < nodes_; ++i) out.segment<kBlock>(i * kBlock) = rhs_[i];
    return out;
  }

  double mean_diagonal() const {
    double sum = 0.0;
    for (const auto& [key, idx] : index_) {
      if (key.first == key.second) sum += blocks_[idx].diagonal().sum();
    }
    return nodes_ > 0 ? sum / (nodes_ * kBlock) : 0.0;
  }

 private:
  int nodes_;
  std::vector<BlockVec> rhs_;
  std::map<std::pair<int, int>, std::size_t> index_;
  std::vector<Block> blocks_;
};

struct Stage1Problem {
  const DeformationGraph& graph;
  const Points& vertices;
  const Correspondences& corr;
  const Points& target_normals;
  const Stage1Config& cfg;

  double rigidity(const Mat3& r) const { return (r.transpose() * r - Mat3::Identity()).squaredNorm(); }

  double energy(const std::vector<NodeTransform>& x) const {
    const Points warped = warp_vertices(graph, vertices, x);
    double data = 0.0;
    for (Eigen::Index v = 0; v < warped.rows(); ++v) {
      if (!corr.mask[v]) continue;
      const Vec3 diff = (warped.row(v) - corr.targets.row(v)).transpose();
      if (cfg.point_to_plane) {
        const double e = target_normals.row(v).dot(diff);
        data += e * e;
      } else {
        data += diff.squaredNorm();
      }
    }
    double rot = 0.0;
    for (const auto& t : x) rot += rigidity(t.rotation);
    double smooth = 0.0;
    for (const auto& [i, j] : graph.smooth_edges) {
      smooth += smooth_residual(x, i, j).squaredNorm() + smooth_residual(x, j, i).squaredNorm();
    }
    return cfg.data_weight * data + cfg.rigidity_weight * rot + cfg.smooth_weight * smooth;
  }

  Vec3 smooth_residual(const std::vector<NodeTransform>& x, int i, int j) const {
    const Vec3 gi = graph.node_positions.row(i).transpose();
    const Vec3 gj = graph.node_positions.row(j).transpose();
    return x[i].rotation * (gj - gi) + gi + x[i].translation - (gj + x[j].translation);
  }

  // Jacobian of R·p + t with respect to the node's 12 parameters.
  static Eigen::Matrix<double, 3, kBlock> affine_jacobian(const Vec3& p) {
    Eigen::Matrix<double, 3, kBlock> j = Eigen::Matrix<double, 3, kBlock>::Zero();
    for (int r = 0; r < 3; ++r) {
      j.block<1, 3>(r, 3 * r) = p.transpose();
      j(r, 9 + r) = 1.0;
    }
    return j;
  }

  void linearize(const std::vector<NodeTransform>& x, BlockSystem& sys) const {
    const Points warped = warp_vertices(graph, vertices, x);
    const double sd = std::sqrt(cfg.data_weight);
    for (Eigen::Index v = 0; v < warped.rows(); ++v) {
      if (!corr.mask[v] || cfg.data_weight == 0.0) continue;
      const Vec3 p = vertices.row(v).transpose();
      const Vec3 diff = (warped.row(v) - corr.targets.row(v)).transpose();
      if (cfg.point_to_plane) {
        const Vec3 nrm = target_normals.row(v).transpose();
        std::vector<std::pair<int, Eigen::Matrix<double, 1, kBlock>>> terms;
        for (const auto& [node, w] : graph.vertex_weights[v]) {
          const Vec3 g = graph.node_positions.row(node).transpose();
          terms.emplace_back(node, sd * w * nrm.transpose() * affine_jacobian(p - g));
        }
        sys.add<1>(terms, Eigen::Matrix<double, 1, 1>(sd * nrm.dot(diff)));
      } else {
        std::vector<std::pair<int, Eigen::Matrix<double, 3, kBlock>>> terms;
        for (const auto& [node, w] : graph.vertex_weights[v]) {
          const Vec3 g = graph.node_positions.row(node).transpose();
          terms.emplace_back(node, sd * w * affine_jacobian(p - g));
        }
        sys.add<3>(terms, sd * diff);
      }
    }

    if (cfg.smooth_weight > 0.0) {
      const double ss = std::sqrt(cfg.smooth_weight);
      for (const auto& [a, b] : graph.smooth_edges) {
        for (const auto& [i, j] : {std::pair{a, b}, std::pair{b, a}}) {
          const Vec3 gi = graph.node_positions.row(i).transpose();
          const Vec3 gj = graph.node_positions.row(j).transpose();
          Eigen::Matrix<double, 3, kBlock> jj = Eigen::Matrix<double, 3, kBlock>::Zero();
          jj.block<3, 3>(0, 9) = -Mat3::Identity();
          std::vector<std::pair<int, Eigen::Matrix<double, 3, kBlock>>> terms{
              {i, ss * affine_jacobian(gj - gi)}, {j, ss * jj}};
          sys.add<3>(terms, ss * smooth_residual(x, i, j));
        }
      }
    }

    if (cfg.rigidity_weight > 0.0) {
      const double sr = std::sqrt(cfg.rigidity_weight);
      const double root2 = std::sqrt(2.0);
      for (int node = 0; node < static_cast<int>(x.size()); ++node) {
        const Mat3& rot = x[node].rotation;
        Eigen::Matrix<double, 6, kBlock> jr = Eigen::Matrix<double, 6, kBlock>::Zero();
        Eigen::Matrix<double, 6, 1> res;
        int row = 0;
        for (int a = 0; a < 3; ++a) {
          for (int b = a; b < 3; ++b, ++row) {
            const double scale = a == b ? 1.0 : root2;
            res(row) = scale * (rot.col(a).dot(rot.col(b)) - (a == b ? 1.0 : 0.0));
            for (int r = 0; r < 3; ++r) {
              jr(row, 3 * r + a) += scale * rot(r, b);
              jr(row, 3 * r + b) += scale * rot(r, a);
            }
          }
        }
        std::vector<std::pair<int, Eigen::Matrix<double, 6, kBlock>>> terms{{node, sr * jr}};
        sys.add<6>(terms, sr * res);
      }
    }
  }
};

std::vector<NodeTransform> apply_step(const std::vector<NodeTransform>& x, const Eigen::VectorXd& delta) {
  std::vector<NodeTransform> out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto seg = delta.segment<kBlock>(static_cast<Eigen::Index>(i) * kBlock);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out[i].rotation(r, c) += seg(3 * r + c);
      out[i].translation(r) += seg(9 + r);
    }
  }
  return out;
}

TriMesh with_vertices(const TriMesh& mesh, Points vertices) {
  TriMesh out = mesh;
  out.vertices = std::move(vertices);
  return out;
}

}  // namespace

Stage1Result solve_stage1(const TriMesh& posed_mesh, const DeformationGraph& graph, const TriMesh& scan,
                          const FitConfig& config) {
  config.validate();
  if (static_cast<int>(graph.vertex_weights.size()) != posed_mesh.num_vertices()) {
    throw Error(ErrorCode::DimensionMismatch, "deformation graph and posed mesh disagree on vertex count");
  }
  const Stage1Config& cfg = config.stage1;
  const int m = graph.num_nodes();
  const SurfaceIndex scan_index(scan);
  const Points scan_normals = face_normals(scan);

  Stage1Result result;
  result.transforms.assign(m, NodeTransform{});
  result.report.num_nodes = m;
  result.report.num_smooth_edges = static_cast<int>(graph.smooth_edges.size());
  result.report.uncovered_vertices = static_cast<int>(graph.uncovered_vertices.size());

  double lambda = 1e-6;
  auto& x = result.transforms;
  double energy = 0.0;
  for (int it = 0; it < cfg.max_gauss_newton_iters; ++it) {
    const TriMesh warped = with_vertices(posed_mesh, warp_vertices(graph, posed_mesh.vertices, x));
    const Correspondences corr = find_correspondences(warped, scan_index, scan_normals, cfg.correspondence_max_dist,
                                                      cfg.normal_angle_max, config.jobs);
    if (corr.count == 0) throw Error(ErrorCode::NoCorrespondences, "stage 1: every correspondence was pruned");
    Points target_normals = Points::Zero(posed_mesh.num_vertices(), 3);
    if (cfg.point_to_plane) {
      for (int v = 0; v < posed_mesh.num_vertices(); ++v) {
        target_normals.row(v) = scan_normals.row(scan_index.nearest(warped.vertex(v)).face_id);
      }
    }

    const Stage1Problem problem{graph, posed_mesh.vertices, corr, target_normals, cfg};
    Stage1Iteration record;
    record.iteration = it;
    record.correspondences = corr.count;
    record.energy_before = problem.energy(x);
    energy = record.energy_before;
    if (energy <= 1e-20) {
      record.energy_after = energy;
      result.report.iterations.push_back(record);
      result.report.converged = true;
      break;
    }

    BlockSystem sys(m);
    problem.linearize(x, sys);
    const Eigen::VectorXd gradient = sys.rhs();
    const double scale = std::max(sys.mean_diagonal(), 1e-12);

    bool accepted = false;
    for (int attempt = 0; attempt <= 3; ++attempt) {
      const Eigen::SparseMatrix<double> h = sys.matrix(lambda, 1e-6 * scale);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
      if (solver.info() == Eigen::Success) {
        const Eigen::VectorXd delta = solver.solve(-gradient);
        auto candidate = apply_step(x, delta);
        const double trial = problem.energy(candidate);
        if (std::isfinite(trial) && trial <= record.energy_before) {
          x = std::move(candidate);
          energy = trial;
          accepted = true;
          lambda = std::max(lambda * 0.1, 1e-6);
          break;
        }
      }
      record.damped_retries = attempt + 1;
      lambda *= 100.0;
    }
    record.energy_after = energy;
    result.report.iterations.push_back(record);
    if (!accepted) {
      // No decrease even with damping: a stationary point unless the
      // gradient says otherwise.
      if (gradient.norm() <= 1e-9 * std::max(1.0, std::sqrt(record.energy_before))) {
        result.report.converged = true;
        break;
      }
      throw Error(ErrorCode::Diverged, "stage 1: energy increased for 3 consecutive damped retries");
    }
    if (record.energy_before - energy <= cfg.convergence_tol * record.energy_before) {
      result.report.converged = true;
      break;
    }
  }

  result.report.final_energy = energy;
  for (const auto& t : x) {
    result.report.max_rigidity_residual = std::max(
        result.report.max_rigidity_residual, (t.rotation.transpose() * t.rotation - Mat3::Identity()).norm());
  }
  result.warped_mesh = with_vertices(posed_mesh, warp_vertices(graph, posed_mesh.vertices, x));
  return result;
}

// ---------------------------------------------------------------------------
// Stage 2: Laplacian-regularized vertex shifts

Eigen::SparseMatrix<double> umbrella_laplacian(const VertexGraph& graph) {
  const int n = graph.num_vertices();
  std::vector<Eigen::Triplet<double>> triplets;
  for (int v = 0; v < n; ++v) {
    const auto& nbrs = graph.adjacency[v];
    if (nbrs.empty()) continue;
    triplets.emplace_back(v, v, 1.0);
    const double w = -1.0 / static_cast<double>(nbrs.size());
    for (const auto& nb : nbrs) triplets.emplace_back(v, nb.vertex, w);
  }
  Eigen::SparseMatrix<double> l(n, n);
  l.setFromTriplets(triplets.begin(), triplets.end());
  return l;
}

Stage2Result solve_shifts(const TriMesh& mesh, const Correspondences& corr, double laplacian_weight) {
  const int n = mesh.num_vertices();
  if (corr.targets.rows() != n || static_cast<int>(corr.mask.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "correspondences do not match the mesh");
  }
  const VertexGraph graph = build_vertex_graph(mesh);

  // Every vertex must be pinned by data, directly or through its component.
  if (laplacian_weight == 0.0) {
    for (int v = 0; v < n; ++v) {
      if (!corr.mask[v]) {
        throw Error(ErrorCode::SingularSystem, "stage 2: vertex " + std::to_string(v) +
                                                   " is unmatched and the Laplacian weight is zero");
      }
    }
  } else {
    const auto component = connected_components(graph);
    std::vector<bool> anchored(n, false);
    for (int v = 0; v < n; ++v) {
      if (corr.mask[v]) anchored[component[v]] = true;
    }
    for (int v = 0; v < n; ++v) {
      if (!anchored[component[v]]) {
        throw Error(ErrorCode::SingularSystem,
                    "stage 2: connected component containing vertex " + std::to_string(v) + " has no correspondence");
      }
    }
  }

  Eigen::SparseMatrix<double> mask(n, n);
  {
    std::vector<Eigen::Triplet<double>> diag;
    for (int v = 0; v < n; ++v) {
      if (corr.mask[v]) diag.emplace_back(v, v, 1.0);
    }
    mask.setFromTriplets(diag.begin(), diag.end());
  }
  const Eigen::SparseMatrix<double> lap = umbrella_laplacian(graph);
  Eigen::SparseMatrix<double> a = mask;
  if (laplacian_weight > 0.0) a += laplacian_weight * Eigen::SparseMatrix<double>(lap.transpose() * lap);

  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, 3);
  for (int v = 0; v < n; ++v) {
    if (corr.mask[v]) b.row(v) = corr.targets.row(v) - mesh.vertices.row(v);
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "stage 2: factorization failed");
  Eigen::MatrixXd d = solver.solve(b);
  const double bnorm = b.norm();
  auto relative_residual = [&](const Eigen::MatrixXd& sol) {
    const double r = (a * sol - b).norm();
    return bnorm > 0.0 ? r / bnorm : r;
  };
  double rel = relative_residual(d);
  for (int refine = 0; refine < 5 && rel > 1e-12; ++refine) {
    d += solver.solve(b - a * d);
    rel = relative_residual(d);
  }

  Stage2Result out;
  out.shifts = d;
  out.fitted_mesh = with_vertices(mesh, mesh.vertices + out.shifts);
  out.report.correspondences = corr.count;
  out.report.unmatched = n - corr.count;
  out.report.relative_residual = rel;
  for (int v = 0; v < n; ++v) {
    if (corr.mask[v]) out.report.data_residual += (out.fitted_mesh.vertices.row(v) - corr.targets.row(v)).squaredNorm();
  }
  out.report.laplacian_residual = (lap * d).squaredNorm();
  return out;
}

Stage2Result solve_stage2(const TriMesh& stage1_mesh, const TriMesh& scan, const FitConfig& config) {
  config.validate();
  const SurfaceIndex scan_index(scan);
  const Correspondences corr =
      find_correspondences(stage1_mesh, scan_index, face_normals(scan), config.stage2.correspondence_max_dist,
                           config.stage2.normal_angle_max, config.jobs);
  return solve_shifts(stage1_mesh, corr, config.stage2.laplacian_weight);
}

FitResult fit(const ParametricModel& model, const BodyParams& params, const TriMesh& scan, const FitConfig& config,
              FitStages stages) {
  config.validate();
  scan.validate();
  FitResult result;
  BodyParams pose_only = params;
  pose_only.displacement.reset();
  result.posed_mesh = model.rest_mesh();
  result.posed_mesh.vertices = lbs_forward(model, params).vertices;

  if (stages == FitStages::Stage2Only) {
    result.stage1_mesh = result.posed_mesh;
  } else {
    result.graph = build_graph(model.rest_mesh(), config);
    const DeformationGraph placed = place_graph(result.graph, result.posed_mesh);
    Stage1Result s1 = solve_stage1(result.posed_mesh, placed, scan, config);
    result.stage1_mesh = std::move(s1.warped_mesh);
    result.stage1 = std::move(s1.report);
  }

  if (stages == FitStages::Stage1Only) {
    result.fitted_mesh = result.stage1_mesh;
  } else {
    Stage2Result s2 = solve_stage2(result.stage1_mesh, scan, config);
    result.fitted_mesh = std::move(s2.fitted_mesh);
    result.stage2 = s2.report;
  }

  result.displacement = lbs_inverse(model, result.fitted_mesh.vertices, pose_only) -
                        displaced_template(model, pose_only);
  return result;
}

}  // namespace avatarfit
