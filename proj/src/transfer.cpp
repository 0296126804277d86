#include "avatarfit/transfer.hpp"

#include "avatarfit/error.hpp"
#include "avatarfit/spatial.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>

namespace avatarfit {

DeletionResult delete_vertices(const TriMesh& mesh, const std::vector<int>& delete_ids) {
  const int n = mesh.num_vertices();
  std::vector<bool> doomed(n, false);
  for (int id : delete_ids) {
    if (id < 0 || id >= n) throw Error(ErrorCode::InvalidArgument, "delete id " + std::to_string(id) + " out of range");
    doomed[id] = true;
  }
  DeletionResult out;
  out.old_to_new.assign(n, -1);
  int survivors = 0;
  for (int v = 0; v < n; ++v) {
    if (!doomed[v]) out.old_to_new[v] = survivors++;
  }
  if (survivors == 0) throw Error(ErrorCode::EmptyResult, "all vertices deleted");

  out.mesh.vertices.resize(survivors, 3);
  for (int v = 0; v < n; ++v) {
    if (!doomed[v]) out.mesh.vertices.row(out.old_to_new[v]) = mesh.vertices.row(v);
  }
  for (int f = 0; f < mesh.num_faces(); ++f) {
    if (!doomed[mesh.faces(f, 0)] && !doomed[mesh.faces(f, 1)] && !doomed[mesh.faces(f, 2)]) {
      out.kept_faces.push_back(f);
    }
  }
  const int nf = static_cast<int>(out.kept_faces.size());
  out.mesh.faces.resize(nf, 3);
  const bool uvs = mesh.has_uvs();
  if (uvs) {
    out.mesh.uv_coords = mesh.uv_coords;
    out.mesh.uv_faces.resize(nf, 3);
  }
  for (int i = 0; i < nf; ++i) {
    const int f = out.kept_faces[i];
    for (int c = 0; c < 3; ++c) out.mesh.faces(i, c) = out.old_to_new[mesh.faces(f, c)];
    if (uvs) out.mesh.uv_faces.row(i) = mesh.uv_faces.row(f);
  }
  out.mesh.texture_path = mesh.texture_path;
  return out;
}

namespace {

using HalfEdges = std::map<std::pair<int, int>, int>;

HalfEdges count_half_edges(const TriMesh& mesh) {
  HalfEdges count;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int c = 0; c < 3; ++c) ++count[{mesh.faces(f, c), mesh.faces(f, (c + 1) % 3)}];
  }
  return count;
}

Vec3 newell_normal(const TriMesh& mesh, const std::vector<int>& loop) {
  Vec3 normal = Vec3::Zero();
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const Vec3 a = mesh.vertex(loop[i]);
    const Vec3 b = mesh.vertex(loop[(i + 1) % loop.size()]);
    normal += a.cross(b);
  }
  return normal;
}

std::vector<std::array<int, 3>> fan_triangulation(const TriMesh& mesh, const std::vector<int>& loop,
                                                  const Vec3& normal) {
  Vec3 centroid = Vec3::Zero();
  for (int v : loop) centroid += mesh.vertex(v);
  centroid /= static_cast<double>(loop.size());
  std::size_t start = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const double d = (mesh.vertex(loop[i]) - centroid).squaredNorm();
    if (d < best) {
      best = d;
      start = i;
    }
  }
  std::vector<std::array<int, 3>> tris;
  const std::size_t m = loop.size();
  for (std::size_t i = 1; i + 1 < m; ++i) {
    tris.push_back({loop[start], loop[(start + i) % m], loop[(start + i + 1) % m]});
  }
  for (const auto& t : tris) {
    const Vec3 a = mesh.vertex(t[0]);
    const Vec3 n = (mesh.vertex(t[1]) - a).cross(mesh.vertex(t[2]) - a);
    if (n.dot(normal) <= 0.0) return {};
  }
  return tris;
}

double cross2(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
}

bool inside_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  return cross2(a, b, p) >= 0.0 && cross2(b, c, p) >= 0.0 && cross2(c, a, p) >= 0.0;
}

// Ear clipping in the plane orthogonal to `normal`; the loop is
// counter-clockwise in that projection.
std::vector<std::array<int, 3>> ear_clip(const TriMesh& mesh, const std::vector<int>& loop, const Vec3& normal) {
  const Vec3 n = normal.normalized();
  const Vec3 e1 = n.unitOrthogonal();
  const Vec3 e2 = n.cross(e1);
  std::vector<int> ring = loop;
  std::vector<Vec2> pts;
  pts.reserve(ring.size());
  for (int v : ring) pts.emplace_back(mesh.vertex(v).dot(e1), mesh.vertex(v).dot(e2));

  std::vector<std::array<int, 3>> tris;
  std::vector<int> idx(ring.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  while (idx.size() > 3) {
    bool clipped = false;
    const std::size_t m = idx.size();
    for (std::size_t i = 0; i < m; ++i) {
      const int ia = idx[(i + m - 1) % m];
      const int ib = idx[i];
      const int ic = idx[(i + 1) % m];
      if (cross2(pts[ia], pts[ib], pts[ic]) <= 0.0) continue;
      bool blocked = false;
      for (int other : idx) {
        if (other == ia || other == ib || other == ic) continue;
        if (inside_triangle(pts[other], pts[ia], pts[ib], pts[ic])) {
          blocked = true;
          break;
        }
      }
      if (blocked) continue;
      tris.push_back({ring[ia], ring[ib], ring[ic]});
      idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(i));
      clipped = true;
      break;
    }
    if (!clipped) return {};
  }
  tris.push_back({ring[idx[0]], ring[idx[1]], ring[idx[2]]});
  return tris;
}

}  // namespace

std::vector<std::vector<int>> boundary_loops(const TriMesh& mesh) {
  const HalfEdges count = count_half_edges(mesh);
  // Fill faces traverse each boundary edge a->b as b->a.
  std::map<int, int> next;
  for (const auto& [edge, c] : count) {
    if (count.count({edge.second, edge.first})) continue;
    if (c != 1) throw Error(ErrorCode::NonSimpleBoundary, "non-manifold boundary edge");
    if (!next.emplace(edge.second, edge.first).second) {
      throw Error(ErrorCode::NonSimpleBoundary,
                  "boundary passes through vertex " + std::to_string(edge.second) + " more than once");
    }
  }
  std::vector<std::vector<int>> loops;
  std::set<int> visited;
  for (const auto& [start, unused] : next) {
    if (visited.count(start)) continue;
    std::vector<int> loop;
    int v = start;
    do {
      if (!visited.insert(v).second) {
        throw Error(ErrorCode::NonSimpleBoundary, "boundary cycle revisits vertex " + std::to_string(v));
      }
      loop.push_back(v);
      auto it = next.find(v);
      if (it == next.end()) throw Error(ErrorCode::NonSimpleBoundary, "open boundary chain");
      v = it->second;
    } while (v != start);
    loops.push_back(std::move(loop));
  }
  return loops;
}

FillResult fill_boundary_loops(const TriMesh& mesh) {
  FillResult out;
  out.mesh = mesh;
  const auto loops = boundary_loops(mesh);
  if (loops.empty()) return out;

  std::vector<std::array<int, 3>> added;
  for (const auto& loop : loops) {
    if (loop.size() < 3) throw Error(ErrorCode::NonSimpleBoundary, "boundary loop shorter than 3");
    const Vec3 normal = newell_normal(mesh, loop);
    auto tris = fan_triangulation(mesh, loop, normal);
    if (tris.empty() && normal.norm() > 0.0) tris = ear_clip(mesh, loop, normal);
    if (tris.empty()) {
      // Degenerate or self-overlapping projection: plain fan from the first vertex.
      for (std::size_t i = 1; i + 1 < loop.size(); ++i) tris.push_back({loop[0], loop[i], loop[i + 1]});
    }
    added.insert(added.end(), tris.begin(), tris.end());
    ++out.loops_filled;
  }

  const int old_faces = mesh.num_faces();
  const int total = old_faces + static_cast<int>(added.size());
  out.mesh.faces.conservativeResize(total, 3);
  for (std::size_t i = 0; i < added.size(); ++i) {
    out.mesh.faces.row(old_faces + static_cast<int>(i)) << added[i][0], added[i][1], added[i][2];
    out.new_faces.push_back(old_faces + static_cast<int>(i));
  }
  if (mesh.has_uvs()) {
    std::vector<int> first_uv(mesh.num_vertices(), -1);
    for (int f = 0; f < old_faces; ++f) {
      for (int c = 0; c < 3; ++c) {
        int& slot = first_uv[mesh.faces(f, c)];
        if (slot < 0) slot = mesh.uv_faces(f, c);
      }
    }
    out.mesh.uv_faces.conservativeResize(total, 3);
    for (std::size_t i = 0; i < added.size(); ++i) {
      for (int c = 0; c < 3; ++c) out.mesh.uv_faces(old_faces + static_cast<int>(i), c) = first_uv[added[i][c]];
    }
  }
  return out;
}

TriMesh flatten_region(const TriMesh& mesh, const std::vector<int>& region, int iterations, double step) {
  if (!(step > 0.0 && step <= 1.0)) throw Error(ErrorCode::InvalidArgument, "flatten step must lie in (0, 1]");
  const int n = mesh.num_vertices();
  std::vector<bool> in_region(n, false);
  for (int v : region) {
    if (v < 0 || v >= n) throw Error(ErrorCode::InvalidArgument, "flatten region vertex out of range");
    in_region[v] = true;
  }
  std::vector<bool> on_boundary(n, false);
  const HalfEdges count = count_half_edges(mesh);
  for (const auto& [edge, c] : count) {
    if (!count.count({edge.second, edge.first})) {
      on_boundary[edge.first] = true;
      on_boundary[edge.second] = true;
    }
  }
  const VertexGraph graph = build_vertex_graph(mesh);
  std::vector<int> interior;
  for (int v = 0; v < n; ++v) {
    if (!in_region[v] || on_boundary[v] || graph.adjacency[v].empty()) continue;
    const bool enclosed = std::all_of(graph.adjacency[v].begin(), graph.adjacency[v].end(),
                                      [&](const VertexGraph::Neighbor& nb) { return in_region[nb.vertex]; });
    if (enclosed) interior.push_back(v);
  }

  TriMesh out = mesh;
  Points next = out.vertices;
  for (int it = 0; it < iterations; ++it) {
    for (int v : interior) {
      Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
      for (const auto& nb : graph.adjacency[v]) mean += out.vertices.row(nb.vertex);
      mean /= static_cast<double>(graph.adjacency[v].size());
      next.row(v) = out.vertices.row(v) + step * (mean - out.vertices.row(v));
    }
    out.vertices = next;
  }
  return out;
}

VertexCorrespondence build_correspondence(const Points& source_template, const Points& lite_template) {
  if (source_template.rows() == 0 || lite_template.rows() == 0) {
    throw Error(ErrorCode::InvalidArgument, "correspondence needs non-empty vertex sets");
  }
  VertexCorrespondence corr;
  const PointIndex source_index(source_template);
  const PointIndex lite_index(lite_template);
  corr.lite_to_source.resize(lite_template.rows());
  for (Eigen::Index i = 0; i < lite_template.rows(); ++i) {
    corr.lite_to_source[i] = source_index.nearest(lite_template.row(i).transpose());
  }
  corr.source_to_lite.resize(source_template.rows());
  for (Eigen::Index i = 0; i < source_template.rows(); ++i) {
    corr.source_to_lite[i] = lite_index.nearest(source_template.row(i).transpose());
  }
  return corr;
}

ParametricModel transfer_coefficients(const ParametricModel& source, const TriMesh& lite_mesh,
                                      const VertexCorrespondence& corr) {
  const int nl = lite_mesh.num_vertices();
  const int ns = source.num_vertices();
  if (static_cast<int>(corr.lite_to_source.size()) != nl || static_cast<int>(corr.source_to_lite.size()) != ns) {
    throw Error(ErrorCode::DimensionMismatch, "correspondence sizes do not match the source model and lite mesh");
  }
  ParametricModel lite;
  lite.name = source.name + "-lite";
  lite.template_vertices = lite_mesh.vertices;
  lite.faces = lite_mesh.faces;
  lite.uv_coords = lite_mesh.uv_coords;
  lite.uv_faces = lite_mesh.uv_faces;
  lite.parents = source.parents;
  lite.joint_names = source.joint_names;
  lite.storage_dtype = source.storage_dtype;

  lite.shape_dirs.resize(nl, source.shape_dirs.cols());
  lite.expr_dirs.resize(nl, source.expr_dirs.cols());
  lite.pose_dirs.resize(nl, source.pose_dirs.cols());
  lite.skin_weights.resize(nl, source.skin_weights.cols());
  for (int l = 0; l < nl; ++l) {
    const int s = corr.lite_to_source[l];
    if (s < 0 || s >= ns) throw Error(ErrorCode::DimensionMismatch, "lite_to_source index out of range");
    lite.shape_dirs.row(l) = source.shape_dirs.row(s);
    lite.expr_dirs.row(l) = source.expr_dirs.row(s);
    lite.pose_dirs.row(l) = source.pose_dirs.row(s);
    lite.skin_weights.row(l) = source.skin_weights.row(s);
    const double sum = lite.skin_weights.row(l).sum();
    if (sum > 0.0) lite.skin_weights.row(l) /= sum;
  }

  lite.joint_regressor = RowMatrix::Zero(source.joint_regressor.rows(), nl);
  for (int s = 0; s < ns; ++s) {
    const int l = corr.source_to_lite[s];
    if (l < 0 || l >= nl) throw Error(ErrorCode::DimensionMismatch, "source_to_lite index out of range");
    lite.joint_regressor.col(l) += source.joint_regressor.col(s);
  }
  return lite;
}

TransferResult run_transfer(const ParametricModel& source, const std::vector<TransferSpec>& rounds) {
  TriMesh mesh = source.rest_mesh();
  std::vector<int> filled;
  for (const auto& round : rounds) {
    DeletionResult deleted = delete_vertices(mesh, round.delete_ids);
    std::vector<int> old_to_new_face(mesh.num_faces(), -1);
    for (std::size_t i = 0; i < deleted.kept_faces.size(); ++i) {
      old_to_new_face[deleted.kept_faces[i]] = static_cast<int>(i);
    }
    std::vector<int> still_filled;
    for (int f : filled) {
      if (old_to_new_face[f] >= 0) still_filled.push_back(old_to_new_face[f]);
    }
    FillResult fill = fill_boundary_loops(deleted.mesh);
    still_filled.insert(still_filled.end(), fill.new_faces.begin(), fill.new_faces.end());
    filled = std::move(still_filled);
    mesh = std::move(fill.mesh);
    for (const auto& region : round.flatten_regions) {
      mesh = flatten_region(mesh, region, round.flatten_iterations, round.flatten_step);
    }
  }
  TransferResult result;
  result.correspondence = build_correspondence(source.template_vertices, mesh.vertices);
  result.model = transfer_coefficients(source, mesh, result.correspondence);
  result.lite_mesh = std::move(mesh);
  result.filled_faces = std::move(filled);
  return result;
}

}  // namespace avatarfit
