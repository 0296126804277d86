#include "avatarfit/mesh.hpp"

#include "avatarfit/error.hpp"
#include "avatarfit/util.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <queue>

namespace avatarfit {

void TriMesh::validate() const {
  const int n = num_vertices();
  for (int f = 0; f < num_faces(); ++f) {
    const auto face = faces.row(f);
    for (int c = 0; c < 3; ++c) {
      if (face(c) < 0 || face(c) >= n) {
        throw Error(ErrorCode::InvalidMesh, "face " + std::to_string(f) + " references vertex " +
                                                std::to_string(face(c)) + " of " + std::to_string(n));
      }
    }
    if (face(0) == face(1) || face(1) == face(2) || face(0) == face(2)) {
      throw Error(ErrorCode::InvalidMesh, "face " + std::to_string(f) + " is degenerate");
    }
  }
  if (uv_faces.rows() > 0) {
    if (uv_faces.rows() != faces.rows()) {
      throw Error(ErrorCode::InvalidMesh, "uv face count differs from face count");
    }
    const int nuv = static_cast<int>(uv_coords.rows());
    if ((uv_faces.array() < 0).any() || (uv_faces.array() >= nuv).any()) {
      throw Error(ErrorCode::InvalidMesh, "uv face index out of range");
    }
  }
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

std::vector<double> face_areas(const TriMesh& mesh) {
  std::vector<double> areas(mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    areas[f] = triangle_area(mesh.vertex(mesh.faces(f, 0)), mesh.vertex(mesh.faces(f, 1)),
                             mesh.vertex(mesh.faces(f, 2)));
  }
  return areas;
}

Points face_normals(const TriMesh& mesh) {
  Points normals = Points::Zero(mesh.num_faces(), 3);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 a = mesh.vertex(mesh.faces(f, 0));
    const Vec3 n = (mesh.vertex(mesh.faces(f, 1)) - a).cross(mesh.vertex(mesh.faces(f, 2)) - a);
    const double len = n.norm();
    if (len > 0.0) normals.row(f) = (n / len).transpose();
  }
  return normals;
}

Points vertex_normals(const TriMesh& mesh) {
  Points normals = Points::Zero(mesh.num_vertices(), 3);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 a = mesh.vertex(mesh.faces(f, 0));
    // Unnormalized cross product weights each face by twice its area.
    const Vec3 n = (mesh.vertex(mesh.faces(f, 1)) - a).cross(mesh.vertex(mesh.faces(f, 2)) - a);
    for (int c = 0; c < 3; ++c) normals.row(mesh.faces(f, c)) += n.transpose();
  }
  for (int v = 0; v < normals.rows(); ++v) {
    const double len = normals.row(v).norm();
    if (len > 0.0) normals.row(v) /= len;
  }
  return normals;
}

std::size_t VertexGraph::num_edges() const {
  std::size_t total = 0;
  for (const auto& nbrs : adjacency) total += nbrs.size();
  return total / 2;
}

std::vector<std::pair<std::pair<int, int>, double>> VertexGraph::edges() const {
  std::vector<std::pair<std::pair<int, int>, double>> out;
  for (int i = 0; i < num_vertices(); ++i) {
    for (const auto& nb : adjacency[i]) {
      if (i < nb.vertex) out.push_back({{i, nb.vertex}, nb.length});
    }
  }
  return out;
}

VertexGraph build_vertex_graph(const TriMesh& mesh) {
  const int n = mesh.num_vertices();
  std::vector<std::vector<int>> nbrs(n);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int a = mesh.faces(f, c);
      const int b = mesh.faces(f, (c + 1) % 3);
      nbrs[a].push_back(b);
      nbrs[b].push_back(a);
    }
  }
  VertexGraph graph;
  graph.adjacency.resize(n);
  for (int i = 0; i < n; ++i) {
    auto& list = nbrs[i];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    graph.adjacency[i].reserve(list.size());
    for (int j : list) {
      graph.adjacency[i].push_back({j, (mesh.vertex(i) - mesh.vertex(j)).norm()});
    }
  }
  return graph;
}

std::vector<double> geodesic_distance_field(const VertexGraph& graph, int source,
                                            std::optional<double> cutoff) {
  const int n = graph.num_vertices();
  if (source < 0 || source >= n) {
    throw Error(ErrorCode::InvalidArgument, "geodesic source out of range");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double limit = cutoff.value_or(kInf);
  std::vector<double> dist(n, kInf);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  dist[source] = 0.0;
  queue.push({0.0, source});
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const auto& nb : graph.adjacency[v]) {
      const double nd = d + nb.length;
      if (nd < dist[nb.vertex] && nd <= limit) {
        dist[nb.vertex] = nd;
        queue.push({nd, nb.vertex});
      }
    }
  }
  return dist;
}

std::map<int, double> geodesic_distances(const VertexGraph& graph, int source,
                                         std::optional<double> cutoff) {
  const auto field = geodesic_distance_field(graph, source, cutoff);
  std::map<int, double> out;
  for (int v = 0; v < static_cast<int>(field.size()); ++v) {
    if (field[v] != std::numeric_limits<double>::infinity()) out.emplace(v, field[v]);
  }
  return out;
}

std::map<int, int> hop_distances(const VertexGraph& graph, int source, int max_hops) {
  if (source < 0 || source >= graph.num_vertices()) {
    throw Error(ErrorCode::InvalidArgument, "hop source out of range");
  }
  std::map<int, int> hops{{source, 0}};
  std::deque<int> frontier{source};
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop_front();
    const int h = hops[v];
    if (h >= max_hops) continue;
    for (const auto& nb : graph.adjacency[v]) {
      if (hops.emplace(nb.vertex, h + 1).second) frontier.push_back(nb.vertex);
    }
  }
  return hops;
}

std::vector<int> hop_neighborhood(const VertexGraph& graph, int source, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "hop_neighborhood requires k >= 1");
  std::vector<int> out;
  for (const auto& [v, h] : hop_distances(graph, source, k)) out.push_back(v);
  return out;
}

std::vector<int> connected_components(const VertexGraph& graph) {
  const int n = graph.num_vertices();
  std::vector<int> component(n, -1);
  for (int seed = 0; seed < n; ++seed) {
    if (component[seed] >= 0) continue;
    component[seed] = seed;
    std::deque<int> frontier{seed};
    while (!frontier.empty()) {
      const int v = frontier.front();
      frontier.pop_front();
      for (const auto& nb : graph.adjacency[v]) {
        if (component[nb.vertex] < 0) {
          component[nb.vertex] = seed;
          frontier.push_back(nb.vertex);
        }
      }
    }
  }
  return component;
}

SurfaceSamples sample_surface(const TriMesh& mesh, int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "sample_surface requires n >= 1");
  const auto areas = face_areas(mesh);
  std::vector<double> cumulative(areas.size());
  double total = 0.0;
  for (std::size_t f = 0; f < areas.size(); ++f) {
    total += areas[f];
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::AllFacesDegenerate, "mesh has zero surface area");

  Rng rng(seed);
  SurfaceSamples out;
  out.points.resize(n, 3);
  out.barycentrics.resize(n, 3);
  out.face_ids.resize(n);
  for (int i = 0; i < n; ++i) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    int f = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                       static_cast<std::ptrdiff_t>(areas.size()) - 1));
    // Never land on a zero-area face sitting at the end of a plateau.
    while (areas[f] <= 0.0 && f > 0) --f;
    double u = rng.uniform();
    double v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const double w = 1.0 - u - v;
    out.face_ids[i] = f;
    out.barycentrics.row(i) << w, u, v;
    out.points.row(i) = w * mesh.vertices.row(mesh.faces(f, 0)) + u * mesh.vertices.row(mesh.faces(f, 1)) +
                        v * mesh.vertices.row(mesh.faces(f, 2));
  }
  return out;
}

}  // namespace avatarfit
