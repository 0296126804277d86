#pragma once

#include "avatarfit/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace avatarfit {

/// Indexed triangle mesh with optional texture coordinates.
///
/// uv_faces, when present, has one row per face and indexes uv_coords, so a
/// vertex may carry different UVs in different faces (seams).
struct TriMesh {
  Points vertices;
  Faces faces;
  Points2 uv_coords;
  Faces uv_faces;
  std::optional<std::string> texture_path;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }
  bool has_uvs() const { return uv_faces.rows() > 0 && uv_faces.rows() == faces.rows(); }

  Vec3 vertex(int i) const { return vertices.row(i).transpose(); }

  /// Throws InvalidMesh when an index is out of range, a face is degenerate
  /// or the UV face count disagrees with the face count.
  void validate() const;
};

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
std::vector<double> face_areas(const TriMesh& mesh);
/// Unit face normals; zero for zero-area faces.
Points face_normals(const TriMesh& mesh);
/// Area-weighted vertex normals, unit length (zero for isolated vertices).
Points vertex_normals(const TriMesh& mesh);

/// Undirected edge graph of a mesh. Neighbor lists are sorted by index.
struct VertexGraph {
  struct Neighbor {
    int vertex;
    double length;
  };
  std::vector<std::vector<Neighbor>> adjacency;

  int num_vertices() const { return static_cast<int>(adjacency.size()); }
  std::size_t num_edges() const;
  /// Unique edges (i < j) with their lengths, sorted lexicographically.
  std::vector<std::pair<std::pair<int, int>, double>> edges() const;
};

VertexGraph build_vertex_graph(const TriMesh& mesh);

/// Dijkstra distances along mesh edges from `source`. Vertices farther than
/// `cutoff` are omitted.
std::map<int, double> geodesic_distances(const VertexGraph& graph, int source,
                                         std::optional<double> cutoff = std::nullopt);

/// Dense variant of geodesic_distances: +inf for unreached vertices.
std::vector<double> geodesic_distance_field(const VertexGraph& graph, int source,
                                            std::optional<double> cutoff = std::nullopt);

/// Hop counts (BFS) from `source` for every vertex within `max_hops`.
std::map<int, int> hop_distances(const VertexGraph& graph, int source, int max_hops);

/// Vertices reachable from `source` in at most k hops, source included, sorted.
std::vector<int> hop_neighborhood(const VertexGraph& graph, int source, int k);

/// Connected component id per vertex, numbered by lowest member vertex.
std::vector<int> connected_components(const VertexGraph& graph);

struct SurfaceSamples {
  Points points;
  std::vector<int> face_ids;
  Points barycentrics;
};

/// Draws n area-uniform surface points. Deterministic for a fixed seed.
SurfaceSamples sample_surface(const TriMesh& mesh, int n, std::uint64_t seed);

}  // namespace avatarfit
