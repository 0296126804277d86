#pragma once

#include "avatarfit/error.hpp"
#include "avatarfit/mesh.hpp"
#include "avatarfit/util.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace avatarfit::test {

#define CHECK_ERROR_CODE(expr, expected_code)                    \
  do {                                                           \
    bool thrown_ = false;                                        \
    try {                                                        \
      (void)(expr);                                              \
    } catch (const ::avatarfit::Error& e_) {                     \
      thrown_ = true;                                            \
      CHECK_MESSAGE(e_.code() == (expected_code), std::string(e_.what())); \
    }                                                            \
    CHECK_MESSAGE(thrown_, "expected an avatarfit::Error");      \
  } while (0)

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("avatarfit_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline TriMesh make_mesh(const std::vector<Vec3>& vertices, const std::vector<std::array<int, 3>>& faces) {
  TriMesh m;
  m.vertices.resize(static_cast<Eigen::Index>(vertices.size()), 3);
  for (std::size_t i = 0; i < vertices.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = vertices[i];
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int c = 0; c < 3; ++c) m.faces(static_cast<Eigen::Index>(f), c) = faces[f][c];
  }
  return m;
}

inline TriMesh single_triangle() { return make_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{{0, 1, 2}}}); }

/// nx × ny grid of unit-spaced vertices in the z = 0 plane, two triangles per cell.
inline TriMesh grid(int nx, int ny, double spacing = 1.0) {
  std::vector<Vec3> v;
  std::vector<std::array<int, 3>> f;
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) v.emplace_back(x * spacing, y * spacing, 0.0);
  }
  for (int y = 0; y + 1 < ny; ++y) {
    for (int x = 0; x + 1 < nx; ++x) {
      const int a = y * nx + x;
      f.push_back({a, a + 1, a + nx + 1});
      f.push_back({a, a + nx + 1, a + nx});
    }
  }
  return make_mesh(v, f);
}

inline TriMesh icosahedron(double radius = 1.0) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p = p.normalized() * radius;
  const std::vector<std::array<int, 3>> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                          {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                          {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                          {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return make_mesh(v, f);
}

/// Loop-style midpoint subdivision projected back onto the sphere.
inline TriMesh icosphere(int levels, double radius = 1.0) {
  TriMesh m = icosahedron(radius);
  for (int l = 0; l < levels; ++l) {
    std::vector<Vec3> v;
    for (int i = 0; i < m.num_vertices(); ++i) v.push_back(m.vertex(i));
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = mid.find(key); it != mid.end()) return it->second;
      v.push_back(((v[a] + v[b]) / 2.0).normalized() * radius);
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    std::vector<std::array<int, 3>> f;
    for (int i = 0; i < m.num_faces(); ++i) {
      const int a = m.faces(i, 0), b = m.faces(i, 1), c = m.faces(i, 2);
      const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
      f.push_back({a, ab, ca});
      f.push_back({b, bc, ab});
      f.push_back({c, ca, bc});
      f.push_back({ab, bc, ca});
    }
    m = make_mesh(v, f);
  }
  return m;
}

/// Path graph 0–1–…–(n−1) with unit edges, built directly.
inline VertexGraph path_graph(int n) {
  VertexGraph g;
  g.adjacency.resize(n);
  for (int i = 0; i + 1 < n; ++i) {
    g.adjacency[i].push_back({i + 1, 1.0});
    g.adjacency[i + 1].push_back({i, 1.0});
  }
  for (auto& row : g.adjacency) {
    std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.vertex < b.vertex; });
  }
  return g;
}

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

/// Independent all-pairs shortest paths (Floyd–Warshall) on a vertex graph.
inline std::vector<std::vector<double>> all_pairs(const VertexGraph& g) {
  const int n = g.num_vertices();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, std::numeric_limits<double>::infinity()));
  for (int i = 0; i < n; ++i) {
    d[i][i] = 0.0;
    for (const auto& nb : g.adjacency[i]) d[i][nb.vertex] = std::min(d[i][nb.vertex], nb.length);
  }
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    }
  }
  return d;
}

/// All-pairs hop counts by repeated BFS.
inline std::vector<std::vector<int>> all_hops(const VertexGraph& g) {
  const int n = g.num_vertices();
  std::vector<std::vector<int>> h(n, std::vector<int>(n, -1));
  for (int s = 0; s < n; ++s) {
    std::vector<int> queue{s};
    h[s][s] = 0;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const int u = queue[q];
      for (const auto& nb : g.adjacency[u]) {
        if (h[s][nb.vertex] < 0) {
          h[s][nb.vertex] = h[s][u] + 1;
          queue.push_back(nb.vertex);
        }
      }
    }
  }
  return h;
}

}  // namespace avatarfit::test
