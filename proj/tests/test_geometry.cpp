#include "avatarfit/mesh.hpp"
#include "avatarfit/spatial.hpp"
#include "support.hpp"

#include <set>

using namespace avatarfit;
using namespace avatarfit::test;

TEST_SUITE("mesh") {
  TEST_CASE("validate rejects bad indices and repeated corners") {
    TriMesh m = single_triangle();
    CHECK_NOTHROW(m.validate());
    m.faces(0, 2) = 3;
    CHECK_ERROR_CODE(m.validate(), ErrorCode::InvalidMesh);
    m.faces(0, 2) = 0;
    CHECK_ERROR_CODE(m.validate(), ErrorCode::InvalidMesh);

    TriMesh uv = single_triangle();
    uv.uv_coords = Points2::Zero(2, 2);
    uv.uv_faces = Faces(1, 3);
    uv.uv_faces << 0, 1, 2;
    CHECK_ERROR_CODE(uv.validate(), ErrorCode::InvalidMesh);
  }

  TEST_CASE("vertex graph of a single triangle") {
    const VertexGraph g = build_vertex_graph(single_triangle());
    CHECK(g.num_edges() == 3);
    for (const auto& row : g.adjacency) CHECK(row.size() == 2);
  }

  TEST_CASE("vertex graph of two triangles sharing an edge") {
    const TriMesh m = make_mesh({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}}, {{{0, 1, 2}}, {{0, 2, 3}}});
    const VertexGraph g = build_vertex_graph(m);
    CHECK(g.num_edges() == 5);
  }

  TEST_CASE("unit strip edge lengths") {
    const TriMesh m = make_mesh({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {0.5, std::sqrt(0.75), 0}, {1.5, std::sqrt(0.75), 0}},
                                {{{0, 1, 3}}, {{1, 4, 3}}, {{1, 2, 4}}});
    const VertexGraph g = build_vertex_graph(m);
    for (const auto& [edge, length] : g.edges()) CHECK(length == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("graph is symmetric with positive lengths") {
    const VertexGraph g = build_vertex_graph(icosphere(2));
    for (int i = 0; i < g.num_vertices(); ++i) {
      for (const auto& nb : g.adjacency[i]) {
        CHECK(nb.length > 0.0);
        const auto& back = g.adjacency[nb.vertex];
        CHECK(std::any_of(back.begin(), back.end(), [&](const auto& x) { return x.vertex == i; }));
      }
    }
  }
}

TEST_SUITE("geodesics") {
  TEST_CASE("distance from a vertex to itself is zero") {
    const auto d = geodesic_distances(build_vertex_graph(icosahedron()), 4);
    CHECK(d.at(4) == 0.0);
  }

  TEST_CASE("unit path distances") {
    const auto d = geodesic_distances(path_graph(4), 0);
    CHECK(d == std::map<int, double>{{0, 0.0}, {1, 1.0}, {2, 2.0}, {3, 3.0}});
  }

  TEST_CASE("cutoff omits far vertices") {
    const auto d = geodesic_distances(path_graph(6), 0, 2.5);
    CHECK(d.size() == 3);
    CHECK(!d.count(3));
  }

  TEST_CASE("icosphere distances match all-pairs shortest paths") {
    const TriMesh m = icosphere(2);
    const VertexGraph g = build_vertex_graph(m);
    const auto oracle = all_pairs(g);
    for (int s : {0, 7, 41, 100}) {
      const auto field = geodesic_distance_field(g, s);
      for (int v = 0; v < g.num_vertices(); ++v) CHECK(field[v] == doctest::Approx(oracle[s][v]).epsilon(1e-12));
    }
    // Vertex 0 and its antipode.
    int antipode = 0;
    for (int v = 0; v < m.num_vertices(); ++v) {
      if ((m.vertex(v) + m.vertex(0)).norm() < 1e-9) antipode = v;
    }
    REQUIRE(antipode != 0);
    const auto d = geodesic_distances(g, 0);
    CHECK(d.at(antipode) >= (m.vertex(antipode) - m.vertex(0)).norm());
  }
}

TEST_SUITE("hops") {
  TEST_CASE("path neighbourhoods") {
    const VertexGraph g = path_graph(5);
    CHECK(hop_neighborhood(g, 2, 1) == std::vector<int>{1, 2, 3});
    CHECK(hop_neighborhood(g, 0, 2) == std::vector<int>{0, 1, 2});
    CHECK(hop_neighborhood(g, 3, 10) == std::vector<int>{0, 1, 2, 3, 4});
  }

  TEST_CASE("k below one is rejected") { CHECK_ERROR_CODE(hop_neighborhood(path_graph(3), 0, 0), ErrorCode::InvalidArgument); }

  TEST_CASE("neighbourhoods agree with BFS hop counts") {
    const VertexGraph g = build_vertex_graph(icosphere(1));
    const auto hops = all_hops(g);
    for (int s = 0; s < g.num_vertices(); s += 5) {
      for (int k = 1; k <= 3; ++k) {
        std::vector<int> expected;
        for (int v = 0; v < g.num_vertices(); ++v) {
          if (hops[s][v] >= 0 && hops[s][v] <= k) expected.push_back(v);
        }
        CHECK(hop_neighborhood(g, s, k) == expected);
      }
    }
  }

  TEST_CASE("connected components are labelled by their lowest vertex") {
    const TriMesh m = make_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}},
                                {{{3, 4, 5}}, {{0, 1, 2}}});
    CHECK(connected_components(build_vertex_graph(m)) == std::vector<int>{0, 0, 0, 3, 3, 3});
  }
}

TEST_SUITE("sampling") {
  TEST_CASE("a single sample lies inside the triangle") {
    const SurfaceSamples s = sample_surface(single_triangle(), 1, 3);
    REQUIRE(s.points.rows() == 1);
    const Vec3 b = s.barycentrics.row(0).transpose();
    CHECK(b.minCoeff() >= 0.0);
    CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s.points(0, 2) == 0.0);
    CHECK(s.points(0, 0) + s.points(0, 1) <= 1.0 + 1e-12);
  }

  TEST_CASE("same seed gives identical samples") {
    const TriMesh m = icosphere(1);
    const SurfaceSamples a = sample_surface(m, 500, 42);
    const SurfaceSamples b = sample_surface(m, 500, 42);
    CHECK(a.points == b.points);
    CHECK(a.face_ids == b.face_ids);
    const SurfaceSamples c = sample_surface(m, 500, 43);
    CHECK(a.points != c.points);
  }

  TEST_CASE("samples reconstruct from barycentrics") {
    const TriMesh m = icosphere(1);
    const SurfaceSamples s = sample_surface(m, 200, 5);
    for (int i = 0; i < 200; ++i) {
      const int f = s.face_ids[i];
      Vec3 p = Vec3::Zero();
      for (int c = 0; c < 3; ++c) p += s.barycentrics(i, c) * m.vertex(m.faces(f, c));
      CHECK((p - s.points.row(i).transpose()).norm() < 1e-12);
      CHECK(s.barycentrics.row(i).minCoeff() >= 0.0);
    }
  }

  TEST_CASE("area split follows a binomial law") {
    // Face 0 has area 4.5, face 1 has area 0.5.
    const TriMesh m = make_mesh({{0, 0, 0}, {3, 0, 0}, {0, 3, 0}, {10, 0, 0}, {11, 0, 0}, {10, 1, 0}},
                                {{{0, 1, 2}}, {{3, 4, 5}}});
    const int n = 100000;
    const SurfaceSamples s = sample_surface(m, n, 2024);
    const long first = std::count(s.face_ids.begin(), s.face_ids.end(), 0);
    const double sigma = std::sqrt(n * 0.9 * 0.1);
    CHECK(std::abs(first - 0.9 * n) <= 3.0 * sigma);
  }

  TEST_CASE("all-degenerate meshes cannot be sampled") {
    const TriMesh m = make_mesh({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{{0, 1, 2}}});
    CHECK_ERROR_CODE(sample_surface(m, 10, 0), ErrorCode::AllFacesDegenerate);
  }
}

TEST_SUITE("spatial") {
  // Projection onto a convex set is characterized by (q − p)·(x − p) ≤ 0 for
  // every x in the set; checking the three corners suffices for a triangle.
  bool is_projection(const Vec3& q, const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const double scale = std::max(1.0, (q - p).norm());
    for (const Vec3& x : {a, b, c}) {
      if ((q - p).dot(x - p) > 1e-10 * scale) return false;
    }
    // p must lie in the triangle: non-negative barycentrics on the plane.
    const Vec3 n = (b - a).cross(c - a);
    const double area = n.squaredNorm();
    const double u = (c - b).cross(p - b).dot(n) / area;
    const double v = (a - c).cross(p - c).dot(n) / area;
    const double w = (b - a).cross(p - a).dot(n) / area;
    return u >= -1e-10 && v >= -1e-10 && w >= -1e-10 && std::abs(u + v + w - 1.0) < 1e-9;
  }

  TEST_CASE("closest point on triangle satisfies the projection condition") {
    Rng rng(7);
    for (int trial = 0; trial < 2000; ++trial) {
      const Vec3 a(rng.normal(), rng.normal(), rng.normal());
      const Vec3 b(rng.normal(), rng.normal(), rng.normal());
      const Vec3 c(rng.normal(), rng.normal(), rng.normal());
      const Vec3 q = 2.0 * Vec3(rng.normal(), rng.normal(), rng.normal());
      const Vec3 p = closest_point_on_triangle(q, a, b, c);
      CHECK(is_projection(q, p, a, b, c));
    }
  }

  TEST_CASE("surface index agrees with a brute-force scan") {
    const TriMesh m = icosphere(2, 0.5);
    const SurfaceIndex index(m);
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
      const Vec3 q(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      double best = std::numeric_limits<double>::infinity();
      for (int f = 0; f < m.num_faces(); ++f) {
        const Vec3 p = closest_point_on_triangle(q, m.vertex(m.faces(f, 0)), m.vertex(m.faces(f, 1)),
                                                 m.vertex(m.faces(f, 2)));
        best = std::min(best, (p - q).norm());
      }
      const SurfacePoint hit = index.nearest(q);
      CHECK(std::abs(hit.distance - best) < 1e-9);
      CHECK(std::abs((hit.point - q).norm() - hit.distance) < 1e-12);
    }
  }

  TEST_CASE("query on the surface returns itself") {
    const TriMesh m = grid(5, 5);
    const SurfacePoint hit = nearest_point_on_surface(m, Vec3(1.25, 2.5, 0.0));
    CHECK(hit.distance < 1e-12);
  }

  TEST_CASE("ties resolve to the lowest face id") {
    // The query sits above a vertex shared by every face of the grid centre.
    const TriMesh m = grid(3, 3);
    const SurfacePoint hit = nearest_point_on_surface(m, Vec3(1.0, 1.0, 1.0));
    int lowest = m.num_faces();
    for (int f = 0; f < m.num_faces(); ++f) {
      for (int c = 0; c < 3; ++c) {
        if (m.faces(f, c) == 4) lowest = std::min(lowest, f);
      }
    }
    CHECK(hit.face_id == lowest);
  }

  TEST_CASE("point index agrees with brute force") {
    Rng rng(3);
    Points pts(300, 3);
    for (int i = 0; i < 300; ++i) pts.row(i) << rng.normal(), rng.normal(), rng.normal();
    pts.row(17) = pts.row(5);  // duplicate: the lower index must win
    const PointIndex index(pts);
    CHECK(index.nearest(pts.row(5).transpose()) == 5);
    for (int trial = 0; trial < 300; ++trial) {
      const Vec3 q(rng.normal(), rng.normal(), rng.normal());
      int best = 0;
      for (int i = 1; i < 300; ++i) {
        if ((pts.row(i).transpose() - q).squaredNorm() < (pts.row(best).transpose() - q).squaredNorm()) best = i;
      }
      CHECK(index.nearest(q) == best);
      CHECK(index.nearest_distance(q) == doctest::Approx((pts.row(best).transpose() - q).norm()));
    }
  }
}
