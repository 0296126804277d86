#include "avatarfit/evaluation.hpp"
#include "avatarfit/registration.hpp"
#include "avatarfit/synth.hpp"
#include "support.hpp"

#include <functional>
#include <set>

using namespace avatarfit;
using namespace avatarfit::test;

namespace {

/// Irregular closed blob: no rotational symmetry, so rigid motions are
/// fully determined by closest-point constraints.
TriMesh blob() {
  TriMesh m = icosphere(3, 0.3);
  for (int v = 0; v < m.num_vertices(); ++v) {
    const Vec3 p = m.vertex(v);
    const double s = 1.0 + 0.25 * std::sin(9.0 * p.x()) * std::cos(6.0 * p.y()) + 0.15 * p.z() / 0.3;
    m.vertices.row(v) = (s * p).transpose();
  }
  return m;
}

TriMesh bumpy(const TriMesh& base, double amplitude, double frequency) {
  TriMesh m = base;
  const Points n = vertex_normals(base);
  for (int v = 0; v < m.num_vertices(); ++v) {
    const Vec3 p = base.vertex(v);
    const double h = amplitude * std::sin(frequency * p.x()) * std::sin(frequency * p.y() + 1.0);
    m.vertices.row(v) += h * n.row(v);
  }
  return m;
}

double mean_surface_error(const TriMesh& from, const TriMesh& to) {
  const SurfaceIndex index(to);
  double total = 0.0;
  for (int v = 0; v < from.num_vertices(); ++v) total += index.nearest(from.vertex(v)).distance;
  return total / from.num_vertices();
}

/// Every possible run of the greedy selection, enumerating each pick.
void enumerate_runs(const VertexGraph& g, int k, std::vector<bool> alive, std::vector<int> picked,
                    std::vector<std::vector<int>>& out) {
  bool any = false;
  for (int v = 0; v < g.num_vertices(); ++v) {
    if (!alive[v]) continue;
    any = true;
    auto next_alive = alive;
    for (int u : hop_neighborhood(g, v, k)) next_alive[u] = false;
    auto next = picked;
    next.push_back(v);
    enumerate_runs(g, k, next_alive, next, out);
  }
  if (!any) out.push_back(picked);
}

void check_cover_and_separation(const VertexGraph& g, const std::vector<int>& nodes, int k) {
  const auto hops = all_hops(g);
  for (int v = 0; v < g.num_vertices(); ++v) {
    int nearest = std::numeric_limits<int>::max();
    for (int n : nodes) {
      if (hops[n][v] >= 0) nearest = std::min(nearest, hops[n][v]);
    }
    CHECK(nearest <= k);
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      const int h = hops[nodes[i]][nodes[j]];
      CHECK((h < 0 || h >= k + 1));
    }
  }
}

}  // namespace

TEST_SUITE("node sampling") {
  TEST_CASE("single vertex") {
    VertexGraph g;
    g.adjacency.resize(1);
    CHECK(sample_nodes(g, 2, 0) == std::vector<int>{0});
  }

  TEST_CASE("path of five with k = 2, every possible run") {
    const VertexGraph g = path_graph(5);
    std::vector<std::vector<int>> runs;
    enumerate_runs(g, 2, std::vector<bool>(5, true), {}, runs);
    std::set<std::size_t> sizes;
    for (const auto& run : runs) {
      sizes.insert(run.size());
      check_cover_and_separation(g, run, 2);
    }
    CHECK(sizes == std::set<std::size_t>{1, 2});
    std::set<std::vector<int>> possible(runs.begin(), runs.end());
    for (std::uint64_t seed = 0; seed < 200; ++seed) CHECK(possible.count(sample_nodes(g, 2, seed)));
  }

  TEST_CASE("cover and separation on a sphere for many seeds") {
    const VertexGraph g = build_vertex_graph(icosphere(2));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      for (int k : {1, 2, 3}) check_cover_and_separation(g, sample_nodes(g, k, seed), k);
    }
    CHECK(sample_nodes(g, 2, 5) == sample_nodes(g, 2, 5));
  }

  TEST_CASE("k below one is rejected") { CHECK_ERROR_CODE(sample_nodes(path_graph(3), 0, 0), ErrorCode::InvalidArgument); }
}

TEST_SUITE("node radius and weight") {
  TEST_CASE("path radii") {
    CHECK(base_radius(path_graph(5), 2, 1) == doctest::Approx(1.0));
    CHECK(base_radius(path_graph(5), 0, 2) == doctest::Approx(1.5));
  }

  TEST_CASE("icosahedron vertex radius is the edge length") {
    const TriMesh m = icosahedron();
    const double edge = (m.vertex(0) - m.vertex(11)).norm();
    CHECK(base_radius(build_vertex_graph(m), 0, 1) == doctest::Approx(edge).epsilon(1e-12));
  }

  TEST_CASE("falloff values") {
    CHECK(node_weight(0.0, 2.0, 1.5) == 1.0);
    CHECK(node_weight(3.0, 2.0, 1.5) == 0.0);
    CHECK(node_weight(5.0, 2.0, 1.5) == 0.0);
    CHECK(node_weight(3.0 / std::sqrt(2.0), 2.0, 1.5) == doctest::Approx(0.125).epsilon(1e-12));
  }
}

TEST_SUITE("graph construction") {
  TEST_CASE("weights are normalized and supported") {
    const TriMesh m = icosphere(3, 0.3);
    FitConfig cfg;
    const DeformationGraph g = build_graph(m, cfg);
    CHECK(g.num_nodes() > 1);
    const VertexGraph vg = build_vertex_graph(m);
    for (int v = 0; v < m.num_vertices(); ++v) {
      const auto& row = g.vertex_weights[v];
      REQUIRE(!row.empty());
      double total = 0.0;
      for (const auto& w : row) {
        CHECK(w.weight > 0.0);
        CHECK(w.weight <= 1.0 + 1e-12);
        total += w.weight;
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
    // Weights vanish exactly where the geodesic distance reaches α·r.
    for (int i = 0; i < g.num_nodes(); i += 7) {
      const auto dist = geodesic_distance_field(vg, g.node_vertex_ids[i]);
      for (int v = 0; v < m.num_vertices(); ++v) {
        const bool listed = std::any_of(g.vertex_weights[v].begin(), g.vertex_weights[v].end(),
                                        [&](const auto& w) { return w.node == i; });
        if (dist[v] >= cfg.alpha * g.base_radii[i]) CHECK(!listed);
      }
    }
  }

  TEST_CASE("tiny mesh has one node and no smooth edges") {
    const DeformationGraph g = build_graph(single_triangle(), FitConfig{});
    REQUIRE(g.num_nodes() == 1);
    CHECK(g.smooth_edges.empty());
    for (const auto& row : g.vertex_weights) {
      REQUIRE(row.size() == 1);
      CHECK(row[0].node == 0);
      CHECK(row[0].weight == doctest::Approx(1.0));
    }
  }

  TEST_CASE("smooth edges match a brute-force pairwise check") {
    const TriMesh m = icosphere(3, 0.5);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      FitConfig cfg;
      cfg.seed = seed;
      const DeformationGraph g = build_graph(m, cfg);
      const VertexGraph vg = build_vertex_graph(m);
      std::set<std::pair<int, int>> expected;
      for (int i = 0; i < g.num_nodes(); ++i) {
        const auto dist = geodesic_distance_field(vg, g.node_vertex_ids[i]);
        for (int j = i + 1; j < g.num_nodes(); ++j) {
          if (dist[g.node_vertex_ids[j]] < 2.0 * std::max(g.base_radii[i], g.base_radii[j])) expected.insert({i, j});
        }
      }
      const std::set<std::pair<int, int>> got(g.smooth_edges.begin(), g.smooth_edges.end());
      CHECK(got == expected);
    }
  }

  TEST_CASE("isolated vertices bind to the hop-nearest node") {
    // Triangle plus a far-away disjoint triangle: each component gets its own node.
    const TriMesh m = make_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}},
                                {{{0, 1, 2}}, {{3, 4, 5}}});
    const DeformationGraph g = build_graph(m, FitConfig{});
    CHECK(g.num_nodes() == 2);
    for (const auto& row : g.vertex_weights) CHECK(!row.empty());
  }

  TEST_CASE("invalid config") {
    FitConfig cfg;
    cfg.alpha = 0.0;
    CHECK_ERROR_CODE(build_graph(single_triangle(), cfg), ErrorCode::InvalidArgument);
    cfg = FitConfig{};
    cfg.stage2.laplacian_weight = -1.0;
    CHECK_ERROR_CODE(build_graph(single_triangle(), cfg), ErrorCode::InvalidArgument);
  }

  TEST_CASE("identity transforms leave vertices unchanged") {
    const TriMesh m = blob();
    const DeformationGraph g = place_graph(build_graph(m, FitConfig{}), m);
    const Points warped = warp_vertices(g, m.vertices, std::vector<NodeTransform>(g.num_nodes()));
    CHECK((warped - m.vertices).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_SUITE("stage 1") {
  TEST_CASE("scan equal to the mesh is a fixed point") {
    const TriMesh m = blob();
    const FitConfig cfg;
    const DeformationGraph g = place_graph(build_graph(m, cfg), m);
    const Stage1Result r = solve_stage1(m, g, m, cfg);
    REQUIRE(!r.report.iterations.empty());
    CHECK(r.report.iterations.front().energy_after < 1e-10);
    for (const auto& t : r.transforms) {
      CHECK(t.translation.norm() < 1e-6);
      CHECK((t.rotation - Mat3::Identity()).norm() < 1e-6);
    }
  }

  TEST_CASE("rigid translation is recovered") {
    const TriMesh m = blob();
    TriMesh scan = m;
    scan.vertices.rowwise() += Eigen::RowVector3d(0.01, 0.0, 0.0);
    // Point-to-point data only sees the normal component of the offset on
    // each node's patch, so tangential motion creeps in through the smooth
    // term; the plane metric converges in a few steps.
    FitConfig cfg;
    cfg.stage1.point_to_plane = true;
    const DeformationGraph g = place_graph(build_graph(m, cfg), m);
    const Stage1Result r = solve_stage1(m, g, scan, cfg);
    double worst = 0.0;
    for (const auto& t : r.transforms) worst = std::max(worst, (t.translation - Vec3(0.01, 0, 0)).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-4);

    cfg.stage1.point_to_plane = false;
    const Stage1Result p2p = solve_stage1(m, g, scan, cfg);
    Vec3 mean = Vec3::Zero();
    for (const auto& t : p2p.transforms) mean += t.translation;
    mean /= static_cast<double>(p2p.transforms.size());
    CHECK(mean.x() > 0.005);
    CHECK(std::abs(mean.y()) < 1e-3);
    CHECK(std::abs(mean.z()) < 1e-3);
  }

  TEST_CASE("warp reduces the surface error on a bumpy target") {
    const TriMesh m = icosphere(3, 0.3);
    const TriMesh scan = bumpy(m, 0.01, 12.0);
    const FitConfig cfg;
    const DeformationGraph g = place_graph(build_graph(m, cfg), m);
    const Stage1Result r = solve_stage1(m, g, scan, cfg);
    CHECK(mean_surface_error(r.warped_mesh, scan) < mean_surface_error(m, scan));
    for (const auto& it : r.report.iterations) CHECK(it.energy_after <= it.energy_before);
    CHECK(r.report.num_nodes == g.num_nodes());
  }

  TEST_CASE("no correspondences within range") {
    const TriMesh m = icosphere(2, 0.3);
    TriMesh far = m;
    far.vertices.rowwise() += Eigen::RowVector3d(10.0, 0.0, 0.0);
    const FitConfig cfg;
    const DeformationGraph g = place_graph(build_graph(m, cfg), m);
    CHECK_ERROR_CODE(solve_stage1(m, g, far, cfg), ErrorCode::NoCorrespondences);
  }
}

TEST_SUITE("stage 2") {
  Correspondences all_matched(const Points& targets) {
    Correspondences c;
    c.targets = targets;
    c.mask.assign(targets.rows(), true);
    c.count = static_cast<int>(targets.rows());
    return c;
  }

  TEST_CASE("zero Laplacian weight gives the closed-form shift") {
    const TriMesh m = icosphere(2, 0.3);
    Rng rng(3);
    Points targets = m.vertices;
    for (int v = 0; v < m.num_vertices(); ++v) targets.row(v) += 0.01 * Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
    const Stage2Result r = solve_shifts(m, all_matched(targets), 0.0);
    CHECK((r.shifts - (targets - m.vertices)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((r.fitted_mesh.vertices - targets).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("scan equal to the mesh gives zero shifts") {
    const TriMesh m = blob();
    const Stage2Result r = solve_stage2(m, m, FitConfig{});
    CHECK(r.shifts.cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("Laplacian weight trades data fit for smoothness") {
    const TriMesh m = icosphere(3, 0.3);
    const TriMesh scan = bumpy(m, 0.01, 12.0);
    const SurfaceIndex index(scan);
    const Correspondences corr = find_correspondences(m, index, face_normals(scan), 0.05, 60.0, 1);
    const auto lap = umbrella_laplacian(build_vertex_graph(m));
    double last_smooth = std::numeric_limits<double>::infinity();
    double last_data = -1.0;
    for (double lambda : {1e-2, 1.0, 1e2}) {
      const Stage2Result r = solve_shifts(m, corr, lambda);
      const Eigen::MatrixXd ld = lap * Eigen::MatrixXd(r.shifts);
      const double smooth = ld.squaredNorm();
      double data = 0.0;
      for (int v = 0; v < m.num_vertices(); ++v) {
        if (corr.mask[v]) data += (m.vertices.row(v) + r.shifts.row(v) - corr.targets.row(v)).squaredNorm();
      }
      CHECK(smooth <= last_smooth * (1 + 1e-9));
      CHECK(data >= last_data * (1 - 1e-9));
      CHECK(r.report.laplacian_residual == doctest::Approx(smooth).epsilon(1e-9));
      CHECK(r.report.data_residual == doctest::Approx(data).epsilon(1e-9));
      last_smooth = smooth;
      last_data = data;
    }
  }

  TEST_CASE("umbrella Laplacian rows") {
    const auto lap = umbrella_laplacian(path_graph(3));
    const Eigen::MatrixXd dense(lap);
    Eigen::MatrixXd expected(3, 3);
    expected << 1, -1, 0, -0.5, 1, -0.5, 0, -1, 1;
    CHECK((dense - expected).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("singular systems") {
    const TriMesh m = icosphere(1);
    Correspondences c = all_matched(m.vertices);
    c.mask[3] = false;
    CHECK_ERROR_CODE(solve_shifts(m, c, 0.0), ErrorCode::SingularSystem);
    CHECK_NOTHROW(solve_shifts(m, c, 1.0));
    c.mask.assign(m.num_vertices(), false);
    CHECK_ERROR_CODE(solve_shifts(m, c, 1.0), ErrorCode::SingularSystem);
  }
}

TEST_SUITE("fit") {
  TEST_CASE("undisplaced scan fits back onto itself") {
    synth::Preset p = synth::preset_by_name("cylinder_chain");
    p.spacing = 0.04;
    const ParametricModel model = synth::make_model(p);
    const BodyParams params = synth::make_motion(model, p, 1).front();
    const TriMesh scan{lbs_forward(model, params).vertices, model.faces, {}, {}, {}};
    const FitResult r = fit(model, params, scan, FitConfig{});
    CHECK(chamfer_distance(r.fitted_mesh, scan, 20000, 1) < 1e-6);
    CHECK(r.displacement.cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("known displacement is partly recovered in rest space") {
    synth::Preset p = synth::preset_by_name("sphere");
    const ParametricModel model = synth::make_model(p);
    const BodyParams params = BodyParams::zeros(model);
    synth::DisplacementSpec spec;
    spec.amplitude = 0.005;
    const synth::Scan scan = synth::make_scan(model, params, spec);
    const FitResult r = fit(model, params, scan.mesh, FitConfig{}, FitStages::Stage2Only);
    const double err = (r.displacement - scan.true_displacement).norm();
    CHECK(err < scan.true_displacement.norm());
  }
}
