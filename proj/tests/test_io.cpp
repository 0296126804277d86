#include "avatarfit/io.hpp"
#include "avatarfit/synth.hpp"
#include "support.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace avatarfit;
using namespace avatarfit::test;
using avatarfit::io::json;

namespace {

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TriMesh parse(const std::string& text, io::ObjReadOptions options = {}, io::ObjReadInfo* info = nullptr) {
  std::istringstream in(text);
  return io::parse_obj(in, options, info);
}

const char* kCube = R"(# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
f 5 6 7
f 5 7 8
)";

ParametricModel small_model(TensorDtype dtype) {
  synth::Preset p = synth::preset_by_name("cylinder_chain");
  p.spacing = 0.05;
  p.blendshapes = true;
  ParametricModel m = synth::make_model(p);
  m.storage_dtype = dtype;
  return m;
}

}  // namespace

TEST_SUITE("obj") {
  TEST_CASE("cube") {
    const TriMesh m = parse(kCube);
    CHECK(m.num_vertices() == 8);
    CHECK(m.num_faces() == 12);
    CHECK(m.faces(0, 1) == 2);
  }

  TEST_CASE("quads are fanned and counted") {
    io::ObjReadInfo info;
    const TriMesh m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4\nf 1 2 5\n", {}, &info);
    CHECK(m.num_faces() == 3);
    CHECK(info.fanned_polygons == 1);
    CHECK(m.faces.row(0) == Eigen::RowVector3i(0, 1, 2));
    CHECK(m.faces.row(1) == Eigen::RowVector3i(0, 2, 3));
    CHECK_ERROR_CODE(parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", {true}), ErrorCode::UnsupportedFeature);
  }

  TEST_CASE("texture coordinates and negative indices") {
    const TriMesh m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n");
    REQUIRE(m.has_uvs());
    CHECK(m.faces.row(0) == Eigen::RowVector3i(0, 1, 2));
    CHECK(m.uv_coords(1, 0) == 1.0);
  }

  TEST_CASE("partial texture coordinates are dropped") {
    const TriMesh m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nf 1/1 2/1 3/1\nf 2 4 3\n");
    CHECK(!m.has_uvs());
  }

  TEST_CASE("round trip") {
    const TriMesh m = icosphere(2, 0.37);
    std::stringstream buffer;
    io::write_obj(buffer, m);
    const TriMesh back = io::parse_obj(buffer);
    CHECK(back.faces == m.faces);
    CHECK((back.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("file round trip keeps texture coordinates") {
    TempDir dir;
    synth::Preset p = synth::preset_by_name("sphere");
    const TriMesh m = synth::make_model(p).rest_mesh();
    REQUIRE(m.has_uvs());
    io::write_obj(dir.file("m.obj"), m);
    const TriMesh back = io::read_obj(dir.file("m.obj"));
    CHECK(back.uv_faces == m.uv_faces);
    CHECK((back.uv_coords - m.uv_coords).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back.vertices == m.vertices);
  }

  TEST_CASE("malformed input") {
    CHECK_ERROR_CODE(parse("v 0 0\n"), ErrorCode::ParseError);
    CHECK_ERROR_CODE(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"), ErrorCode::ParseError);
    CHECK_ERROR_CODE(parse("v 0 0 0\nv 1 0 0\nf 1 2\n"), ErrorCode::ParseError);
    CHECK_ERROR_CODE(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 x 3\n"), ErrorCode::ParseError);
    CHECK_ERROR_CODE(io::read_obj("/nonexistent/dir/mesh.obj"), ErrorCode::IoError);
  }

  TEST_CASE("error messages carry the line number") {
    try {
      parse("v 0 0 0\nv 1 0 0\nv oops 1 0\n");
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
}

TEST_SUITE("model container") {
  TEST_CASE("f32 and f64 round trips are byte-stable") {
    for (TensorDtype dtype : {TensorDtype::F32, TensorDtype::F64}) {
      TempDir dir;
      const ParametricModel m = small_model(dtype);
      io::write_model(dir.file("a.avm"), m);
      const ParametricModel back = io::read_model(dir.file("a.avm"));
      io::write_model(dir.file("b.avm"), back);
      CHECK(slurp(dir.file("a.bin")) == slurp(dir.file("b.bin")));
      CHECK(back.parents == m.parents);
      CHECK(back.joint_names == m.joint_names);
      CHECK(back.faces == m.faces);
      CHECK(back.uv_faces == m.uv_faces);
      CHECK(back.storage_dtype == dtype);
      const double tol = dtype == TensorDtype::F64 ? 0.0 : 1e-6;
      CHECK((back.template_vertices - m.template_vertices).cwiseAbs().maxCoeff() <= tol);
      CHECK((back.pose_dirs - m.pose_dirs).cwiseAbs().maxCoeff() <= tol);
      CHECK((back.joint_regressor - m.joint_regressor).cwiseAbs().maxCoeff() <= tol);
    }
  }

  TEST_CASE("wrong declared shape names the tensor") {
    TempDir dir;
    io::write_model(dir.file("m.avm"), small_model(TensorDtype::F32));
    json manifest = io::read_json(dir.file("m.avm"));
    manifest["tensors"]["shape_dirs"]["shape"][2] = 7;
    io::write_json(dir.file("m.avm"), manifest);
    try {
      io::read_model(dir.file("m.avm"));
      FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ShapeMismatch);
      CHECK(std::string(e.what()).find("shape_dirs") != std::string::npos);
    }
  }

  TEST_CASE("skin weights that do not sum to one fail on load") {
    TempDir dir;
    const ParametricModel m = small_model(TensorDtype::F64);
    io::write_model(dir.file("m.avm"), m);
    const json manifest = io::read_json(dir.file("m.avm"));
    const auto offset = manifest["tensors"]["skin_weights"]["byte_offset"].get<std::size_t>();
    std::vector<char> blob = slurp(dir.file("m.bin"));
    for (int k = 0; k < m.num_joints(); ++k) {
      double w;
      std::memcpy(&w, blob.data() + offset + 8 * k, 8);
      w *= 0.9;
      std::memcpy(blob.data() + offset + 8 * k, &w, 8);
    }
    std::ofstream(dir.file("m.bin"), std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size()));
    CHECK_ERROR_CODE(io::read_model(dir.file("m.avm")), ErrorCode::InvariantViolation);
  }

  TEST_CASE("truncated blob and broken manifests") {
    TempDir dir;
    io::write_model(dir.file("m.avm"), small_model(TensorDtype::F32));
    std::vector<char> blob = slurp(dir.file("m.bin"));
    std::ofstream(dir.file("m.bin"), std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size() / 2));
    CHECK_ERROR_CODE(io::read_model(dir.file("m.avm")), ErrorCode::BlobTruncated);

    json manifest = io::read_json(dir.file("m.avm"));
    manifest.erase("parents");
    io::write_json(dir.file("m.avm"), manifest);
    CHECK_ERROR_CODE(io::read_model(dir.file("m.avm")), ErrorCode::ManifestError);

    manifest = io::read_json(dir.file("m.avm"));
    manifest["tensors"]["template"]["dtype"] = "f16";
    io::write_json(dir.file("m.avm"), manifest);
    CHECK_ERROR_CODE(io::read_model(dir.file("m.avm")), ErrorCode::ManifestError);
  }
}

TEST_SUITE("json formats") {
  TEST_CASE("cameras round trip and reject distortion") {
    const CameraSet cams = synth::make_cameras(synth::RigSpec{});
    const json j = io::to_json(cams);
    CHECK(j["cameras"][0]["dist"].is_null());
    const CameraSet back = io::cameras_from_json(j);
    REQUIRE(back.cameras.size() == cams.cameras.size());
    for (std::size_t c = 0; c < cams.cameras.size(); ++c) {
      CHECK(back.cameras[c].id == cams.cameras[c].id);
      CHECK(back.cameras[c].projection() == cams.cameras[c].projection());
    }
    json bad = j;
    bad["cameras"][1]["dist"] = {0.1, 0.0, 0.0, 0.0, 0.0};
    CHECK_ERROR_CODE(io::cameras_from_json(bad), ErrorCode::UnsupportedFeature);
    bad["cameras"][1]["dist"] = {0.0, 0.0, 0.0, 0.0, 0.0};
    CHECK_NOTHROW(io::cameras_from_json(bad));
  }

  TEST_CASE("keypoints by camera id") {
    CameraSet cams = synth::make_cameras(synth::RigSpec{});
    const json j = json::parse(R"({"frames": [{"frame": 4, "views": {
        "cam2": [[10, 20, 0.9], null], "cam0": [[1, 2, 1.0], [3, 4, 0.5]]}}]})");
    const Keypoints2D kp = io::keypoints2d_from_json(j, cams);
    REQUIRE(kp.frames.size() == 1);
    CHECK(kp.frames[0].frame == 4);
    CHECK(kp.frames[0].views[2][0].x == 10.0);
    CHECK(kp.frames[0].views[2][1].confidence == 0.0);
    CHECK(kp.frames[0].views[0][1].y == 4.0);
    CHECK(kp.frames[0].views[1].empty());

    const json unknown = json::parse(R"({"frames": [{"frame": 0, "views": {"camX": [[1, 2, 1]]}}]})");
    CHECK_ERROR_CODE(io::keypoints2d_from_json(unknown, cams), ErrorCode::InvalidArgument);
    const json ragged = json::parse(R"({"frames": [{"frame": 0, "views": {"cam0": [[1, 2, 1]], "cam1": []}}]})");
    CHECK_ERROR_CODE(io::keypoints2d_from_json(ragged, cams), ErrorCode::DimensionMismatch);
  }

  TEST_CASE("2D keypoints survive a round trip") {
    synth::Preset p = synth::preset_by_name("capsule_biped");
    p.rig.frames = 2;
    p.noise.pixel_sigma = 1.0;
    const synth::Rig rig = synth::make_rig(p);
    const Keypoints2D back = io::keypoints2d_from_json(io::to_json(rig.keypoints, rig.cameras), rig.cameras);
    REQUIRE(back.frames.size() == 2);
    for (std::size_t c = 0; c < rig.cameras.cameras.size(); ++c) {
      for (std::size_t j = 0; j < back.frames[1].views[c].size(); ++j) {
        CHECK(back.frames[1].views[c][j].x == rig.keypoints.frames[1].views[c][j].x);
        CHECK(back.frames[1].views[c][j].confidence == rig.keypoints.frames[1].views[c][j].confidence);
      }
    }
  }

  TEST_CASE("3D keypoint output marks invalid joints") {
    const CameraSet cams = synth::make_cameras(synth::RigSpec{});
    Keypoints3D k;
    Frame3D f;
    f.frame = 2;
    f.joints = {Joint3D{Vec3(0.1, 0.2, 0.3), {0, 1, 2, 3}, 0.5}, std::nullopt};
    f.reprojections.assign(cams.cameras.size(), {Vec2(1, 2), std::nullopt});
    k.frames.push_back(f);
    const json j = io::to_json(k, cams);
    CHECK(j["frames"][0]["points"][1].is_null());
    CHECK(j["frames"][0]["inliers"][0][1] == "cam1");
    CHECK(j["frames"][0]["reprojections"]["cam3"][1].is_null());
    CHECK(j["frames"][0]["errors_px"][0] == 0.5);
  }

  TEST_CASE("params default missing coefficients to zero") {
    const ParametricModel m = small_model(TensorDtype::F32);
    json j;
    j["frames"] = json::array();
    json frame;
    frame["frame"] = 3;
    frame["theta"] = json::array();
    for (int k = 0; k < m.num_joints(); ++k) frame["theta"].push_back({0.0, 0.1 * k, 0.0});
    j["frames"].push_back(frame);
    const auto frames = io::params_from_json(j, m);
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].params.beta.size() == m.shape_dim());
    CHECK(frames[0].params.beta.isZero(0.0));
    CHECK(frames[0].params.theta(2, 1) == doctest::Approx(0.2));
    CHECK(io::select_frame(frames, 3).theta == frames[0].params.theta);
    CHECK_ERROR_CODE(io::select_frame(frames, 4), ErrorCode::InvalidArgument);
    const auto again = io::params_from_json(io::to_json(frames), m);
    CHECK(again[0].params.theta == frames[0].params.theta);

    j["frames"][0]["beta"] = {1.0};
    CHECK_ERROR_CODE(io::params_from_json(j, m), ErrorCode::DimensionMismatch);
  }

  TEST_CASE("fit config") {
    const FitConfig cfg = io::fit_config_from_json(json::parse(R"({"k": 3, "stage2": {"laplacian_weight": 4.5}})"));
    CHECK(cfg.k == 3);
    CHECK(cfg.alpha == 1.5);
    CHECK(cfg.stage2.laplacian_weight == 4.5);
    const FitConfig back = io::fit_config_from_json(io::to_json(cfg));
    CHECK(back.k == 3);
    CHECK(back.stage2.laplacian_weight == 4.5);
    CHECK(back.stage1.max_gauss_newton_iters == cfg.stage1.max_gauss_newton_iters);
    CHECK_ERROR_CODE(io::fit_config_from_json(json::parse(R"({"aplha": 2})")), ErrorCode::ParseError);
  }

  TEST_CASE("transfer specs accept one or many rounds") {
    CHECK(io::transfer_specs_from_json(json::parse(R"({"delete_ids": [1, 2]})")).size() == 1);
    const auto rounds = io::transfer_specs_from_json(json::parse(R"({"rounds": [{"delete_ids": [1]}, {"flatten_regions": [[0, 1]]}]})"));
    REQUIRE(rounds.size() == 2);
    CHECK(rounds[1].flatten_regions[0] == std::vector<int>{0, 1});
    CHECK(io::transfer_specs_from_json(json::parse(R"([{}, {}, {}])")).size() == 3);
  }

  TEST_CASE("metric report encodes infinite psnr as null") {
    MetricReport r;
    r.psnr_infinite = true;
    r.cd_raw = 0.002;
    r.cd_scaled = 2.0;
    const json j = io::to_json(r);
    CHECK(j["psnr"].is_null());
    CHECK(j["psnr_infinite"] == true);
    CHECK(j["cd_scaled"] == 2.0);
  }
}

TEST_SUITE("png") {
  TEST_CASE("colour and grey round trips at 8 bits") {
    TempDir dir;
    Image rgb(7, 5, 3);
    for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<double>(i % 256) / 255.0;
    io::write_png(dir.file("c.png"), rgb);
    const Image back = io::read_png(dir.file("c.png"));
    CHECK(back.channels == 3);
    CHECK(back.width == 7);
    CHECK(back.height == 5);
    for (std::size_t i = 0; i < rgb.pixels.size(); ++i) CHECK(back.pixels[i] == doctest::Approx(rgb.pixels[i]).epsilon(1e-12));

    Image grey(4, 4, 1, 0.5);
    io::write_png(dir.file("g.png"), grey);
    const Image g = io::read_png(dir.file("g.png"));
    CHECK(g.channels == 1);
    CHECK(std::abs(g.pixels[0] - 0.5) <= 0.5 / 255.0);
  }

  TEST_CASE("missing file") { CHECK_ERROR_CODE(io::read_png("/nonexistent.png"), ErrorCode::IoError); }
}
