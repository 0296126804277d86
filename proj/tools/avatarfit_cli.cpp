// avatarfit command-line front end.

#include "avatarfit/body_model.hpp"
#include "avatarfit/error.hpp"
#include "avatarfit/evaluation.hpp"
#include "avatarfit/io.hpp"
#include "avatarfit/registration.hpp"
#include "avatarfit/synth.hpp"
#include "avatarfit/transfer.hpp"
#include "avatarfit/triangulation.hpp"
#include "avatarfit/util.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace avatarfit;
using io::json;

namespace {

void emit(const json& value, const std::string& out) {
  if (out.empty()) {
    std::cout << io::dump(value);
  } else {
    io::write_json(out, value);
  }
}

TriMesh load_mesh(const std::string& path) {
  io::ObjReadInfo info;
  TriMesh mesh = io::read_obj(path, {}, &info);
  if (info.fanned_polygons > 0) {
    std::cerr << io::dump(json{{"warning", "UnsupportedFeature"},
                               {"message", path + ": fan-triangulated " + std::to_string(info.fanned_polygons) +
                                               " polygons with more than 3 corners"}});
  }
  return mesh;
}

Image checker_texture(int size, int cells) {
  Image tex(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool odd = ((x * cells / size) + (y * cells / size)) % 2 == 1;
      const double u = static_cast<double>(x) / size;
      const double v = static_cast<double>(y) / size;
      tex.at(x, y, 0) = odd ? 0.85 : 0.25 + 0.5 * u;
      tex.at(x, y, 1) = odd ? 0.80 : 0.30;
      tex.at(x, y, 2) = odd ? 0.70 : 0.25 + 0.5 * v;
    }
  }
  return tex;
}

json points_json(const Points& p) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < p.rows(); ++r) rows.push_back({p(r, 0), p(r, 1), p(r, 2)});
  return rows;
}

struct TransferOpts {
  std::string model, spec, out;
};
struct PoseOpts {
  std::string model, params, out;
  int frame = 0;
};
struct FitOpts {
  std::string model, params, scan, config, out, report, stage = "both", displacement_out, stage1_out;
  int frame = 0;
  int jobs = 0;
};
struct TriOpts {
  std::string keypoints, cameras, out;
  double tau = 8.0, confidence = 0.99, conf_min = 0.3;
  int sample_views = 2;
  std::uint64_t seed = 0;
  int jobs = 0;
};
struct CdOpts {
  std::string a, b, out;
  int samples = 100000;
  std::uint64_t seed = 0;
  int jobs = 0;
};
struct ImgOpts {
  std::string a, b, mask, out;
};
struct RenderOpts {
  std::string mesh, texture, cameras, camera_id, out, mask;
  int jobs = 0;
};
struct SynthOpts {
  std::string preset = "capsule_biped", out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> frames;
  std::optional<double> amplitude, frequency, pixel_sigma, outlier_fraction, spacing;
};
struct GraphOpts {
  std::string model, out;
  int k = 2;
  double alpha = 1.5;
  std::uint64_t seed = 0;
};

int jobs_or_default(int jobs) { return jobs > 0 ? jobs : default_jobs(); }

void run_transfer_cmd(const TransferOpts& o) {
  const ParametricModel source = io::read_model(o.model);
  const auto rounds = io::transfer_specs_from_json(io::read_json(o.spec));
  const TransferResult result = run_transfer(source, rounds);
  ParametricModel lite = result.model;
  lite.storage_dtype = source.storage_dtype;
  io::write_model(o.out, lite);
  emit(json{{"source_vertices", source.num_vertices()},
            {"lite_vertices", lite.num_vertices()},
            {"lite_faces", lite.faces.rows()},
            {"rounds", rounds.size()},
            {"filled_faces", result.filled_faces}},
       "");
}

void run_pose_cmd(const PoseOpts& o) {
  const ParametricModel model = io::read_model(o.model);
  const auto frames = io::params_from_json(io::read_json(o.params), model);
  const BodyParams params = io::select_frame(frames, o.frame);
  TriMesh mesh = model.rest_mesh();
  mesh.vertices = lbs_forward(model, params).vertices;
  io::write_obj(o.out, mesh);
}

void run_fit_cmd(const FitOpts& o) {
  const ParametricModel model = io::read_model(o.model);
  const BodyParams params = io::select_frame(io::params_from_json(io::read_json(o.params), model), o.frame);
  const TriMesh scan = load_mesh(o.scan);
  FitConfig config = o.config.empty() ? FitConfig{} : io::fit_config_from_json(io::read_json(o.config));
  config.jobs = jobs_or_default(o.jobs);
  FitStages stages = FitStages::Both;
  if (o.stage == "1") stages = FitStages::Stage1Only;
  if (o.stage == "2") stages = FitStages::Stage2Only;

  const FitResult result = fit(model, params, scan, config, stages);
  io::write_obj(o.out, result.fitted_mesh);
  if (!o.stage1_out.empty()) io::write_obj(o.stage1_out, result.stage1_mesh);
  if (!o.displacement_out.empty()) io::write_json(o.displacement_out, json{{"displacement", points_json(result.displacement)}});
  json report{{"stage", o.stage}, {"config", io::to_json(config)}};
  if (stages != FitStages::Stage2Only) report["stage1"] = io::to_json(result.stage1);
  if (stages != FitStages::Stage1Only) report["stage2"] = io::to_json(result.stage2);
  report["displacement_rms"] =
      result.displacement.rows() > 0 ? std::sqrt(result.displacement.squaredNorm() / result.displacement.rows()) : 0.0;
  emit(report, o.report);
}

void run_triangulate_cmd(const TriOpts& o) {
  const CameraSet cameras = io::read_cameras(o.cameras);
  const Keypoints2D kp = io::keypoints2d_from_json(io::read_json(o.keypoints), cameras);
  RansacParams params;
  params.tau = o.tau;
  params.p = o.confidence;
  params.v = o.sample_views;
  params.conf_min = o.conf_min;
  params.seed = o.seed;
  const Keypoints3D out = triangulate_sequence(kp, cameras, params, jobs_or_default(o.jobs));
  emit(io::to_json(out, cameras), o.out);
}

void run_eval_cd_cmd(const CdOpts& o) {
  const TriMesh a = load_mesh(o.a);
  const TriMesh b = load_mesh(o.b);
  const ChamferDetail d = chamfer_detail(a, b, o.samples, o.seed, jobs_or_default(o.jobs));
  MetricReport r;
  r.cd_raw = d.cd_raw;
  r.cd_scaled = d.cd_raw * 1e3;
  r.samples = d.samples;
  json j = io::to_json(r);
  j["mean_a_to_b"] = d.mean_a_to_b;
  j["mean_b_to_a"] = d.mean_b_to_a;
  emit(j, o.out);
}

void run_eval_img_cmd(const ImgOpts& o) {
  const Image a = io::read_png(o.a);
  const Image b = io::read_png(o.b);
  std::optional<Image> mask;
  if (!o.mask.empty()) mask = io::read_png(o.mask);
  const Image* m = mask ? &*mask : nullptr;
  MetricReport r;
  const double p = psnr(a, b, m);
  if (std::isinf(p)) {
    r.psnr_infinite = true;
  } else {
    r.psnr = p;
  }
  r.ssim = ssim(a, b, m);
  if (m) {
    r.masked = true;
    for (double v : m->pixels) r.mask_pixels += v > 0.5 ? 1 : 0;
  }
  emit(io::to_json(r), o.out);
}

void run_render_cmd(const RenderOpts& o) {
  const TriMesh mesh = load_mesh(o.mesh);
  const Image texture = io::read_png(o.texture);
  const CameraSet cameras = io::read_cameras(o.cameras);
  const int c = cameras.find(o.camera_id);
  if (c < 0) throw Error(ErrorCode::InvalidArgument, "no camera with id '" + o.camera_id + "'");
  const RenderResult r = render(mesh, texture, cameras.cameras[c], jobs_or_default(o.jobs));
  io::write_png(o.out, r.image);
  if (!o.mask.empty()) io::write_png(o.mask, r.mask);
}

void run_synth_cmd(const SynthOpts& o) {
  synth::Preset preset = synth::preset_by_name(o.preset);
  if (o.seed) preset.seed = *o.seed;
  if (o.frames) preset.rig.frames = *o.frames;
  if (o.amplitude) preset.displacement.amplitude = *o.amplitude;
  if (o.frequency) preset.displacement.frequency = *o.frequency;
  if (o.pixel_sigma) preset.noise.pixel_sigma = *o.pixel_sigma;
  if (o.outlier_fraction) preset.noise.outlier_fraction = *o.outlier_fraction;
  if (o.spacing) preset.spacing = *o.spacing;
  preset.validate();

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  const ParametricModel model = synth::make_model(preset);
  const auto motion = synth::make_motion(model, preset, std::max(preset.rig.frames, 1));
  std::vector<io::FrameParams> frames;
  for (std::size_t f = 0; f < motion.size(); ++f) frames.push_back({static_cast<int>(f), motion[f]});
  const synth::Scan scan = synth::make_scan(model, motion.front(), preset.displacement);
  const synth::Rig rig = synth::make_rig(preset);

  io::write_model((dir / "model.avm").string(), model);
  io::write_json((dir / "params.json").string(), io::to_json(frames));
  io::write_obj((dir / "scan.obj").string(), scan.mesh);
  io::write_json((dir / "true_displacement.json").string(), json{{"displacement", points_json(scan.true_displacement)}});
  io::write_json((dir / "fit.json").string(), io::to_json(FitConfig{}));
  io::write_json((dir / "cameras.json").string(), io::to_json(rig.cameras));
  io::write_json((dir / "keypoints2d.json").string(), io::to_json(rig.keypoints, rig.cameras));
  json gt = json::array();
  for (std::size_t f = 0; f < rig.joints.size(); ++f) gt.push_back({{"frame", f}, {"points", points_json(rig.joints[f])}});
  io::write_json((dir / "joints_gt.json").string(), json{{"frames", gt}});
  io::write_png((dir / "texture.png").string(), checker_texture(256, 8));
  TriMesh textured = scan.mesh;
  textured.texture_path = "texture.png";
  const json scenario{{"preset", preset.name},
                      {"seed", preset.seed},
                      {"frames", preset.rig.frames},
                      {"num_vertices", model.num_vertices()},
                      {"num_joints", model.num_joints()},
                      {"displacement_amplitude", preset.displacement.amplitude},
                      {"pixel_sigma", preset.noise.pixel_sigma},
                      {"outlier_fraction", preset.noise.outlier_fraction},
                      {"files",
                       {{"model", "model.avm"},
                        {"params", "params.json"},
                        {"scan", "scan.obj"},
                        {"true_displacement", "true_displacement.json"},
                        {"fit_config", "fit.json"},
                        {"cameras", "cameras.json"},
                        {"keypoints2d", "keypoints2d.json"},
                        {"joints_gt", "joints_gt.json"},
                        {"texture", "texture.png"}}}};
  io::write_json((dir / "scenario.json").string(), scenario);
  emit(scenario, "");
}

void run_graph_cmd(const GraphOpts& o) {
  const ParametricModel model = io::read_model(o.model);
  FitConfig config;
  config.k = o.k;
  config.alpha = o.alpha;
  config.seed = o.seed;
  config.validate();
  const DeformationGraph graph = build_graph(model.rest_mesh(), config);
  json j = io::to_json(graph);
  j["k"] = o.k;
  j["alpha"] = o.alpha;
  j["seed"] = o.seed;
  emit(j, o.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avatarfit: body-model posing, mesh registration, triangulation and evaluation"};
  app.require_subcommand(1);
  std::function<void()> action;

  TransferOpts transfer;
  auto* cmd = app.add_subcommand("transfer", "Derive a reduced-topology model and transfer its coefficients");
  cmd->add_option("--model", transfer.model, "Source model manifest (.avm)")->required();
  cmd->add_option("--spec", transfer.spec, "Transfer spec JSON (one round or a list)")->required();
  cmd->add_option("--out", transfer.out, "Output model manifest (.avm)")->required();
  cmd->callback([&] { action = [&] { run_transfer_cmd(transfer); }; });

  PoseOpts pose;
  cmd = app.add_subcommand("pose", "Pose a model with linear blend skinning");
  cmd->add_option("--model", pose.model)->required();
  cmd->add_option("--params", pose.params)->required();
  cmd->add_option("--frame", pose.frame, "Frame id in the params file");
  cmd->add_option("--out", pose.out, "Output OBJ")->required();
  cmd->callback([&] { action = [&] { run_pose_cmd(pose); }; });

  FitOpts fitopts;
  cmd = app.add_subcommand("fit", "Register the posed model to a scan");
  cmd->add_option("--model", fitopts.model)->required();
  cmd->add_option("--params", fitopts.params)->required();
  cmd->add_option("--frame", fitopts.frame);
  cmd->add_option("--scan", fitopts.scan)->required();
  cmd->add_option("--config", fitopts.config, "Fit config JSON (defaults when omitted)");
  cmd->add_option("--out", fitopts.out, "Fitted OBJ")->required();
  cmd->add_option("--report", fitopts.report, "Report JSON (stdout when omitted)");
  cmd->add_option("--stage", fitopts.stage)->check(CLI::IsMember({"1", "2", "both"}));
  cmd->add_option("--stage1-out", fitopts.stage1_out, "Also write the Stage 1 mesh");
  cmd->add_option("--displacement-out", fitopts.displacement_out, "Recovered T-pose displacement JSON");
  cmd->add_option("--jobs", fitopts.jobs)->check(CLI::PositiveNumber);
  cmd->callback([&] { action = [&] { run_fit_cmd(fitopts); }; });

  TriOpts tri;
  cmd = app.add_subcommand("triangulate", "RANSAC triangulation of multi-view 2D keypoints");
  cmd->add_option("--keypoints", tri.keypoints)->required();
  cmd->add_option("--cameras", tri.cameras)->required();
  cmd->add_option("--tau", tri.tau, "Inlier reprojection threshold, px");
  cmd->add_option("--confidence", tri.confidence, "RANSAC success probability p");
  cmd->add_option("--sample-views", tri.sample_views);
  cmd->add_option("--conf-min", tri.conf_min, "Minimum detection confidence");
  cmd->add_option("--seed", tri.seed);
  cmd->add_option("--out", tri.out);
  cmd->add_option("--jobs", tri.jobs)->check(CLI::PositiveNumber);
  cmd->callback([&] { action = [&] { run_triangulate_cmd(tri); }; });

  CdOpts cd;
  cmd = app.add_subcommand("eval-cd", "Chamfer distance between two meshes");
  cmd->add_option("--a", cd.a)->required();
  cmd->add_option("--b", cd.b)->required();
  cmd->add_option("--samples", cd.samples)->check(CLI::PositiveNumber);
  cmd->add_option("--seed", cd.seed);
  cmd->add_option("--out", cd.out);
  cmd->add_option("--jobs", cd.jobs)->check(CLI::PositiveNumber);
  cmd->callback([&] { action = [&] { run_eval_cd_cmd(cd); }; });

  ImgOpts img;
  cmd = app.add_subcommand("eval-img", "PSNR and SSIM between two PNG images");
  cmd->add_option("--a", img.a)->required();
  cmd->add_option("--b", img.b)->required();
  cmd->add_option("--mask", img.mask);
  cmd->add_option("--out", img.out);
  cmd->callback([&] { action = [&] { run_eval_img_cmd(img); }; });

  RenderOpts rend;
  cmd = app.add_subcommand("render", "Rasterize a textured mesh into one camera");
  cmd->add_option("--mesh", rend.mesh)->required();
  cmd->add_option("--texture", rend.texture)->required();
  cmd->add_option("--cameras", rend.cameras)->required();
  cmd->add_option("--camera-id", rend.camera_id)->required();
  cmd->add_option("--out", rend.out)->required();
  cmd->add_option("--mask", rend.mask);
  cmd->add_option("--jobs", rend.jobs)->check(CLI::PositiveNumber);
  cmd->callback([&] { action = [&] { run_render_cmd(rend); }; });

  SynthOpts syn;
  cmd = app.add_subcommand("synth", "Write a synthetic scenario");
  cmd->add_option("--preset", syn.preset)->check(CLI::IsMember({"capsule_biped", "cylinder_chain", "sphere"}));
  cmd->add_option("--out-dir", syn.out_dir)->required();
  cmd->add_option("--seed", syn.seed);
  cmd->add_option("--frames", syn.frames)->check(CLI::PositiveNumber);
  cmd->add_option("--amplitude", syn.amplitude, "Displacement RMS, meters");
  cmd->add_option("--frequency", syn.frequency, "Displacement spatial frequency, cycles per meter");
  cmd->add_option("--pixel-sigma", syn.pixel_sigma);
  cmd->add_option("--outlier-fraction", syn.outlier_fraction);
  cmd->add_option("--spacing", syn.spacing, "Surface edge length, meters");
  cmd->callback([&] { action = [&] { run_synth_cmd(syn); }; });

  GraphOpts graph;
  cmd = app.add_subcommand("graph", "Dump the deformation graph of a model's template");
  cmd->add_option("--model", graph.model)->required();
  cmd->add_option("--k", graph.k);
  cmd->add_option("--alpha", graph.alpha);
  cmd->add_option("--seed", graph.seed);
  cmd->add_option("--out", graph.out);
  cmd->callback([&] { action = [&] { run_graph_cmd(graph); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << io::dump(json{{"error", "UsageError"}, {"message", e.what()}});
    std::cerr << app.help();
    return 1;
  }

  try {
    action();
  } catch (const Error& e) {
    std::cerr << io::dump(json{{"error", to_string(e.code())}, {"message", e.what()}});
    return 2;
  } catch (const std::exception& e) {
    std::cerr << io::dump(json{{"error", "InternalError"}, {"message", e.what()}});
    return 2;
  }
  return 0;
}
