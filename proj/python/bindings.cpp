#include "avatarfit/body_model.hpp"
#include "avatarfit/error.hpp"
#include "avatarfit/evaluation.hpp"
#include "avatarfit/io.hpp"
#include "avatarfit/registration.hpp"
#include "avatarfit/synth.hpp"
#include "avatarfit/transfer.hpp"
#include "avatarfit/triangulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

namespace py = pybind11;
using namespace avatarfit;

namespace {

PyObject* g_error = nullptr;

using ImageArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// H×W or H×W×C float array in [0, 1].
Image to_image(const ImageArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw Error(ErrorCode::DimensionMismatch, "image must be HxW or HxWxC");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  Image img(w, h, c);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

ImageArray from_image(const Image& img) {
  ImageArray out(img.channels == 1 ? std::vector<py::ssize_t>{img.height, img.width}
                                   : std::vector<py::ssize_t>{img.height, img.width, img.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

FitStages parse_stages(const std::string& s) {
  if (s == "1") return FitStages::Stage1Only;
  if (s == "2") return FitStages::Stage2Only;
  if (s == "both") return FitStages::Both;
  throw Error(ErrorCode::InvalidArgument, "stages must be '1', '2' or 'both'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Parametric body model fitting: skinning, topology transfer, registration, triangulation, metrics";

  g_error = PyErr_NewException("avatarfit.Error", PyExc_RuntimeError, nullptr);
  m.attr("Error") = py::handle(g_error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(g_error)(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(g_error, inst.ptr());
    }
  });

  py::class_<TriMesh>(m, "TriMesh")
      .def(py::init<>())
      .def(py::init([](const Points& v, const Faces& f) {
             TriMesh mesh;
             mesh.vertices = v;
             mesh.faces = f;
             mesh.validate();
             return mesh;
           }),
           py::arg("vertices"), py::arg("faces"))
      .def_readwrite("vertices", &TriMesh::vertices)
      .def_readwrite("faces", &TriMesh::faces)
      .def_readwrite("uv_coords", &TriMesh::uv_coords)
      .def_readwrite("uv_faces", &TriMesh::uv_faces)
      .def_property_readonly("num_vertices", &TriMesh::num_vertices)
      .def_property_readonly("num_faces", &TriMesh::num_faces)
      .def("validate", &TriMesh::validate);

  py::class_<ParametricModel>(m, "ParametricModel")
      .def_readwrite("name", &ParametricModel::name)
      .def_readwrite("template_vertices", &ParametricModel::template_vertices)
      .def_readwrite("faces", &ParametricModel::faces)
      .def_readwrite("shape_dirs", &ParametricModel::shape_dirs)
      .def_readwrite("expr_dirs", &ParametricModel::expr_dirs)
      .def_readwrite("pose_dirs", &ParametricModel::pose_dirs)
      .def_readwrite("joint_regressor", &ParametricModel::joint_regressor)
      .def_readwrite("skin_weights", &ParametricModel::skin_weights)
      .def_readwrite("parents", &ParametricModel::parents)
      .def_readwrite("joint_names", &ParametricModel::joint_names)
      .def_property_readonly("num_vertices", &ParametricModel::num_vertices)
      .def_property_readonly("num_joints", &ParametricModel::num_joints)
      .def_property_readonly("shape_dim", &ParametricModel::shape_dim)
      .def_property_readonly("expr_dim", &ParametricModel::expr_dim)
      .def("rest_mesh", &ParametricModel::rest_mesh)
      .def("validate", &ParametricModel::validate);

  py::class_<BodyParams>(m, "BodyParams")
      .def_static("zeros", &BodyParams::zeros, py::arg("model"))
      .def_readwrite("theta", &BodyParams::theta)
      .def_readwrite("beta", &BodyParams::beta)
      .def_readwrite("psi", &BodyParams::psi)
      .def_readwrite("displacement", &BodyParams::displacement);

  // Skinning.
  m.def("rodrigues", &rodrigues, py::arg("axis_angle"));
  m.def(
      "lbs_forward",
      [](const ParametricModel& model, const BodyParams& params) {
        const PosedResult r = lbs_forward(model, params);
        Points joints(static_cast<Eigen::Index>(r.joint_transforms.size()), 3);
        for (std::size_t k = 0; k < r.joint_transforms.size(); ++k) {
          joints.row(static_cast<Eigen::Index>(k)) = r.joint_transforms[k].translation.transpose();
        }
        return py::make_tuple(r.vertices, joints);
      },
      py::arg("model"), py::arg("params"), "Posed vertices and posed joint locations.");
  m.def("lbs_inverse", &lbs_inverse, py::arg("model"), py::arg("posed_vertices"), py::arg("params"));
  m.def("regress_joints", &regress_joints, py::arg("model"), py::arg("shaped_vertices"));

  // Topology transfer.
  m.def(
      "transfer",
      [](const ParametricModel& source, const std::vector<int>& delete_ids) {
        TransferSpec spec;
        spec.delete_ids = delete_ids;
        return run_transfer(source, {spec}).model;
      },
      py::arg("model"), py::arg("delete_ids"), "Delete vertices, fill the holes and carry the model coefficients over.");

  // Registration.
  py::class_<Stage1Config>(m, "Stage1Config")
      .def(py::init<>())
      .def_readwrite("max_gauss_newton_iters", &Stage1Config::max_gauss_newton_iters)
      .def_readwrite("data_weight", &Stage1Config::data_weight)
      .def_readwrite("rigidity_weight", &Stage1Config::rigidity_weight)
      .def_readwrite("smooth_weight", &Stage1Config::smooth_weight)
      .def_readwrite("correspondence_max_dist", &Stage1Config::correspondence_max_dist)
      .def_readwrite("normal_angle_max", &Stage1Config::normal_angle_max)
      .def_readwrite("point_to_plane", &Stage1Config::point_to_plane)
      .def_readwrite("convergence_tol", &Stage1Config::convergence_tol);
  py::class_<Stage2Config>(m, "Stage2Config")
      .def(py::init<>())
      .def_readwrite("laplacian_weight", &Stage2Config::laplacian_weight)
      .def_readwrite("correspondence_max_dist", &Stage2Config::correspondence_max_dist)
      .def_readwrite("normal_angle_max", &Stage2Config::normal_angle_max);
  py::class_<FitConfig>(m, "FitConfig")
      .def(py::init<>())
      .def_readwrite("k", &FitConfig::k)
      .def_readwrite("alpha", &FitConfig::alpha)
      .def_readwrite("stage1", &FitConfig::stage1)
      .def_readwrite("stage2", &FitConfig::stage2)
      .def_readwrite("seed", &FitConfig::seed)
      .def_readwrite("jobs", &FitConfig::jobs);

  m.def("node_weight", &node_weight, py::arg("d"), py::arg("r"), py::arg("alpha"));
  m.def(
      "sample_nodes",
      [](const TriMesh& mesh, int k, std::uint64_t seed) { return sample_nodes(build_vertex_graph(mesh), k, seed); },
      py::arg("mesh"), py::arg("k"), py::arg("seed"));
  m.def(
      "fit",
      [](const ParametricModel& model, const BodyParams& params, const TriMesh& scan, const FitConfig& config,
         const std::string& stages) {
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit(model, params, scan, config, parse_stages(stages));
        }
        py::dict out;
        out["posed"] = r.posed_mesh;
        out["stage1"] = r.stage1_mesh;
        out["fitted"] = r.fitted_mesh;
        out["displacement"] = r.displacement;
        out["report"] = py::dict(py::arg("stage1_final_energy") = r.stage1.final_energy,
                                 py::arg("stage1_iterations") = r.stage1.iterations.size(),
                                 py::arg("stage1_converged") = r.stage1.converged,
                                 py::arg("num_nodes") = r.stage1.num_nodes,
                                 py::arg("stage2_correspondences") = r.stage2.correspondences,
                                 py::arg("stage2_relative_residual") = r.stage2.relative_residual);
        return out;
      },
      py::arg("model"), py::arg("params"), py::arg("scan"), py::arg("config") = FitConfig{},
      py::arg("stages") = "both");

  // Triangulation.
  py::class_<Camera>(m, "Camera")
      .def(py::init([](const std::string& id, const Mat3& K, const Mat3& R, const Vec3& t, int width, int height) {
             Camera c;
             c.id = id;
             c.K = K;
             c.R = R;
             c.t = t;
             c.width = width;
             c.height = height;
             c.validate();
             return c;
           }),
           py::arg("id"), py::arg("K"), py::arg("R"), py::arg("t"), py::arg("width"), py::arg("height"))
      .def_readonly("id", &Camera::id)
      .def_readonly("K", &Camera::K)
      .def_readonly("R", &Camera::R)
      .def_readonly("t", &Camera::t)
      .def_readonly("width", &Camera::width)
      .def_readonly("height", &Camera::height)
      .def("projection", &Camera::projection)
      .def(
          "project", [](const Camera& c, const Vec3& x) { return project(c.projection(), x); }, py::arg("point"));

  py::class_<RansacParams>(m, "RansacParams")
      .def(py::init<>())
      .def_readwrite("tau", &RansacParams::tau)
      .def_readwrite("p", &RansacParams::p)
      .def_readwrite("v", &RansacParams::v)
      .def_readwrite("max_iters_init", &RansacParams::max_iters_init)
      .def_readwrite("min_error_init", &RansacParams::min_error_init)
      .def_readwrite("conf_min", &RansacParams::conf_min)
      .def_readwrite("seed", &RansacParams::seed);

  m.def("adaptive_iterations", &adaptive_iterations, py::arg("p"), py::arg("inlier_ratio"), py::arg("v"));
  m.def(
      "triangulate_joint",
      [](const std::vector<std::optional<std::tuple<double, double, double>>>& observations,
         const std::vector<Camera>& cameras, const RansacParams& params) {
        std::vector<std::optional<Observation2D>> obs;
        for (const auto& o : observations) {
          if (o) {
            obs.push_back(Observation2D{std::get<0>(*o), std::get<1>(*o), std::get<2>(*o)});
          } else {
            obs.emplace_back();
          }
        }
        const RansacResult r = ransac_triangulate_joint(obs, CameraSet{cameras}, params);
        return py::make_tuple(r.point, r.inliers, r.error_px);
      },
      py::arg("observations"), py::arg("cameras"), py::arg("params") = RansacParams{},
      "observations[c] is (x, y, confidence) or None. Returns (point, inlier camera indices, error in px).");

  // Metrics.
  m.def(
      "chamfer_distance",
      [](const TriMesh& a, const TriMesh& b, int samples, std::uint64_t seed, int jobs) {
        py::gil_scoped_release release;
        return chamfer_distance(a, b, samples, seed, jobs);
      },
      py::arg("a"), py::arg("b"), py::arg("samples") = 100000, py::arg("seed") = 0, py::arg("jobs") = 1);
  m.def(
      "psnr",
      [](const ImageArray& a, const ImageArray& b, std::optional<ImageArray> mask) {
        const Image mi = mask ? to_image(*mask) : Image();
        return psnr(to_image(a), to_image(b), mask ? &mi : nullptr);
      },
      py::arg("a"), py::arg("b"), py::arg("mask") = py::none());
  m.def(
      "ssim",
      [](const ImageArray& a, const ImageArray& b, std::optional<ImageArray> mask) {
        const Image mi = mask ? to_image(*mask) : Image();
        return ssim(to_image(a), to_image(b), mask ? &mi : nullptr);
      },
      py::arg("a"), py::arg("b"), py::arg("mask") = py::none());
  m.def(
      "render",
      [](const TriMesh& mesh, const ImageArray& texture, const Camera& camera) {
        const RenderResult r = render(mesh, to_image(texture), camera);
        return py::make_tuple(from_image(r.image), from_image(r.mask));
      },
      py::arg("mesh"), py::arg("texture"), py::arg("camera"), "Returns (image, mask).");

  // Files.
  m.def(
      "read_obj", [](const std::string& path) { return io::read_obj(path); }, py::arg("path"));
  m.def(
      "write_obj", [](const std::string& path, const TriMesh& mesh) { io::write_obj(path, mesh); }, py::arg("path"),
      py::arg("mesh"));
  m.def("read_model", &io::read_model, py::arg("manifest_path"));
  m.def("write_model", &io::write_model, py::arg("manifest_path"), py::arg("model"));

  // Synthetic scenarios.
  m.def(
      "synth_model",
      [](const std::string& preset, bool blendshapes) {
        synth::Preset p = synth::preset_by_name(preset);
        p.blendshapes = blendshapes;
        return synth::make_model(p);
      },
      py::arg("preset") = "capsule_biped", py::arg("blendshapes") = false);
  m.def(
      "synth_scan",
      [](const std::string& preset, double amplitude) {
        synth::Preset p = synth::preset_by_name(preset);
        p.displacement.amplitude = amplitude;
        const ParametricModel model = synth::make_model(p);
        const BodyParams params = synth::make_motion(model, p, 1)[0];
        const synth::Scan scan = synth::make_scan(model, params, p.displacement);
        return py::make_tuple(model, params, scan.mesh, scan.true_displacement);
      },
      py::arg("preset") = "capsule_biped", py::arg("amplitude") = 0.01,
      "Returns (model, params, scan, true_displacement).");
  m.def(
      "synth_cameras",
      [](int n_cameras, double radius) {
        synth::RigSpec rig;
        rig.n_cameras = n_cameras;
        rig.radius = radius;
        return synth::make_cameras(rig).cameras;
      },
      py::arg("n_cameras") = 8, py::arg("radius") = 3.0);
}
