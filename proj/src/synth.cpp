#include "avatarfit/synth.hpp"

#include "avatarfit/error.hpp"
#include "avatarfit/spatial.hpp"
#include "avatarfit/util.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

namespace avatarfit::synth {

namespace {

constexpr double kPi = std::numbers::pi;

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

struct MeshBuilder {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec2> uvs;
  std::vector<std::array<int, 3>> uv_faces;

  // Capsule around segment a-b (a == b gives a UV sphere). Returns the
  // vertex index range [begin, end).
  std::pair<int, int> add_capsule(const Vec3& a, const Vec3& b, double radius, double spacing) {
    const double length = (b - a).norm();
    const Vec3 axis = length > 0.0 ? Vec3((b - a) / length) : Vec3::UnitY();
    const Vec3 e1 = axis.unitOrthogonal();
    const Vec3 e2 = axis.cross(e1);
    const int around = std::max(8, static_cast<int>(std::lround(2.0 * kPi * radius / spacing)));
    const int cap = std::max(2, static_cast<int>(std::lround(0.5 * kPi * radius / spacing)));
    const int cyl = std::max(1, static_cast<int>(std::lround(length / spacing)));

    std::vector<std::pair<double, double>> profile;  // (axial offset, ring radius)
    for (int i = 1; i <= cap; ++i) {
      const double phi = -0.5 * kPi + i * 0.5 * kPi / cap;
      profile.emplace_back(radius * std::sin(phi), radius * std::cos(phi));
    }
    if (length > 0.0) {
      for (int j = 1; j < cyl; ++j) profile.emplace_back(length * j / cyl, radius);
    }
    for (int i = length > 0.0 ? 0 : 1; i < cap; ++i) {
      const double phi = i * 0.5 * kPi / cap;
      profile.emplace_back(length + radius * std::sin(phi), radius * std::cos(phi));
    }
    const int rings = static_cast<int>(profile.size());

    const int begin = static_cast<int>(vertices.size());
    const int bottom = begin;
    vertices.push_back(a - radius * axis);
    for (const auto& [s, rho] : profile) {
      for (int j = 0; j < around; ++j) {
        const double theta = 2.0 * kPi * j / around;
        vertices.push_back(a + s * axis + rho * (std::cos(theta) * e1 + std::sin(theta) * e2));
      }
    }
    const int top = static_cast<int>(vertices.size());
    vertices.push_back(b + radius * axis);
    auto ring_vertex = [&](int i, int j) { return begin + 1 + i * around + (j % around); };

    // UV grid with a duplicated seam column, plus one pole UV per fan slot.
    const int uv_begin = static_cast<int>(uvs.size());
    for (int i = 0; i < rings; ++i) {
      for (int j = 0; j <= around; ++j) {
        uvs.emplace_back(static_cast<double>(j) / around, static_cast<double>(i + 1) / (rings + 1));
      }
    }
    const int uv_bottom = static_cast<int>(uvs.size());
    for (int j = 0; j < around; ++j) uvs.emplace_back((j + 0.5) / around, 0.0);
    const int uv_top = static_cast<int>(uvs.size());
    for (int j = 0; j < around; ++j) uvs.emplace_back((j + 0.5) / around, 1.0);
    auto ring_uv = [&](int i, int j) { return uv_begin + i * (around + 1) + j; };

    for (int j = 0; j < around; ++j) {
      faces.push_back({bottom, ring_vertex(0, j + 1), ring_vertex(0, j)});
      uv_faces.push_back({uv_bottom + j, ring_uv(0, j + 1), ring_uv(0, j)});
    }
    for (int i = 0; i + 1 < rings; ++i) {
      for (int j = 0; j < around; ++j) {
        faces.push_back({ring_vertex(i, j), ring_vertex(i, j + 1), ring_vertex(i + 1, j + 1)});
        uv_faces.push_back({ring_uv(i, j), ring_uv(i, j + 1), ring_uv(i + 1, j + 1)});
        faces.push_back({ring_vertex(i, j), ring_vertex(i + 1, j + 1), ring_vertex(i + 1, j)});
        uv_faces.push_back({ring_uv(i, j), ring_uv(i + 1, j + 1), ring_uv(i + 1, j)});
      }
    }
    for (int j = 0; j < around; ++j) {
      faces.push_back({top, ring_vertex(rings - 1, j), ring_vertex(rings - 1, j + 1)});
      uv_faces.push_back({uv_top + j, ring_uv(rings - 1, j), ring_uv(rings - 1, j + 1)});
    }
    return {begin, top + 1};
  }
};

// Weight callback: vertex position -> per-joint weights (any scale, rows are
// normalized afterwards).
using WeightFn = std::function<Eigen::VectorXd(const Vec3&)>;

struct Part {
  Vec3 a;
  Vec3 b;
  double radius;
  WeightFn weights;
};

Eigen::VectorXd one_hot(int k, int j) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  w(j) = 1.0;
  return w;
}

Eigen::VectorXd blend(int k, int lo, int hi, double t) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  w(lo) += 1.0 - t;
  w(hi) += t;
  return w;
}

// Smooth scalar fields used for blend directions and displacements.
struct WaveField {
  std::vector<Vec3> directions;
  std::vector<double> frequencies;
  std::vector<double> phases;

  WaveField(Rng& rng, int waves, double frequency) {
    for (int w = 0; w < waves; ++w) {
      Vec3 d(rng.normal(), rng.normal(), rng.normal());
      directions.push_back(d.normalized());
      frequencies.push_back(frequency * rng.uniform(0.7, 1.3));
      phases.push_back(rng.uniform(0.0, 2.0 * kPi));
    }
  }

  double operator()(const Vec3& p) const {
    double s = 0.0;
    for (std::size_t w = 0; w < directions.size(); ++w) {
      s += std::sin(2.0 * kPi * frequencies[w] * directions[w].dot(p) + phases[w]);
    }
    return s / std::sqrt(static_cast<double>(directions.size()));
  }
};

RowMatrix normal_field_dirs(const Points& vertices, const Points& normals, int dims, double amplitude,
                            double frequency, Rng& rng) {
  RowMatrix dirs = RowMatrix::Zero(vertices.rows(), 3 * dims);
  for (int d = 0; d < dims; ++d) {
    const WaveField field(rng, 3, frequency);
    for (Eigen::Index v = 0; v < vertices.rows(); ++v) {
      const double s = amplitude * field(vertices.row(v).transpose());
      for (int c = 0; c < 3; ++c) dirs(v, c * dims + d) = s * normals(v, c);
    }
  }
  return dirs;
}

ParametricModel assemble(const std::string& name, const std::vector<Part>& parts, const std::vector<int>& parents,
                         const std::vector<std::string>& joint_names, const Points& joint_guess, const Preset& preset) {
  MeshBuilder builder;
  std::vector<Eigen::VectorXd> weights;
  for (const auto& part : parts) {
    const auto [begin, end] = builder.add_capsule(part.a, part.b, part.radius, preset.spacing);
    for (int v = begin; v < end; ++v) weights.push_back(part.weights(builder.vertices[v]));
  }
  const int n = static_cast<int>(builder.vertices.size());
  const int k = static_cast<int>(parents.size());

  ParametricModel model;
  model.name = name;
  model.parents = parents;
  model.joint_names = joint_names;
  model.template_vertices.resize(n, 3);
  for (int v = 0; v < n; ++v) model.template_vertices.row(v) = builder.vertices[v].transpose();
  model.faces.resize(static_cast<Eigen::Index>(builder.faces.size()), 3);
  model.uv_faces.resize(static_cast<Eigen::Index>(builder.faces.size()), 3);
  for (std::size_t f = 0; f < builder.faces.size(); ++f) {
    for (int c = 0; c < 3; ++c) {
      model.faces(static_cast<Eigen::Index>(f), c) = builder.faces[f][c];
      model.uv_faces(static_cast<Eigen::Index>(f), c) = builder.uv_faces[f][c];
    }
  }
  model.uv_coords.resize(static_cast<Eigen::Index>(builder.uvs.size()), 2);
  for (std::size_t i = 0; i < builder.uvs.size(); ++i) {
    model.uv_coords.row(static_cast<Eigen::Index>(i)) = builder.uvs[i].transpose();
  }

  model.skin_weights.resize(n, k);
  for (int v = 0; v < n; ++v) model.skin_weights.row(v) = (weights[v] / weights[v].sum()).transpose();

  // Each joint regresses to the mean of its nearest template vertices.
  model.joint_regressor = RowMatrix::Zero(k, n);
  const int take = std::min(n, 12);
  for (int j = 0; j < k; ++j) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const Vec3 target = joint_guess.row(j).transpose();
    std::partial_sort(order.begin(), order.begin() + take, order.end(), [&](int x, int y) {
      const double dx = (model.template_vertices.row(x).transpose() - target).squaredNorm();
      const double dy = (model.template_vertices.row(y).transpose() - target).squaredNorm();
      return dx < dy || (dx == dy && x < y);
    });
    for (int i = 0; i < take; ++i) model.joint_regressor(j, order[i]) = 1.0 / take;
  }

  Rng rng(derive_seed(preset.seed, 0xb1e4d));
  const int shape_dim = preset.blendshapes ? preset.shape_dim : 0;
  const int expr_dim = preset.blendshapes ? preset.expr_dim : 0;
  if (preset.blendshapes) {
    const Points normals = vertex_normals(model.rest_mesh());
    model.shape_dirs = normal_field_dirs(model.template_vertices, normals, shape_dim, 0.02, 1.5, rng);
    model.expr_dirs = normal_field_dirs(model.template_vertices, normals, expr_dim, 0.005, 3.0, rng);
    model.pose_dirs = normal_field_dirs(model.template_vertices, normals, 9 * (k - 1), 0.002, 2.0, rng);
  } else {
    model.shape_dirs = RowMatrix::Zero(n, 3 * shape_dim);
    model.expr_dirs = RowMatrix::Zero(n, 3 * expr_dim);
    model.pose_dirs = RowMatrix::Zero(n, 27 * (k - 1));
  }
  model.validate();
  return model;
}

ParametricModel capsule_biped(const Preset& preset) {
  constexpr int k = 8;
  enum { Pelvis, Chest, LHip, LKnee, RHip, RKnee, LShoulder, RShoulder };
  Points joints(k, 3);
  joints << 0.0, 1.0, 0.0,
            0.0, 1.35, 0.0,
            0.085, 0.86, 0.0,
            0.085, 0.45, 0.0,
            -0.085, 0.86, 0.0,
            -0.085, 0.45, 0.0,
            0.225, 1.40, 0.0,
            -0.225, 1.40, 0.0;
  auto leg = [&](int hip, int knee) {
    return [=](const Vec3& p) { return blend(k, hip, knee, smoothstep((0.5 - p.y()) / 0.1)); };
  };
  auto arm = [&](int shoulder) {
    return [=](const Vec3& p) { return blend(k, shoulder, Chest, smoothstep((p.y() - 1.30) / 0.12)); };
  };
  const std::vector<Part> parts{
      {{0.0, 1.05, 0.0}, {0.0, 1.45, 0.0}, 0.14,
       [](const Vec3& p) { return blend(k, Pelvis, Chest, smoothstep((p.y() - 1.05) / 0.40)); }},
      {{0.0, 1.75, 0.0}, {0.0, 1.80, 0.0}, 0.10, [](const Vec3&) { return one_hot(k, Chest); }},
      {{0.085, 0.12, 0.0}, {0.085, 0.78, 0.0}, 0.06, leg(LHip, LKnee)},
      {{-0.085, 0.12, 0.0}, {-0.085, 0.78, 0.0}, 0.06, leg(RHip, RKnee)},
      {{0.225, 0.85, 0.0}, {0.225, 1.35, 0.0}, 0.045, arm(LShoulder)},
      {{-0.225, 0.85, 0.0}, {-0.225, 1.35, 0.0}, 0.045, arm(RShoulder)},
  };
  return assemble(preset.name, parts, {-1, 0, 0, 2, 0, 4, 1, 1},
                  {"pelvis", "chest", "l_hip", "l_knee", "r_hip", "r_knee", "l_shoulder", "r_shoulder"}, joints,
                  preset);
}

ParametricModel cylinder_chain(const Preset& preset) {
  const int k = preset.chain_joints;
  constexpr double segment = 0.3;
  constexpr double radius = 0.06;
  Points joints(k, 3);
  std::vector<int> parents(k);
  std::vector<std::string> names(k);
  for (int j = 0; j < k; ++j) {
    joints.row(j) << segment * j, 0.0, 0.0;
    parents[j] = j - 1;
    names[j] = "link" + std::to_string(j);
  }
  const double end = segment * std::max(1, k - 1) + (k == 1 ? 0.0 : 0.2);
  const std::vector<Part> parts{{{0.0, 0.0, 0.0}, {end, 0.0, 0.0}, radius, [=](const Vec3& p) {
                                   // Each joint owns the segment after it; blends across joints.
                                   const double s = std::clamp(p.x() / segment, 0.0, static_cast<double>(k - 1));
                                   const int lo = std::min(static_cast<int>(std::floor(s)), k - 1);
                                   const int hi = std::min(lo + 1, k - 1);
                                   const double t = smoothstep((s - lo - 0.75) / 0.5);
                                   return blend(k, lo, hi, hi == lo ? 0.0 : t);
                                 }}};
  return assemble(preset.name, parts, parents, names, joints, preset);
}

ParametricModel sphere(const Preset& preset) {
  Points joints = Points::Zero(1, 3);
  const std::vector<Part> parts{{Vec3::Zero(), Vec3::Zero(), 0.3, [](const Vec3&) { return one_hot(1, 0); }}};
  ParametricModel model = assemble(preset.name, parts, {-1}, {"root"}, joints, preset);
  // Regress the single joint to the centroid.
  model.joint_regressor.setConstant(1.0 / model.num_vertices());
  return model;
}

}  // namespace

void Preset::validate() const {
  if (displacement.amplitude < 0.0) throw Error(ErrorCode::InvalidArgument, "displacement amplitude must be >= 0");
  if (rig.n_cameras < 2) throw Error(ErrorCode::InvalidArgument, "rig needs at least 2 cameras");
  if (!(noise.outlier_fraction >= 0.0 && noise.outlier_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "outlier fraction must lie in [0, 1)");
  }
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "spacing must be positive");
  if (kind == Kind::CylinderChain && chain_joints < 1) {
    throw Error(ErrorCode::InvalidArgument, "cylinder chain needs at least one joint");
  }
}

Preset preset_by_name(const std::string& name) {
  Preset p;
  p.name = name;
  if (name == "capsule_biped") {
    p.kind = Kind::CapsuleBiped;
    p.spacing = 0.015;
  } else if (name == "cylinder_chain") {
    p.kind = Kind::CylinderChain;
    p.spacing = 0.025;
  } else if (name == "sphere") {
    p.kind = Kind::Sphere;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown preset '" + name + "'");
  }
  return p;
}

ParametricModel make_model(const Preset& preset) {
  preset.validate();
  switch (preset.kind) {
    case Kind::CapsuleBiped: return capsule_biped(preset);
    case Kind::CylinderChain: return cylinder_chain(preset);
    case Kind::Sphere: return sphere(preset);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown preset kind");
}

Scan make_scan(const ParametricModel& model, const BodyParams& params, const DisplacementSpec& spec) {
  if (spec.amplitude < 0.0) throw Error(ErrorCode::InvalidArgument, "displacement amplitude must be >= 0");
  const int n = model.num_vertices();
  Scan scan;
  scan.true_displacement = Points::Zero(n, 3);
  if (spec.amplitude > 0.0) {
    const Points normals = vertex_normals(model.rest_mesh());
    Rng rng(spec.seed);
    const WaveField field(rng, 6, spec.frequency);
    std::vector<double> values(n);
    double sum_sq = 0.0;
    for (int v = 0; v < n; ++v) {
      values[v] = field(model.template_vertices.row(v).transpose());
      sum_sq += values[v] * values[v];
    }
    const double rms = std::sqrt(sum_sq / n);
    for (int v = 0; v < n; ++v) {
      scan.true_displacement.row(v) = spec.amplitude * values[v] / rms * normals.row(v);
    }
  }
  BodyParams posed = params;
  posed.displacement = scan.true_displacement;
  scan.mesh = model.rest_mesh();
  scan.mesh.vertices = lbs_forward(model, posed).vertices;
  return scan;
}

std::vector<BodyParams> make_motion(const ParametricModel& model, const Preset& preset, int frames) {
  std::vector<BodyParams> motion;
  const int k = model.num_joints();
  for (int f = 0; f < frames; ++f) {
    BodyParams p = BodyParams::zeros(model);
    const double phase = 2.0 * kPi * f / 30.0;
    if (preset.kind == Kind::CapsuleBiped && k == 8) {
      p.theta.row(0) << 0.0, 0.25 * std::sin(phase / 4.0), 0.0;
      p.theta.row(1) << 0.05 * std::sin(phase), 0.0, 0.0;
      p.theta.row(2) << 0.35 * std::sin(phase), 0.0, 0.0;
      p.theta.row(3) << 0.3 * (1.0 - std::cos(phase)), 0.0, 0.0;
      p.theta.row(4) << -0.35 * std::sin(phase), 0.0, 0.0;
      p.theta.row(5) << 0.3 * (1.0 + std::cos(phase)), 0.0, 0.0;
      p.theta.row(6) << -0.3 * std::sin(phase), 0.0, 0.15;
      p.theta.row(7) << 0.3 * std::sin(phase), 0.0, -0.15;
    } else {
      for (int j = 0; j < k; ++j) p.theta.row(j) << 0.1 * std::sin(phase + j), 0.0, 0.3 * std::sin(phase + 0.5 * j);
    }
    motion.push_back(std::move(p));
  }
  return motion;
}

CameraSet make_cameras(const RigSpec& rig) {
  CameraSet set;
  const Vec3 up = Vec3::UnitY();
  for (int c = 0; c < rig.n_cameras; ++c) {
    const double angle = 2.0 * kPi * c / rig.n_cameras;
    const Vec3 centre(rig.radius * std::cos(angle), rig.height, rig.radius * std::sin(angle));
    const Vec3 forward = (-centre).normalized();
    // Image y points down, x = y × z keeps the frame right-handed.
    const Vec3 down = (-up + up.dot(forward) * forward).normalized();
    const Vec3 right = down.cross(forward);
    Camera cam;
    cam.id = "cam" + std::to_string(c);
    cam.R.row(0) = right.transpose();
    cam.R.row(1) = down.transpose();
    cam.R.row(2) = forward.transpose();
    cam.t = -cam.R * centre;
    cam.K << rig.focal, 0.0, rig.width / 2.0, 0.0, rig.focal, rig.height_px / 2.0, 0.0, 0.0, 1.0;
    cam.width = rig.width;
    cam.height = rig.height_px;
    set.cameras.push_back(cam);
  }
  return set;
}

Rig observe(const CameraSet& cameras, const std::vector<Points>& joints, const NoiseSpec& noise, std::uint64_t seed) {
  Rig rig;
  rig.cameras = cameras;
  rig.joints = joints;
  const int ncam = static_cast<int>(cameras.cameras.size());
  const int n_outliers = static_cast<int>(std::lround(noise.outlier_fraction * ncam));
  std::vector<Mat34> projections;
  for (const auto& cam : cameras.cameras) projections.push_back(cam.projection());
  Rng rng(seed);
  for (std::size_t f = 0; f < joints.size(); ++f) {
    const int nj = static_cast<int>(joints[f].rows());
    Frame2D frame;
    frame.frame = static_cast<int>(f);
    frame.views.assign(ncam, std::vector<Observation2D>(nj));
    std::vector<std::vector<bool>> flags(nj, std::vector<bool>(ncam, false));
    for (int j = 0; j < nj; ++j) {
      std::vector<int> order(ncam);
      std::iota(order.begin(), order.end(), 0);
      for (int s = 0; s < n_outliers; ++s) {
        std::swap(order[s], order[s + rng.index(ncam - s)]);
        flags[j][order[s]] = true;
      }
      for (int c = 0; c < ncam; ++c) {
        const ProjectedPoint p = project_with_depth(projections[c], joints[f].row(j).transpose());
        Vec2 px = p.pixel;
        if (noise.pixel_sigma > 0.0) px += noise.pixel_sigma * Vec2(rng.normal(), rng.normal());
        if (flags[j][c]) {
          const double angle = rng.uniform(0.0, 2.0 * kPi);
          px += noise.outlier_magnitude * Vec2(std::cos(angle), std::sin(angle));
        }
        frame.views[c][j] = {px.x(), px.y(), p.depth > 0.0 ? 1.0 : 0.0};
      }
    }
    rig.keypoints.frames.push_back(std::move(frame));
    rig.outliers.push_back(std::move(flags));
  }
  return rig;
}

Rig make_rig(const Preset& preset) {
  preset.validate();
  const ParametricModel model = make_model(preset);
  const auto motion = make_motion(model, preset, preset.rig.frames);
  const Vec3 centre = lbs_forward(model, BodyParams::zeros(model)).joints_rest.colwise().mean().transpose();
  std::vector<Points> joints;
  for (const auto& params : motion) {
    const PosedResult posed = lbs_forward(model, params);
    Points frame(model.num_joints(), 3);
    for (int j = 0; j < model.num_joints(); ++j) {
      frame.row(j) = (posed.joint_transforms[j].translation - centre).transpose();
    }
    joints.push_back(std::move(frame));
  }
  return observe(make_cameras(preset.rig), joints, preset.noise, derive_seed(preset.seed, 0x419));
}

}  // namespace avatarfit::synth
