#pragma once

#include "avatarfit/body_model.hpp"
#include "avatarfit/triangulation.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace avatarfit::synth {

enum class Kind { CapsuleBiped, CylinderChain, Sphere };

struct DisplacementSpec {
  double amplitude = 0.01;  // RMS of the normal displacement, meters
  double frequency = 1.0;   // spatial frequency, cycles per meter
  std::uint64_t seed = 11;
};

struct RigSpec {
  int n_cameras = 8;
  double radius = 3.0;
  double height = 0.0;  // camera centres sit at this y, looking at the origin
  int width = 4096;
  int height_px = 3000;
  double focal = 3000.0;
  int frames = 1;
};

struct NoiseSpec {
  double pixel_sigma = 0.0;
  double outlier_fraction = 0.0;
  double outlier_magnitude = 100.0;  // px
};

struct Preset {
  std::string name = "capsule_biped";
  Kind kind = Kind::CapsuleBiped;
  /// Target edge length of the generated surface, meters.
  double spacing = 0.03;
  int chain_joints = 3;
  /// Adds smooth non-zero shape, expression and pose blend directions.
  bool blendshapes = false;
  int shape_dim = 4;
  int expr_dim = 2;
  DisplacementSpec displacement;
  RigSpec rig;
  NoiseSpec noise;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Named presets: capsule_biped, cylinder_chain, sphere.
Preset preset_by_name(const std::string& name);

ParametricModel make_model(const Preset& preset);

struct Scan {
  TriMesh mesh;
  Points true_displacement;
};

/// Smooth band-limited normal displacement in T-pose (RMS = amplitude),
/// posed through the model together with `params`.
Scan make_scan(const ParametricModel& model, const BodyParams& params, const DisplacementSpec& spec);

/// Deterministic pose sequence for `frames` frames (a walk cycle for the
/// biped, gentle bends otherwise).
std::vector<BodyParams> make_motion(const ParametricModel& model, const Preset& preset, int frames);

struct Rig {
  CameraSet cameras;
  /// Ground-truth joints per frame (frames × J).
  std::vector<Points> joints;
  Keypoints2D keypoints;
  /// outliers[f][j][c]: view c of joint j in frame f was corrupted.
  std::vector<std::vector<std::vector<bool>>> outliers;
};

/// Ring of cameras looking at the origin.
CameraSet make_cameras(const RigSpec& rig);

/// Observes the given ground-truth joints with the preset's noise model.
Rig observe(const CameraSet& cameras, const std::vector<Points>& joints, const NoiseSpec& noise, std::uint64_t seed);

/// Cameras, model joints along make_motion (centred on the origin) and their
/// noisy 2D observations.
Rig make_rig(const Preset& preset);

}  // namespace avatarfit::synth
