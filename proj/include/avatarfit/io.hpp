#pragma once

#include "avatarfit/body_model.hpp"
#include "avatarfit/evaluation.hpp"
#include "avatarfit/mesh.hpp"
#include "avatarfit/registration.hpp"
#include "avatarfit/transfer.hpp"
#include "avatarfit/triangulation.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace avatarfit::io {

using json = nlohmann::ordered_json;

struct ObjReadOptions {
  /// Throw UnsupportedFeature on polygons instead of fan-triangulating them.
  bool strict = false;
};

struct ObjReadInfo {
  /// Number of polygons with more than three corners that were fanned.
  int fanned_polygons = 0;
};

TriMesh parse_obj(std::istream& in, const ObjReadOptions& options = {}, ObjReadInfo* info = nullptr);
TriMesh read_obj(const std::string& path, const ObjReadOptions& options = {}, ObjReadInfo* info = nullptr);
void write_obj(std::ostream& out, const TriMesh& mesh);
void write_obj(const std::string& path, const TriMesh& mesh);

/// Reads a model manifest (.avm) and the blob it names. The blob path is
/// resolved relative to the manifest's directory.
ParametricModel read_model(const std::string& manifest_path);
/// Writes `<stem>.avm` and `<stem>.bin` next to each other, storing tensors
/// at model.storage_dtype.
void write_model(const std::string& manifest_path, const ParametricModel& model);

json read_json(const std::string& path);
/// Two-space indented, newline terminated.
void write_json(const std::string& path, const json& value);
std::string dump(const json& value);

CameraSet cameras_from_json(const json& j);
json to_json(const CameraSet& cameras);
CameraSet read_cameras(const std::string& path);

/// Views are keyed by camera id and mapped onto CameraSet order; cameras
/// missing from a frame become absent views. A null joint is an observation
/// with zero confidence.
Keypoints2D keypoints2d_from_json(const json& j, const CameraSet& cameras);
json to_json(const Keypoints2D& keypoints, const CameraSet& cameras);
json to_json(const Keypoints3D& keypoints, const CameraSet& cameras);

struct FrameParams {
  int frame = 0;
  BodyParams params;
};

/// {frames: [{frame, theta, beta, psi}]}; missing beta / psi default to zero.
std::vector<FrameParams> params_from_json(const json& j, const ParametricModel& model);
json to_json(const std::vector<FrameParams>& frames);
/// Params of frame `frame`; throws InvalidArgument when absent.
BodyParams select_frame(const std::vector<FrameParams>& frames, int frame);

/// Unknown keys are rejected so typos do not silently fall back to defaults.
FitConfig fit_config_from_json(const json& j);
json to_json(const FitConfig& config);

/// Accepts one spec object or a list of rounds.
std::vector<TransferSpec> transfer_specs_from_json(const json& j);
json to_json(const TransferSpec& spec);

json to_json(const Stage1Report& report);
json to_json(const Stage2Report& report);
json to_json(const DeformationGraph& graph);
json to_json(const MetricReport& report);

/// 8- or 16-bit PNG; grey maps to 1 channel, colour to 3, alpha is dropped.
Image read_png(const std::string& path);
/// Writes 8-bit grey (1 channel) or RGB (3 channels).
void write_png(const std::string& path, const Image& image);

}  // namespace avatarfit::io
