#include "avatarfit/io.hpp"

#include "avatarfit/error.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace avatarfit::io {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void parse_error(int line, const std::string& what) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what);
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Resolves a 1-based (or negative, relative) OBJ index.
int resolve_index(long raw, int count, int line) {
  long idx = raw > 0 ? raw - 1 : count + raw;
  if (raw == 0 || idx < 0 || idx >= count) parse_error(line, "index " + std::to_string(raw) + " out of range");
  return static_cast<int>(idx);
}

}  // namespace

TriMesh parse_obj(std::istream& in, const ObjReadOptions& options, ObjReadInfo* info) {
  std::vector<Vec3> vertices;
  std::vector<Vec2> uvs;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<int, 3>> uv_faces;
  bool all_faces_have_uv = true;
  int fanned = 0;

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) parse_error(lineno, "malformed vertex");
      vertices.push_back(p);
    } else if (tag == "vt") {
      Vec2 t;
      if (!(ss >> t.x() >> t.y())) parse_error(lineno, "malformed texture coordinate");
      uvs.push_back(t);
    } else if (tag == "f") {
      std::vector<int> vi;
      std::vector<int> ti;
      bool has_uv = true;
      std::string corner;
      while (ss >> corner) {
        const auto slash = corner.find('/');
        const std::string vpart = corner.substr(0, slash);
        std::string tpart;
        if (slash != std::string::npos) {
          const auto second = corner.find('/', slash + 1);
          tpart = corner.substr(slash + 1, second == std::string::npos ? std::string::npos : second - slash - 1);
        }
        try {
          std::size_t used = 0;
          const long v = std::stol(vpart, &used);
          if (used != vpart.size()) parse_error(lineno, "malformed face corner '" + corner + "'");
          vi.push_back(resolve_index(v, static_cast<int>(vertices.size()), lineno));
          if (tpart.empty()) {
            has_uv = false;
          } else {
            const long t = std::stol(tpart, &used);
            if (used != tpart.size()) parse_error(lineno, "malformed face corner '" + corner + "'");
            ti.push_back(resolve_index(t, static_cast<int>(uvs.size()), lineno));
          }
        } catch (const std::logic_error&) {
          parse_error(lineno, "malformed face corner '" + corner + "'");
        }
      }
      if (vi.size() < 3) parse_error(lineno, "face with fewer than 3 corners");
      if (vi.size() > 3) {
        if (options.strict) {
          throw Error(ErrorCode::UnsupportedFeature,
                      "line " + std::to_string(lineno) + ": polygon with " + std::to_string(vi.size()) + " corners");
        }
        ++fanned;
      }
      for (std::size_t c = 1; c + 1 < vi.size(); ++c) {
        faces.push_back({vi[0], vi[c], vi[c + 1]});
        if (has_uv) uv_faces.push_back({ti[0], ti[c], ti[c + 1]});
      }
      all_faces_have_uv = all_faces_have_uv && has_uv;
    }
    // vn, g, o, s, usemtl, mtllib and the rest carry nothing we keep.
  }

  TriMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(vertices.size()), 3);
  for (std::size_t i = 0; i < vertices.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = vertices[i];
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int c = 0; c < 3; ++c) mesh.faces(static_cast<Eigen::Index>(f), c) = faces[f][c];
  }
  if (all_faces_have_uv && !faces.empty() && !uvs.empty()) {
    mesh.uv_coords.resize(static_cast<Eigen::Index>(uvs.size()), 2);
    for (std::size_t i = 0; i < uvs.size(); ++i) mesh.uv_coords.row(static_cast<Eigen::Index>(i)) = uvs[i];
    mesh.uv_faces.resize(static_cast<Eigen::Index>(uv_faces.size()), 3);
    for (std::size_t f = 0; f < uv_faces.size(); ++f) {
      for (int c = 0; c < 3; ++c) mesh.uv_faces(static_cast<Eigen::Index>(f), c) = uv_faces[f][c];
    }
  }
  if (info) info->fanned_polygons = fanned;
  try {
    mesh.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, std::string("invalid mesh: ") + e.what());
  }
  return mesh;
}

TriMesh read_obj(const std::string& path, const ObjReadOptions& options, ObjReadInfo* info) {
  auto in = open_in(path);
  try {
    return parse_obj(in, options, info);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void write_obj(std::ostream& out, const TriMesh& mesh) {
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) {
    out << "v " << format_double(mesh.vertices(v, 0)) << ' ' << format_double(mesh.vertices(v, 1)) << ' '
        << format_double(mesh.vertices(v, 2)) << '\n';
  }
  const bool uv = mesh.has_uvs();
  if (uv) {
    for (Eigen::Index t = 0; t < mesh.uv_coords.rows(); ++t) {
      out << "vt " << format_double(mesh.uv_coords(t, 0)) << ' ' << format_double(mesh.uv_coords(t, 1)) << '\n';
    }
  }
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
    out << 'f';
    for (int c = 0; c < 3; ++c) {
      out << ' ' << mesh.faces(f, c) + 1;
      if (uv) out << '/' << mesh.uv_faces(f, c) + 1;
    }
    out << '\n';
  }
}

void write_obj(const std::string& path, const TriMesh& mesh) {
  auto out = open_out(path);
  write_obj(out, mesh);
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

// ---------------------------------------------------------------------------
// Model container

namespace {

struct TensorSlot {
  const char* name;
  RowMatrix* matrix;
  std::vector<std::int64_t> shape;
};

template <typename T>
void append_le(std::vector<unsigned char>& blob, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  blob.insert(blob.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T read_le(const unsigned char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + "]";
}

template <typename T>
T manifest_get(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::ManifestError, std::string("manifest is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestError, std::string("manifest field '") + key + "': " + e.what());
  }
}

template <typename Matrix>
json rows_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Matrix>
Matrix rows_from_json(const json& j, Eigen::Index cols, const std::string& what, ErrorCode code) {
  if (!j.is_array()) throw Error(code, what + " must be an array of rows");
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(code, what + " row " + std::to_string(r) + " must have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      try {
        m(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)].get<typename Matrix::Scalar>();
      } catch (const json::exception&) {
        throw Error(code, what + " row " + std::to_string(r) + " has a non-numeric entry");
      }
    }
  }
  return m;
}

}  // namespace

void write_model(const std::string& manifest_path, const ParametricModel& model) {
  model.validate();
  const fs::path manifest(manifest_path);
  fs::path blob_path = manifest;
  blob_path.replace_extension(".bin");

  const int n = model.num_vertices();
  const int k = model.num_joints();
  const bool f64 = model.storage_dtype == TensorDtype::F64;
  std::vector<unsigned char> blob;
  json tensors = json::object();
  auto put = [&](const char* name, const RowMatrix& m, std::vector<std::int64_t> shape) {
    const std::size_t offset = blob.size();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (f64) {
          append_le<double>(blob, m(r, c));
        } else {
          append_le<float>(blob, static_cast<float>(m(r, c)));
        }
      }
    }
    tensors[name] = {{"dtype", f64 ? "f64" : "f32"},
                     {"shape", shape},
                     {"byte_offset", offset},
                     {"byte_length", blob.size() - offset}};
  };
  put("template", model.template_vertices, {n, 3});
  put("shape_dirs", model.shape_dirs, {n, 3, model.shape_dim()});
  put("expr_dirs", model.expr_dirs, {n, 3, model.expr_dim()});
  put("pose_dirs", model.pose_dirs, {n, 3, model.pose_feature_dim()});
  put("joint_regressor", model.joint_regressor, {k, n});
  put("skin_weights", model.skin_weights, {n, k});

  json j;
  j["format"] = "avatarfit-model";
  j["version"] = 1;
  j["name"] = model.name;
  j["num_vertices"] = n;
  j["num_joints"] = k;
  j["shape_dim"] = model.shape_dim();
  j["expr_dim"] = model.expr_dim();
  j["parents"] = model.parents;
  j["joint_names"] = model.joint_names;
  j["faces"] = rows_to_json(model.faces);
  if (model.uv_coords.rows() > 0) {
    j["uv_coords"] = rows_to_json(model.uv_coords);
    j["uv_faces"] = rows_to_json(model.uv_faces);
  }
  j["blob"] = blob_path.filename().string();
  j["tensors"] = std::move(tensors);

  auto out = open_out(blob_path.string(), std::ios::binary);
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + blob_path.string());
  write_json(manifest_path, j);
}

ParametricModel read_model(const std::string& manifest_path) {
  json j;
  {
    auto in = open_in(manifest_path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ManifestError, manifest_path + ": " + e.what());
    }
  }
  if (!j.is_object()) throw Error(ErrorCode::ManifestError, "manifest must be a JSON object");

  ParametricModel model;
  model.name = j.value("name", std::string("model"));
  const auto n = manifest_get<std::int64_t>(j, "num_vertices");
  const auto k = manifest_get<std::int64_t>(j, "num_joints");
  const auto shape_dim = manifest_get<std::int64_t>(j, "shape_dim");
  const auto expr_dim = manifest_get<std::int64_t>(j, "expr_dim");
  if (n < 0 || k < 1 || shape_dim < 0 || expr_dim < 0) throw Error(ErrorCode::ManifestError, "negative dimension");
  model.parents = manifest_get<std::vector<int>>(j, "parents");
  if (static_cast<std::int64_t>(model.parents.size()) != k) {
    throw Error(ErrorCode::ShapeMismatch, "parents has " + std::to_string(model.parents.size()) + " entries, expected " +
                                              std::to_string(k));
  }
  if (j.contains("joint_names")) model.joint_names = manifest_get<std::vector<std::string>>(j, "joint_names");
  model.faces = rows_from_json<Faces>(manifest_get<json>(j, "faces"), 3, "faces", ErrorCode::ManifestError);
  if (j.contains("uv_coords") != j.contains("uv_faces")) {
    throw Error(ErrorCode::ManifestError, "uv_coords and uv_faces must appear together");
  }
  if (j.contains("uv_coords")) {
    model.uv_coords = rows_from_json<Points2>(j["uv_coords"], 2, "uv_coords", ErrorCode::ManifestError);
    model.uv_faces = rows_from_json<Faces>(j["uv_faces"], 3, "uv_faces", ErrorCode::ManifestError);
  }

  const fs::path blob_path = fs::path(manifest_path).parent_path() / manifest_get<std::string>(j, "blob");
  std::vector<unsigned char> blob;
  {
    auto in = open_in(blob_path.string(), std::ios::binary);
    blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  const json tensors = manifest_get<json>(j, "tensors");
  if (!tensors.is_object()) throw Error(ErrorCode::ManifestError, "'tensors' must be an object");
  const std::int64_t pose_dim = 9 * (k - 1);
  RowMatrix template_vertices;
  std::vector<TensorSlot> slots{
      {"template", &template_vertices, {n, 3}},
      {"shape_dirs", &model.shape_dirs, {n, 3, shape_dim}},
      {"expr_dirs", &model.expr_dirs, {n, 3, expr_dim}},
      {"pose_dirs", &model.pose_dirs, {n, 3, pose_dim}},
      {"joint_regressor", &model.joint_regressor, {k, n}},
      {"skin_weights", &model.skin_weights, {n, k}},
  };
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  bool any_f64 = false;
  for (auto& slot : slots) {
    if (!tensors.contains(slot.name)) {
      throw Error(ErrorCode::ManifestError, std::string("required tensor '") + slot.name + "' is missing");
    }
    const json& t = tensors[slot.name];
    const auto dtype = manifest_get<std::string>(t, "dtype");
    if (dtype != "f32" && dtype != "f64") {
      throw Error(ErrorCode::ManifestError, std::string("tensor '") + slot.name + "' has unsupported dtype " + dtype);
    }
    const auto shape = manifest_get<std::vector<std::int64_t>>(t, "shape");
    if (shape != slot.shape) {
      throw Error(ErrorCode::ShapeMismatch, std::string("tensor '") + slot.name + "' has shape " + shape_string(shape) +
                                                ", expected " + shape_string(slot.shape));
    }
    const auto offset = manifest_get<std::uint64_t>(t, "byte_offset");
    const auto length = manifest_get<std::uint64_t>(t, "byte_length");
    const std::size_t elem = dtype == "f64" ? 8 : 4;
    std::uint64_t count = 1;
    for (auto d : shape) count *= static_cast<std::uint64_t>(d);
    if (length != count * elem) {
      throw Error(ErrorCode::ShapeMismatch, std::string("tensor '") + slot.name + "' byte_length " +
                                                std::to_string(length) + " does not match shape " +
                                                shape_string(shape));
    }
    if (offset > blob.size() || length > blob.size() - offset) {
      throw Error(ErrorCode::BlobTruncated, std::string("tensor '") + slot.name + "' extends past the end of the blob (" +
                                                std::to_string(blob.size()) + " bytes)");
    }
    ranges.emplace_back(offset, offset + length);
    any_f64 = any_f64 || dtype == "f64";

    const Eigen::Index rows = shape[0];
    const Eigen::Index cols = static_cast<Eigen::Index>(rows == 0 ? 0 : count / static_cast<std::uint64_t>(rows));
    slot.matrix->resize(rows, cols);
    const unsigned char* p = blob.data() + offset;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c, p += elem) {
        (*slot.matrix)(r, c) = elem == 8 ? read_le<double>(p) : static_cast<double>(read_le<float>(p));
      }
    }
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) throw Error(ErrorCode::ManifestError, "tensor byte ranges overlap");
  }
  model.template_vertices = template_vertices;
  model.storage_dtype = any_f64 ? TensorDtype::F64 : TensorDtype::F32;
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// JSON

json read_json(const std::string& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

std::string dump(const json& value) { return value.dump(2) + "\n"; }

void write_json(const std::string& path, const json& value) {
  auto out = open_out(path);
  out << dump(value);
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

namespace {

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::ParseError, where + ": missing '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, where + ": field '" + key + "': " + e.what());
  }
}

Mat3 mat3_from_json(const json& j, const std::string& where) {
  const auto rows = rows_from_json<RowMatrix>(j, 3, where, ErrorCode::ParseError);
  if (rows.rows() != 3) throw Error(ErrorCode::ParseError, where + " must be 3×3");
  return rows;
}

json vec_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

CameraSet cameras_from_json(const json& j) {
  CameraSet set;
  const auto cams = get_field<json>(j, "cameras", "calibration");
  if (!cams.is_array()) throw Error(ErrorCode::ParseError, "calibration: 'cameras' must be an array");
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const json& c = cams[i];
    const std::string where = "camera " + std::to_string(i);
    Camera cam;
    cam.id = get_field<std::string>(c, "id", where);
    cam.K = mat3_from_json(get_field<json>(c, "K", where), where + " K");
    cam.R = mat3_from_json(get_field<json>(c, "R", where), where + " R");
    const auto t = get_field<std::vector<double>>(c, "t", where);
    if (t.size() != 3) throw Error(ErrorCode::ParseError, where + ": t must have 3 entries");
    cam.t = Vec3(t[0], t[1], t[2]);
    cam.width = get_field<int>(c, "width", where);
    cam.height = get_field<int>(c, "height", where);
    if (c.contains("dist") && !c["dist"].is_null()) {
      bool nonzero = false;
      if (c["dist"].is_array()) {
        for (const auto& d : c["dist"]) nonzero = nonzero || (d.is_number() && d.get<double>() != 0.0);
      } else {
        nonzero = true;
      }
      if (nonzero) throw Error(ErrorCode::UnsupportedFeature, where + ": lens distortion is not supported");
    }
    set.cameras.push_back(std::move(cam));
  }
  set.validate();
  return set;
}

json to_json(const CameraSet& cameras) {
  json cams = json::array();
  for (const auto& cam : cameras.cameras) {
    cams.push_back({{"id", cam.id},
                    {"K", rows_to_json(cam.K)},
                    {"R", rows_to_json(cam.R)},
                    {"t", vec_to_json(cam.t)},
                    {"width", cam.width},
                    {"height", cam.height},
                    {"dist", nullptr}});
  }
  return {{"convention", "x_cam = R x_world + t, P = K [R | t]"}, {"cameras", std::move(cams)}};
}

CameraSet read_cameras(const std::string& path) { return cameras_from_json(read_json(path)); }

Keypoints2D keypoints2d_from_json(const json& j, const CameraSet& cameras) {
  Keypoints2D kp;
  const auto frames = get_field<json>(j, "frames", "keypoints");
  if (!frames.is_array()) throw Error(ErrorCode::ParseError, "keypoints: 'frames' must be an array");
  long joints = -1;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string where = "keypoints frame " + std::to_string(i);
    Frame2D frame;
    frame.frame = get_field<int>(frames[i], "frame", where);
    frame.views.assign(cameras.cameras.size(), {});
    const auto views = get_field<json>(frames[i], "views", where);
    if (!views.is_object()) throw Error(ErrorCode::ParseError, where + ": 'views' must be an object");
    for (const auto& [id, list] : views.items()) {
      const int c = cameras.find(id);
      if (c < 0) throw Error(ErrorCode::InvalidArgument, where + ": unknown camera '" + id + "'");
      if (!list.is_array()) throw Error(ErrorCode::ParseError, where + ": view " + id + " must be an array");
      if (joints < 0) joints = static_cast<long>(list.size());
      if (static_cast<long>(list.size()) != joints) {
        throw Error(ErrorCode::DimensionMismatch, where + ": view " + id + " has " + std::to_string(list.size()) +
                                                      " joints, expected " + std::to_string(joints));
      }
      auto& out = frame.views[c];
      for (const auto& o : list) {
        if (o.is_null()) {
          out.push_back({0.0, 0.0, 0.0});
          continue;
        }
        if (!o.is_array() || o.size() != 3) throw Error(ErrorCode::ParseError, where + ": observations are [x, y, conf]");
        out.push_back({o[0].get<double>(), o[1].get<double>(), o[2].get<double>()});
      }
    }
    kp.frames.push_back(std::move(frame));
  }
  return kp;
}

json to_json(const Keypoints2D& keypoints, const CameraSet& cameras) {
  json frames = json::array();
  for (const auto& frame : keypoints.frames) {
    json views = json::object();
    for (std::size_t c = 0; c < frame.views.size(); ++c) {
      if (frame.views[c].empty()) continue;
      json list = json::array();
      for (const auto& o : frame.views[c]) list.push_back({o.x, o.y, o.confidence});
      views[cameras.cameras.at(c).id] = std::move(list);
    }
    frames.push_back({{"frame", frame.frame}, {"views", std::move(views)}});
  }
  return {{"frames", std::move(frames)}};
}

json to_json(const Keypoints3D& keypoints, const CameraSet& cameras) {
  json frames = json::array();
  for (const auto& frame : keypoints.frames) {
    json points = json::array();
    json inliers = json::array();
    json errors = json::array();
    for (const auto& joint : frame.joints) {
      if (!joint) {
        points.push_back(nullptr);
        inliers.push_back(nullptr);
        errors.push_back(nullptr);
        continue;
      }
      points.push_back(vec_to_json(joint->point));
      json ids = json::array();
      for (int c : joint->inliers) ids.push_back(cameras.cameras.at(c).id);
      inliers.push_back(std::move(ids));
      errors.push_back(joint->error_px);
    }
    json reprojections = json::object();
    for (std::size_t c = 0; c < frame.reprojections.size(); ++c) {
      json list = json::array();
      for (const auto& p : frame.reprojections[c]) list.push_back(p ? json{p->x(), p->y()} : json(nullptr));
      reprojections[cameras.cameras.at(c).id] = std::move(list);
    }
    frames.push_back({{"frame", frame.frame},
                      {"points", std::move(points)},
                      {"inliers", std::move(inliers)},
                      {"errors_px", std::move(errors)},
                      {"reprojections", std::move(reprojections)}});
  }
  return {{"frames", std::move(frames)}};
}

std::vector<FrameParams> params_from_json(const json& j, const ParametricModel& model) {
  std::vector<FrameParams> out;
  const auto frames = get_field<json>(j, "frames", "params");
  if (!frames.is_array()) throw Error(ErrorCode::ParseError, "params: 'frames' must be an array");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string where = "params frame " + std::to_string(i);
    const json& f = frames[i];
    FrameParams fp;
    fp.frame = f.is_object() && f.contains("frame") ? get_field<int>(f, "frame", where) : static_cast<int>(i);
    fp.params = BodyParams::zeros(model);
    const auto theta = get_field<json>(f, "theta", where);
    if (!theta.is_array() || static_cast<int>(theta.size()) != model.num_joints()) {
      throw Error(ErrorCode::DimensionMismatch, where + ": theta must have " + std::to_string(model.num_joints()) +
                                                    " rows of 3");
    }
    fp.params.theta = rows_from_json<Points>(theta, 3, where + " theta", ErrorCode::DimensionMismatch);
    auto read_vec = [&](const char* key, Eigen::VectorXd& v) {
      if (!f.contains(key) || f[key].is_null()) return;
      const auto values = get_field<std::vector<double>>(f, key, where);
      if (static_cast<Eigen::Index>(values.size()) != v.size()) {
        throw Error(ErrorCode::DimensionMismatch, where + ": '" + key + "' has " + std::to_string(values.size()) +
                                                      " entries, model expects " + std::to_string(v.size()));
      }
      v = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    };
    read_vec("beta", fp.params.beta);
    read_vec("psi", fp.params.psi);
    out.push_back(std::move(fp));
  }
  return out;
}

json to_json(const std::vector<FrameParams>& frames) {
  json arr = json::array();
  for (const auto& f : frames) {
    arr.push_back({{"frame", f.frame},
                   {"theta", rows_to_json(f.params.theta)},
                   {"beta", vec_to_json(f.params.beta)},
                   {"psi", vec_to_json(f.params.psi)}});
  }
  return {{"frames", std::move(arr)}};
}

BodyParams select_frame(const std::vector<FrameParams>& frames, int frame) {
  for (const auto& f : frames) {
    if (f.frame == frame) return f.params;
  }
  throw Error(ErrorCode::InvalidArgument, "params contain no frame " + std::to_string(frame));
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::ParseError, where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& target, const std::string& where) {
  if (j.contains(key)) target = get_field<T>(j, key, where);
}

}  // namespace

FitConfig fit_config_from_json(const json& j) {
  FitConfig c;
  reject_unknown(j, {"k", "alpha", "seed", "stage1", "stage2"}, "fit config");
  maybe(j, "k", c.k, "fit config");
  maybe(j, "alpha", c.alpha, "fit config");
  maybe(j, "seed", c.seed, "fit config");
  if (j.contains("stage1")) {
    const json& s = j["stage1"];
    const std::string w = "fit config stage1";
    reject_unknown(s,
                   {"max_gauss_newton_iters", "data_weight", "rigidity_weight", "smooth_weight",
                    "correspondence_max_dist", "normal_angle_max", "point_to_plane", "convergence_tol"},
                   w);
    maybe(s, "max_gauss_newton_iters", c.stage1.max_gauss_newton_iters, w);
    maybe(s, "data_weight", c.stage1.data_weight, w);
    maybe(s, "rigidity_weight", c.stage1.rigidity_weight, w);
    maybe(s, "smooth_weight", c.stage1.smooth_weight, w);
    maybe(s, "correspondence_max_dist", c.stage1.correspondence_max_dist, w);
    maybe(s, "normal_angle_max", c.stage1.normal_angle_max, w);
    maybe(s, "point_to_plane", c.stage1.point_to_plane, w);
    maybe(s, "convergence_tol", c.stage1.convergence_tol, w);
  }
  if (j.contains("stage2")) {
    const json& s = j["stage2"];
    const std::string w = "fit config stage2";
    reject_unknown(s, {"laplacian_weight", "correspondence_max_dist", "normal_angle_max"}, w);
    maybe(s, "laplacian_weight", c.stage2.laplacian_weight, w);
    maybe(s, "correspondence_max_dist", c.stage2.correspondence_max_dist, w);
    maybe(s, "normal_angle_max", c.stage2.normal_angle_max, w);
  }
  c.validate();
  return c;
}

json to_json(const FitConfig& c) {
  return {{"k", c.k},
          {"alpha", c.alpha},
          {"seed", c.seed},
          {"stage1",
           {{"max_gauss_newton_iters", c.stage1.max_gauss_newton_iters},
            {"data_weight", c.stage1.data_weight},
            {"rigidity_weight", c.stage1.rigidity_weight},
            {"smooth_weight", c.stage1.smooth_weight},
            {"correspondence_max_dist", c.stage1.correspondence_max_dist},
            {"normal_angle_max", c.stage1.normal_angle_max},
            {"point_to_plane", c.stage1.point_to_plane},
            {"convergence_tol", c.stage1.convergence_tol}}},
          {"stage2",
           {{"laplacian_weight", c.stage2.laplacian_weight},
            {"correspondence_max_dist", c.stage2.correspondence_max_dist},
            {"normal_angle_max", c.stage2.normal_angle_max}}}};
}

std::vector<TransferSpec> transfer_specs_from_json(const json& j) {
  auto one = [](const json& s, const std::string& where) {
    reject_unknown(s, {"delete_ids", "flatten_regions", "flatten_iterations", "flatten_step"}, where);
    TransferSpec spec;
    maybe(s, "delete_ids", spec.delete_ids, where);
    maybe(s, "flatten_regions", spec.flatten_regions, where);
    maybe(s, "flatten_iterations", spec.flatten_iterations, where);
    maybe(s, "flatten_step", spec.flatten_step, where);
    return spec;
  };
  std::vector<TransferSpec> rounds;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) rounds.push_back(one(j[i], "transfer round " + std::to_string(i)));
  } else if (j.is_object() && j.contains("rounds")) {
    return transfer_specs_from_json(j["rounds"]);
  } else {
    rounds.push_back(one(j, "transfer spec"));
  }
  return rounds;
}

json to_json(const TransferSpec& spec) {
  return {{"delete_ids", spec.delete_ids},
          {"flatten_regions", spec.flatten_regions},
          {"flatten_iterations", spec.flatten_iterations},
          {"flatten_step", spec.flatten_step}};
}

json to_json(const Stage1Report& r) {
  json its = json::array();
  for (const auto& it : r.iterations) {
    its.push_back({{"iteration", it.iteration},
                   {"energy_before", it.energy_before},
                   {"energy_after", it.energy_after},
                   {"correspondences", it.correspondences},
                   {"damped_retries", it.damped_retries}});
  }
  return {{"iterations", std::move(its)},
          {"final_energy", r.final_energy},
          {"max_rigidity_residual", r.max_rigidity_residual},
          {"num_nodes", r.num_nodes},
          {"num_smooth_edges", r.num_smooth_edges},
          {"uncovered_vertices", r.uncovered_vertices},
          {"converged", r.converged}};
}

json to_json(const Stage2Report& r) {
  return {{"correspondences", r.correspondences},
          {"unmatched", r.unmatched},
          {"relative_residual", r.relative_residual},
          {"data_residual", r.data_residual},
          {"laplacian_residual", r.laplacian_residual}};
}

json to_json(const DeformationGraph& g) {
  json nodes = json::array();
  for (int i = 0; i < g.num_nodes(); ++i) {
    nodes.push_back({{"vertex", g.node_vertex_ids[i]},
                     {"position", vec_to_json(g.node_positions.row(i).transpose())},
                     {"base_radius", g.base_radii[i]}});
  }
  json edges = json::array();
  for (const auto& [a, b] : g.smooth_edges) edges.push_back({a, b});
  json weights = json::array();
  for (const auto& row : g.vertex_weights) {
    json entries = json::array();
    for (const auto& w : row) entries.push_back({w.node, w.weight});
    weights.push_back(std::move(entries));
  }
  return {{"num_nodes", g.num_nodes()},
          {"nodes", std::move(nodes)},
          {"smooth_edges", std::move(edges)},
          {"uncovered_vertices", g.uncovered_vertices},
          {"vertex_weights", std::move(weights)}};
}

json to_json(const MetricReport& r) {
  json j = json::object();
  if (r.psnr || r.psnr_infinite) {
    j["psnr"] = r.psnr ? json(*r.psnr) : json(nullptr);
    j["psnr_infinite"] = r.psnr_infinite;
  }
  if (r.ssim) j["ssim"] = *r.ssim;
  if (r.cd_raw) {
    j["cd_raw"] = *r.cd_raw;
    j["cd_scaled"] = r.cd_scaled.value_or(*r.cd_raw * 1e3);
    j["samples"] = r.samples;
  }
  if (r.masked) j["mask_pixels"] = r.mask_pixels;
  j["masked"] = r.masked;
  return j;
}

// ---------------------------------------------------------------------------
// PNG

Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw Error(ErrorCode::IoError, path + ": " + png.message);
  }
  const bool colour = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  // 8-bit formats keep stored values as is (16-bit inputs are reduced).
  png.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(ErrorCode::IoError, path + ": " + png.message);
  }
  Image image(static_cast<int>(png.width), static_cast<int>(png.height), colour ? 3 : 1);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) image.pixels[i] = buffer[i] / 255.0;
  return image;
}

void write_png(const std::string& path, const Image& image) {
  image.validate();
  if (image.channels != 1 && image.channels != 3) {
    throw Error(ErrorCode::InvalidArgument, "PNG output needs 1 or 3 channels");
  }
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path + ": " + png.message);
  }
}

}  // namespace avatarfit::io
