#include "avatarfit/triangulation.hpp"

#include "avatarfit/error.hpp"
#include "avatarfit/util.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace avatarfit {

Mat34 Camera::projection() const {
  Mat34 rt;
  rt.leftCols<3>() = R;
  rt.col(3) = t;
  return K * rt;
}

void Camera::validate() const {
  if (!(K(0, 0) > 0.0 && K(1, 1) > 0.0 && K(2, 2) > 0.0) || K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw Error(ErrorCode::InvalidArgument, "camera " + id + ": K must be upper triangular with positive diagonal");
  }
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || R.determinant() <= 0.0) {
    throw Error(ErrorCode::InvalidArgument, "camera " + id + ": R is not a rotation");
  }
}

int CameraSet::find(const std::string& id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    if (cameras[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

void CameraSet::validate() const {
  std::set<std::string> ids;
  for (const auto& cam : cameras) {
    cam.validate();
    if (!ids.insert(cam.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate camera id " + cam.id);
  }
}

void RansacParams::validate() const {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "RANSAC confidence must lie in (0, 1)");
  if (v < 2) throw Error(ErrorCode::InvalidArgument, "RANSAC needs at least 2 sample views");
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "reprojection threshold must be positive");
}

ProjectedPoint project_with_depth(const Mat34& P, const Vec3& X) {
  const Vec3 h = P * X.homogeneous();
  return {h.head<2>() / h.z(), h.z()};
}

Vec2 project(const Mat34& P, const Vec3& X) {
  const ProjectedPoint p = project_with_depth(P, X);
  if (!(p.depth > 0.0)) throw Error(ErrorCode::BehindCamera, "point projects behind the camera");
  return p.pixel;
}

Vec3 triangulate_dlt(const std::vector<ViewObservation>& observations) {
  const auto n = static_cast<Eigen::Index>(observations.size());
  if (n < 2) throw Error(ErrorCode::DegenerateGeometry, "triangulation needs at least two views");
  Eigen::MatrixXd a(2 * n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = observations[i];
    a.row(2 * i) = o.pixel.x() * o.P.row(2) - o.P.row(0);
    a.row(2 * i + 1) = o.pixel.y() * o.P.row(2) - o.P.row(1);
  }
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double norm = a.row(r).norm();
    if (norm > 0.0) a.row(r) /= norm;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd s = svd.singularValues();
  if (s.size() < 4 || s(2) <= 1e-12 * s(0) || s(3) > 0.99 * s(2)) {
    throw Error(ErrorCode::DegenerateGeometry, "ambiguous triangulation");
  }
  const Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x(3)) <= 1e-14 * x.head<3>().norm()) {
    throw Error(ErrorCode::DegenerateGeometry, "triangulated point at infinity");
  }
  return x.head<3>() / x(3);
}

long adaptive_iterations(double p, double inlier_ratio, int v) {
  if (inlier_ratio >= 1.0) return 1;
  // log1p keeps precision when r^v is tiny.
  const double denom = std::log1p(-std::pow(inlier_ratio, v));
  if (denom == 0.0) return std::numeric_limits<long>::max();
  return static_cast<long>(std::ceil(std::log1p(-p) / denom));
}

namespace {

struct Reprojection {
  std::vector<double> distance;  // +inf when behind the camera
};

Reprojection reproject(const Vec3& x, const std::vector<int>& views, const std::vector<Mat34>& projections,
                       const std::vector<std::optional<Observation2D>>& obs) {
  Reprojection r;
  r.distance.reserve(views.size());
  for (int c : views) {
    const ProjectedPoint p = project_with_depth(projections[c], x);
    if (!(p.depth > 0.0)) {
      r.distance.push_back(std::numeric_limits<double>::infinity());
    } else {
      r.distance.push_back((p.pixel - Vec2(obs[c]->x, obs[c]->y)).norm());
    }
  }
  return r;
}

std::vector<ViewObservation> gather(const std::vector<int>& views, const std::vector<Mat34>& projections,
                                    const std::vector<std::optional<Observation2D>>& obs) {
  std::vector<ViewObservation> out;
  out.reserve(views.size());
  for (int c : views) out.push_back({projections[c], Vec2(obs[c]->x, obs[c]->y)});
  return out;
}

}  // namespace

RansacResult ransac_triangulate_joint(const std::vector<std::optional<Observation2D>>& obs, const CameraSet& cameras,
                                      const RansacParams& params) {
  params.validate();
  if (obs.size() != cameras.cameras.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one observation slot per camera required");
  }
  std::vector<int> confident;
  for (std::size_t c = 0; c < obs.size(); ++c) {
    if (obs[c] && obs[c]->confidence >= params.conf_min) confident.push_back(static_cast<int>(c));
  }
  if (static_cast<int>(confident.size()) < params.v) {
    throw Error(ErrorCode::InsufficientViews, std::to_string(confident.size()) + " confident views, need " +
                                                  std::to_string(params.v));
  }
  std::vector<Mat34> projections;
  projections.reserve(cameras.cameras.size());
  for (const auto& cam : cameras.cameras) projections.push_back(cam.projection());

  Rng rng(params.seed);
  const double total = static_cast<double>(confident.size());
  long max_iters = params.max_iters_init;
  double best_error = params.min_error_init;
  std::optional<RansacResult> best;
  std::vector<int> pool = confident;
  long i = 0;
  for (; i <= max_iters; ++i) {
    // Partial Fisher-Yates: the first v entries become the sample.
    for (int s = 0; s < params.v; ++s) {
      const std::size_t pick = s + rng.index(pool.size() - s);
      std::swap(pool[s], pool[pick]);
    }
    std::vector<int> sample(pool.begin(), pool.begin() + params.v);
    std::sort(sample.begin(), sample.end());

    Vec3 x;
    try {
      x = triangulate_dlt(gather(sample, projections, obs));
    } catch (const Error&) {
      continue;
    }
    const Reprojection r = reproject(x, confident, projections, obs);
    std::vector<int> inliers;
    for (std::size_t k = 0; k < confident.size(); ++k) {
      if (r.distance[k] < params.tau) inliers.push_back(confident[k]);
    }
    if (inliers.size() <= 3) continue;

    try {
      x = triangulate_dlt(gather(inliers, projections, obs));
    } catch (const Error&) {
      continue;
    }
    const Reprojection ri = reproject(x, inliers, projections, obs);
    double mean = 0.0;
    for (double d : ri.distance) mean += d;
    mean /= static_cast<double>(inliers.size());
    // The reported mean error over reported inliers stays below tau.
    if (mean < best_error && mean < params.tau) {
      best_error = mean;
      max_iters = adaptive_iterations(params.p, static_cast<double>(inliers.size()) / total, params.v);
      best = RansacResult{x, inliers, mean, 0};
    }
  }
  if (!best) throw Error(ErrorCode::NoConsensus, "no sample reached more than 3 inliers");
  best->iterations = i;
  return *best;
}

Keypoints3D triangulate_sequence(const Keypoints2D& keypoints, const CameraSet& cameras, const RansacParams& params,
                                 int jobs) {
  params.validate();
  const std::size_t ncam = cameras.cameras.size();
  std::vector<Mat34> projections;
  for (const auto& cam : cameras.cameras) projections.push_back(cam.projection());

  Keypoints3D out;
  out.frames.resize(keypoints.frames.size());
  std::vector<std::pair<std::size_t, std::size_t>> work;
  for (std::size_t f = 0; f < keypoints.frames.size(); ++f) {
    const Frame2D& frame = keypoints.frames[f];
    if (frame.views.size() != ncam) {
      throw Error(ErrorCode::DimensionMismatch, "frame " + std::to_string(frame.frame) + " has " +
                                                    std::to_string(frame.views.size()) + " views for " +
                                                    std::to_string(ncam) + " cameras");
    }
    std::size_t joints = 0;
    for (const auto& view : frame.views) {
      if (view.empty()) continue;
      if (joints != 0 && view.size() != joints) {
        throw Error(ErrorCode::DimensionMismatch, "inconsistent joint count in frame " + std::to_string(frame.frame));
      }
      joints = view.size();
    }
    out.frames[f].frame = frame.frame;
    out.frames[f].joints.assign(joints, std::nullopt);
    out.frames[f].reprojections.assign(ncam, std::vector<std::optional<Vec2>>(joints));
    for (std::size_t j = 0; j < joints; ++j) work.emplace_back(f, j);
  }

  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const auto [f, j] = work[w];
    const Frame2D& frame = keypoints.frames[f];
    std::vector<std::optional<Observation2D>> obs(ncam);
    for (std::size_t c = 0; c < ncam; ++c) {
      if (!frame.views[c].empty()) obs[c] = frame.views[c][j];
    }
    RansacParams local = params;
    local.seed = derive_seed(params.seed, static_cast<std::uint64_t>(frame.frame), j);
    try {
      const RansacResult r = ransac_triangulate_joint(obs, cameras, local);
      out.frames[f].joints[j] = Joint3D{r.point, r.inliers, r.error_px};
      for (std::size_t c = 0; c < ncam; ++c) {
        const ProjectedPoint p = project_with_depth(projections[c], r.point);
        if (p.depth > 0.0) out.frames[f].reprojections[c][j] = p.pixel;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientViews && e.code() != ErrorCode::NoConsensus) throw;
    }
  });
  return out;
}

}  // namespace avatarfit
