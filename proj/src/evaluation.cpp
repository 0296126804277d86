#include "avatarfit/evaluation.hpp"

#include "avatarfit/error.hpp"
#include "avatarfit/spatial.hpp"
#include "avatarfit/util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace avatarfit {

void Image::validate() const {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  if (channels != 1 && channels != 3) throw Error(ErrorCode::InvalidArgument, "image must have 1 or 3 channels");
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels) {
    throw Error(ErrorCode::InvalidArgument, "image pixel buffer has the wrong size");
  }
  for (double p : pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "image value outside [0, 1]");
  }
}

double chamfer_points(const Points& a, const Points& b) {
  const PointIndex ia(a);
  const PointIndex ib(b);
  double ab = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) ab += ib.nearest_distance(a.row(i).transpose());
  double ba = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i) ba += ia.nearest_distance(b.row(i).transpose());
  return 0.5 * (ab / static_cast<double>(a.rows()) + ba / static_cast<double>(b.rows()));
}

namespace {

double mean_distance_to_surface(const Points& samples, const SurfaceIndex& surface, int jobs) {
  std::vector<double> d(samples.rows());
  parallel_for(d.size(), jobs, [&](std::size_t i) {
    d[i] = surface.nearest(samples.row(static_cast<Eigen::Index>(i)).transpose()).distance;
  });
  double sum = 0.0;
  for (double x : d) sum += x;  // fixed order keeps the sum thread-count independent
  return sum / static_cast<double>(d.size());
}

}  // namespace

ChamferDetail chamfer_detail(const TriMesh& a, const TriMesh& b, int n_samples, std::uint64_t seed, int jobs) {
  if (a.num_faces() == 0 || b.num_faces() == 0) throw Error(ErrorCode::InvalidMesh, "chamfer needs non-empty meshes");
  const SurfaceSamples sa = sample_surface(a, n_samples, seed);
  const SurfaceSamples sb = sample_surface(b, n_samples, derive_seed(seed, 1));
  ChamferDetail out;
  out.samples = n_samples;
  out.mean_a_to_b = mean_distance_to_surface(sa.points, SurfaceIndex(b), jobs);
  out.mean_b_to_a = mean_distance_to_surface(sb.points, SurfaceIndex(a), jobs);
  out.cd_raw = 0.5 * (out.mean_a_to_b + out.mean_b_to_a);
  return out;
}

double chamfer_distance(const TriMesh& a, const TriMesh& b, int n_samples, std::uint64_t seed, int jobs) {
  return chamfer_detail(a, b, n_samples, seed, jobs).cd_raw;
}

namespace {

void check_pair(const Image& a, const Image& b, const Image* mask) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw Error(ErrorCode::DimensionMismatch, "images differ in size or channel count");
  }
  if (mask && (mask->width != a.width || mask->height != a.height)) {
    throw Error(ErrorCode::DimensionMismatch, "mask size differs from image size");
  }
}

bool selected(const Image* mask, int x, int y) { return !mask || mask->at(x, y, 0) > 0.5; }

// Separable "valid" Gaussian filter: output covers window centres only.
std::vector<double> gaussian_valid(const std::vector<double>& img, int w, int h, const std::vector<double>& kernel) {
  const int k = static_cast<int>(kernel.size());
  const int ow = w - k + 1;
  const int oh = h - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += kernel[i] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += kernel[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b, const Image* mask) {
  check_pair(a, b, mask);
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (!selected(mask, x, y)) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        sum += d * d;
      }
      count += a.channels;
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyMask, "mask selects no pixels");
  const double mse = sum / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b, const Image* mask) {
  check_pair(a, b, mask);
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  if (a.width < kWindow || a.height < kWindow) {
    throw Error(ErrorCode::InvalidArgument, "SSIM needs images of at least 11x11 pixels");
  }
  std::vector<double> kernel(kWindow);
  double ksum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    kernel[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const int w = a.width;
  const int h = a.height;
  const int ow = w - kWindow + 1;
  const int oh = h - kWindow + 1;
  const int half = kWindow / 2;
  double total = 0.0;
  std::size_t windows = 0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> pa(static_cast<std::size_t>(w) * h);
    std::vector<double> pb(pa.size());
    std::vector<double> paa(pa.size());
    std::vector<double> pbb(pa.size());
    std::vector<double> pab(pa.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        pa[i] = a.at(x, y, c);
        pb[i] = b.at(x, y, c);
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
      }
    }
    const auto mu_a = gaussian_valid(pa, w, h, kernel);
    const auto mu_b = gaussian_valid(pb, w, h, kernel);
    const auto e_aa = gaussian_valid(paa, w, h, kernel);
    const auto e_bb = gaussian_valid(pbb, w, h, kernel);
    const auto e_ab = gaussian_valid(pab, w, h, kernel);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        if (!selected(mask, x + half, y + half)) continue;
        const std::size_t i = static_cast<std::size_t>(y) * ow + x;
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
        total += num / den;
        ++windows;
      }
    }
  }
  if (windows == 0) throw Error(ErrorCode::EmptyMask, "mask selects no SSIM window centres");
  return total / static_cast<double>(windows);
}

namespace {

struct ScreenTriangle {
  int face;
  Vec2 p[3];
  double inv_z[3];
  int y_min;
  int y_max;
};

double edge(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

double sample_bilinear(const Image& tex, double u, double v, int c) {
  const double fx = std::clamp(u * tex.width - 0.5, 0.0, static_cast<double>(tex.width - 1));
  const double fy = std::clamp((1.0 - v) * tex.height - 0.5, 0.0, static_cast<double>(tex.height - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, tex.width - 1);
  const int y1 = std::min(y0 + 1, tex.height - 1);
  const double tx = fx - x0;
  const double ty = fy - y0;
  const int tc = tex.channels == 1 ? 0 : c;
  const double top = (1.0 - tx) * tex.at(x0, y0, tc) + tx * tex.at(x1, y0, tc);
  const double bottom = (1.0 - tx) * tex.at(x0, y1, tc) + tx * tex.at(x1, y1, tc);
  return (1.0 - ty) * top + ty * bottom;
}

}  // namespace

RenderResult render(const TriMesh& mesh, const Image& texture, const Camera& camera, int jobs) {
  if (!mesh.has_uvs()) throw Error(ErrorCode::MissingUVs, "render needs a mesh with texture coordinates");
  texture.validate();
  camera.validate();
  const int w = camera.width;
  const int h = camera.height;
  if (w <= 0 || h <= 0) throw Error(ErrorCode::InvalidArgument, "camera resolution must be positive");

  std::vector<ScreenTriangle> tris;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    ScreenTriangle t{};
    t.face = f;
    bool visible = true;
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -ymin;
    for (int c = 0; c < 3; ++c) {
      const Vec3 xc = camera.R * mesh.vertex(mesh.faces(f, c)) + camera.t;
      if (!(xc.z() > 1e-9)) {
        visible = false;
        break;
      }
      const Vec3 px = camera.K * xc;
      t.p[c] = px.head<2>() / px.z();
      t.inv_z[c] = 1.0 / xc.z();
      ymin = std::min(ymin, t.p[c].y());
      ymax = std::max(ymax, t.p[c].y());
    }
    if (!visible || edge(t.p[0], t.p[1], t.p[2]) == 0.0) continue;
    // Rows whose centres (y + 0.5) can fall inside the triangle.
    t.y_min = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
    t.y_max = std::min(h - 1, static_cast<int>(std::floor(ymax - 0.5)));
    if (t.y_min > t.y_max) continue;
    tris.push_back(t);
  }

  constexpr int kBand = 16;
  const int bands = (h + kBand - 1) / kBand;
  std::vector<std::vector<int>> band_tris(bands);
  for (std::size_t i = 0; i < tris.size(); ++i) {
    for (int b = tris[i].y_min / kBand; b <= tris[i].y_max / kBand; ++b) band_tris[b].push_back(static_cast<int>(i));
  }

  RenderResult out{Image(w, h, 3, 0.0), Image(w, h, 1, 0.0)};
  std::vector<double> depth(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
  parallel_for(static_cast<std::size_t>(bands), jobs, [&](std::size_t band) {
    const int row_begin = static_cast<int>(band) * kBand;
    const int row_end = std::min(h, row_begin + kBand);
    for (int ti : band_tris[band]) {
      const ScreenTriangle& t = tris[ti];
      const double area = edge(t.p[0], t.p[1], t.p[2]);
      double xmin = std::min({t.p[0].x(), t.p[1].x(), t.p[2].x()});
      double xmax = std::max({t.p[0].x(), t.p[1].x(), t.p[2].x()});
      const int x0 = std::max(0, static_cast<int>(std::ceil(xmin - 0.5)));
      const int x1 = std::min(w - 1, static_cast<int>(std::floor(xmax - 0.5)));
      for (int y = std::max(row_begin, t.y_min); y <= std::min(row_end - 1, t.y_max); ++y) {
        for (int x = x0; x <= x1; ++x) {
          const Vec2 p(x + 0.5, y + 0.5);
          const double l0 = edge(t.p[1], t.p[2], p) / area;
          const double l1 = edge(t.p[2], t.p[0], p) / area;
          const double l2 = edge(t.p[0], t.p[1], p) / area;
          if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
          const double inv_z = l0 * t.inv_z[0] + l1 * t.inv_z[1] + l2 * t.inv_z[2];
          const double z = 1.0 / inv_z;
          const std::size_t idx = static_cast<std::size_t>(y) * w + x;
          if (!(z < depth[idx])) continue;
          depth[idx] = z;
          // Perspective-correct barycentrics.
          const double b0 = l0 * t.inv_z[0] * z;
          const double b1 = l1 * t.inv_z[1] * z;
          const double b2 = l2 * t.inv_z[2] * z;
          const Vec2 uv = b0 * mesh.uv_coords.row(mesh.uv_faces(t.face, 0)).transpose() +
                          b1 * mesh.uv_coords.row(mesh.uv_faces(t.face, 1)).transpose() +
                          b2 * mesh.uv_coords.row(mesh.uv_faces(t.face, 2)).transpose();
          for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = sample_bilinear(texture, uv.x(), uv.y(), c);
          out.mask.at(x, y, 0) = 1.0;
        }
      }
    }
  });
  return out;
}

}  // namespace avatarfit
