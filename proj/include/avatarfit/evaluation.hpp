#pragma once

#include "avatarfit/mesh.hpp"
#include "avatarfit/triangulation.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace avatarfit {

/// Row-major image with values in [0, 1]. `channels` is 3 for colour images
/// and 1 for masks.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, int c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  void validate() const;
};

/// Symmetric mean of nearest distances between two point sets.
double chamfer_points(const Points& a, const Points& b);

struct ChamferDetail {
  double cd_raw = 0.0;
  double mean_a_to_b = 0.0;
  double mean_b_to_a = 0.0;
  int samples = 0;
};

/// ½ (mean dist of samples on a to surface b + mean dist of samples on b to
/// surface a), unsquared, with n area-uniform samples per mesh.
ChamferDetail chamfer_detail(const TriMesh& a, const TriMesh& b, int n_samples, std::uint64_t seed, int jobs = 1);
double chamfer_distance(const TriMesh& a, const TriMesh& b, int n_samples, std::uint64_t seed, int jobs = 1);

/// 10 log10(1 / MSE) with peak 1; +inf for identical inputs. The optional
/// mask is single-channel and selects pixels with value > 0.5.
double psnr(const Image& a, const Image& b, const Image* mask = nullptr);

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03,
/// range 1) per channel, averaged over channels. With a mask, only windows
/// whose centre lies in the mask contribute.
double ssim(const Image& a, const Image& b, const Image* mask = nullptr);

struct RenderResult {
  Image image;
  Image mask;  // single channel, 1 where a triangle covered the pixel centre
};

/// Unlit z-buffered rasterization at the camera's resolution with
/// perspective-correct UVs and bilinear texture lookup. Triangles with a
/// vertex at or behind the camera plane are skipped.
RenderResult render(const TriMesh& mesh, const Image& texture, const Camera& camera, int jobs = 1);

struct MetricReport {
  std::optional<double> psnr;  // nullopt encodes +inf
  bool psnr_infinite = false;
  std::optional<double> ssim;
  std::optional<double> cd_raw;
  std::optional<double> cd_scaled;  // cd_raw × 1e3
  int samples = 0;
  bool masked = false;
  int mask_pixels = 0;
};

}  // namespace avatarfit
