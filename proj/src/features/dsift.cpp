#include <algorithm>
#include <cmath>
#include <numbers>

#include "pad/features.hpp"

namespace pad {

namespace {

constexpr int kOrientations = 8;
constexpr int kSpatial = 4;
constexpr int kSiftDim = kSpatial * kSpatial * kOrientations;

// Gradient magnitude split between the two nearest of 8 orientation bins.
std::vector<Eigen::MatrixXf> orientation_maps(const Raster& img) {
  const int w = img.width();
  const int h = img.height();
  Eigen::MatrixXf gray(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) gray(y, x) = static_cast<float>(gray_level(img.pixel(x, y)));
  std::vector<Eigen::MatrixXf> maps(kOrientations, Eigen::MatrixXf::Zero(h, w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float gx = 0.5f * (gray(y, std::min(x + 1, w - 1)) - gray(y, std::max(x - 1, 0)));
      const float gy = 0.5f * (gray(std::min(y + 1, h - 1), x) - gray(std::max(y - 1, 0), x));
      const float mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0f) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0) angle += 2.0 * std::numbers::pi;
      const double t = angle * kOrientations / (2.0 * std::numbers::pi);
      const int lo = static_cast<int>(std::floor(t)) % kOrientations;
      const float frac = static_cast<float>(t - std::floor(t));
      maps[lo](y, x) += (1.0f - frac) * mag;
      maps[(lo + 1) % kOrientations](y, x) += frac * mag;
    }
  return maps;
}

}  // namespace

LocalDescriptorSet dense_sift_descriptors(const Raster& crop, const DsiftOptions& options) {
  require(!crop.empty(), "empty image");
  require(options.stride >= 1, "stride must be positive");
  const int w = crop.width();
  const int h = crop.height();
  std::size_t total = 0;
  for (int s : options.patch_sizes) {
    require(s >= 8 && s % 8 == 0, "dense SIFT patch sizes must be multiples of 8");
    total += patch_grid_count(w, h, s, options.stride);
  }
  require(total > 0, "image smaller than every patch size");
  const auto maps = orientation_maps(crop);

  LocalDescriptorSet out;
  out.descriptors.resize(static_cast<Eigen::Index>(total), kSiftDim);
  out.image_width = w;
  out.image_height = h;
  Eigen::Index row = 0;
  for (int s : options.patch_sizes) {
    const int b = s / kSpatial;  // spatial bin width, even
    const int nx = (w - s) / options.stride + 1;
    const int ny = (h - s) / options.stride + 1;
    if (s > w || s > h) continue;
    // Bin centers sit at k - 0.5 with k = x0 + i*b + b/2. A pixel at x gets
    // weight 1 - |x - k + 0.5| / b, nonzero for x in [k - b, k + b - 1].
    std::vector<float> kernel(2 * b);
    for (int t = 0; t < 2 * b; ++t) kernel[t] = 1.0f - std::abs(t - b + 0.5f) / b;
    std::vector<int> centers_x, centers_y;
    for (int i = 0; i < nx; ++i)
      for (int k = 0; k < kSpatial; ++k) centers_x.push_back(i * options.stride + k * b + b / 2);
    for (int i = 0; i < ny; ++i)
      for (int k = 0; k < kSpatial; ++k) centers_y.push_back(i * options.stride + k * b + b / 2);
    std::sort(centers_x.begin(), centers_x.end());
    centers_x.erase(std::unique(centers_x.begin(), centers_x.end()), centers_x.end());
    std::sort(centers_y.begin(), centers_y.end());
    centers_y.erase(std::unique(centers_y.begin(), centers_y.end()), centers_y.end());
    std::vector<int> col_of(static_cast<std::size_t>(w) + b + 1, -1), row_of(static_cast<std::size_t>(h) + b + 1, -1);
    for (std::size_t i = 0; i < centers_x.size(); ++i) col_of[centers_x[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < centers_y.size(); ++i) row_of[centers_y[i]] = static_cast<int>(i);

    // pooled[o](cy, cx): triangular-weighted sum around (centers_y[cy], centers_x[cx]).
    std::vector<Eigen::MatrixXf> pooled;
    for (const auto& m : maps) {
      Eigen::MatrixXf horiz = Eigen::MatrixXf::Zero(h, static_cast<Eigen::Index>(centers_x.size()));
      for (std::size_t c = 0; c < centers_x.size(); ++c) {
        const int k = centers_x[c];
        for (int t = 0; t < 2 * b; ++t) {
          const int x = k - b + t;
          if (x < 0 || x >= w) continue;
          horiz.col(static_cast<Eigen::Index>(c)) += kernel[t] * m.col(x);
        }
      }
      Eigen::MatrixXf both = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(centers_y.size()), horiz.cols());
      for (std::size_t r = 0; r < centers_y.size(); ++r) {
        const int k = centers_y[r];
        for (int t = 0; t < 2 * b; ++t) {
          const int y = k - b + t;
          if (y < 0 || y >= h) continue;
          both.row(static_cast<Eigen::Index>(r)) += kernel[t] * horiz.row(y);
        }
      }
      pooled.push_back(std::move(both));
    }

    const double min_norm = options.min_contrast * s * s;
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const int x0 = ix * options.stride;
        const int y0 = iy * options.stride;
        Eigen::RowVectorXd d(kSiftDim);
        for (int by = 0; by < kSpatial; ++by)
          for (int bx = 0; bx < kSpatial; ++bx) {
            const int r = row_of[y0 + by * b + b / 2];
            const int c = col_of[x0 + bx * b + b / 2];
            for (int o = 0; o < kOrientations; ++o) d((by * kSpatial + bx) * kOrientations + o) = pooled[o](r, c);
          }
        const double n = d.norm();
        if (n <= min_norm || n < 1e-12) {
          d.setZero();
        } else {
          d /= n;
          d = d.cwiseMin(0.2);
          const double n2 = d.norm();
          if (n2 > 0) d /= n2;
        }
        out.descriptors.row(row) = d;
        out.positions.push_back({x0 + (s - 1) / 2.0, y0 + (s - 1) / 2.0});
        out.patch_sizes.push_back(s);
        ++row;
      }
  }
  return out;
}

}  // namespace pad
