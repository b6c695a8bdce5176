#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "pad/features.hpp"

namespace pad {

const std::array<Rgb, kColorNames>& color_name_prototypes() {
  static const std::array<Rgb, kColorNames> protos{{
      {0, 0, 0},        // black
      {0, 0, 255},      // blue
      {139, 69, 19},    // brown
      {128, 128, 128},  // grey
      {0, 128, 0},      // green
      {255, 165, 0},    // orange
      {255, 192, 203},  // pink
      {128, 0, 128},    // purple
      {255, 0, 0},      // red
      {255, 255, 255},  // white
      {255, 255, 0},    // yellow
  }};
  return protos;
}

std::string_view to_string(ColorName name) {
  static constexpr std::array<std::string_view, kColorNames> names{"black", "blue",   "brown", "grey",  "green", "orange",
                                                                   "pink",  "purple", "red",   "white", "yellow"};
  return names[static_cast<std::size_t>(name)];
}

namespace {

const std::array<LabColor, kColorNames>& prototype_lab() {
  static const std::array<LabColor, kColorNames> lab = [] {
    std::array<LabColor, kColorNames> out{};
    for (int i = 0; i < kColorNames; ++i) out[i] = rgb_to_lab(color_name_prototypes()[i]);
    return out;
  }();
  return lab;
}

ColorName nearest(const LabColor& c) {
  const auto& protos = prototype_lab();
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kColorNames; ++i) {
    const double d = (c.L - protos[i].L) * (c.L - protos[i].L) + (c.a - protos[i].a) * (c.a - protos[i].a) +
                     (c.b - protos[i].b) * (c.b - protos[i].b);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return static_cast<ColorName>(best);
}

}  // namespace

ColorName nearest_color_name(Rgb rgb) { return nearest(rgb_to_lab(rgb)); }

NameMap color_name_map(const Raster& crop) {
  NameMap map{crop.width(), crop.height(), std::vector<std::uint8_t>(static_cast<std::size_t>(crop.width()) * crop.height())};
  for (int y = 0; y < crop.height(); ++y) {
    const std::uint8_t* row = crop.row(y);
    for (int x = 0; x < crop.width(); ++x) {
      map.names[static_cast<std::size_t>(y) * crop.width() + x] =
          static_cast<std::uint8_t>(nearest(rgb_to_lab(row[3 * x], row[3 * x + 1], row[3 * x + 2])));
    }
  }
  return map;
}

std::size_t patch_grid_count(int width, int height, int size, int stride) {
  if (size > width || size > height) return 0;
  return static_cast<std::size_t>((width - size) / stride + 1) * static_cast<std::size_t>((height - size) / stride + 1);
}

LocalDescriptorSet extract_patch_histograms(const NameMap& names, const std::vector<int>& sizes) {
  const int w = names.width;
  const int h = names.height;
  for (int s : sizes) {
    require(s >= 2 && s % 2 == 0, "patch sizes must be even");
    if (s > w || s > h) fail(ErrorCode::InvalidArgument, "patch larger than the image");
  }
  // Integral image per color name.
  const std::size_t stride_row = static_cast<std::size_t>(w) + 1;
  std::vector<std::int32_t> integral(kColorNames * stride_row * (h + 1), 0);
  auto at = [&](int n, int y, int x) -> std::int32_t& { return integral[(n * (h + 1) + y) * stride_row + x]; };
  for (int y = 0; y < h; ++y)
    for (int n = 0; n < kColorNames; ++n) {
      std::int32_t run = 0;
      for (int x = 0; x < w; ++x) {
        run += names.names[static_cast<std::size_t>(y) * w + x] == n;
        at(n, y + 1, x + 1) = at(n, y, x + 1) + run;
      }
    }
  std::size_t total = 0;
  for (int s : sizes) total += patch_grid_count(w, h, s, s / 2);
  LocalDescriptorSet out;
  out.descriptors.resize(static_cast<Eigen::Index>(total), kColorNames);
  out.positions.reserve(total);
  out.patch_sizes.reserve(total);
  out.image_width = w;
  out.image_height = h;
  Eigen::Index row = 0;
  for (int s : sizes) {
    const int step = s / 2;
    const double inv_area = 1.0 / (static_cast<double>(s) * s);
    for (int y0 = 0; y0 + s <= h; y0 += step)
      for (int x0 = 0; x0 + s <= w; x0 += step) {
        for (int n = 0; n < kColorNames; ++n) {
          const int count = at(n, y0 + s, x0 + s) - at(n, y0, x0 + s) - at(n, y0 + s, x0) + at(n, y0, x0);
          out.descriptors(row, n) = count * inv_area;
        }
        out.positions.push_back({x0 + (s - 1) / 2.0, y0 + (s - 1) / 2.0});
        out.patch_sizes.push_back(s);
        ++row;
      }
  }
  return out;
}

}  // namespace pad
