#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pad/error.hpp"

namespace pad {

using Rgb = std::array<std::uint8_t, 3>;
using RgbF = std::array<double, 3>;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point2, Point2) = default;
};

double distance(Point2 a, Point2 b);

/// Integer pixel rectangle, half-open: [x, x + w) x [y, y + h).
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  int right() const { return x + w; }
  int bottom() const { return y + h; }
  long long area() const { return static_cast<long long>(w) * h; }
  bool empty() const { return w <= 0 || h <= 0; }
  bool contains(int px, int py) const { return px >= x && px < right() && py >= y && py < bottom(); }
  bool contains(const Rect& r) const {
    return r.x >= x && r.y >= y && r.right() <= right() && r.bottom() <= bottom();
  }
  bool intersects(const Rect& r) const {
    return x < r.right() && r.x < right() && y < r.bottom() && r.y < bottom();
  }
  Rect translated(int dx, int dy) const { return {x + dx, y + dy, w, h}; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// 8-bit RGB image, row-major, interleaved.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, Rgb fill = {0, 0, 0});
  /// Wraps interleaved RGB bytes; data.size() must be width * height * 3.
  static Raster from_pixels(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0; }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  Rgb pixel(int x, int y) const {
    const std::uint8_t* p = &data_[index(x, y)];
    return {p[0], p[1], p[2]};
  }
  void set_pixel(int x, int y, Rgb c) {
    std::uint8_t* p = &data_[index(x, y)];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  const std::uint8_t* row(int y) const { return &data_[index(0, y)]; }
  std::uint8_t* row(int y) { return &data_[index(0, y)]; }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  /// Copy of the sub-rectangle r, which must lie inside the raster.
  Raster sub(const Rect& r) const;
  /// Pastes src with its top-left corner at (x, y); src must fit.
  void paste(const Raster& src, int x, int y);

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Bilinear sample at a continuous position in pixel-center coordinates.
/// Positions within half a pixel of the border are edge-clamped; anything
/// farther out returns nullopt.
std::optional<RgbF> sample_bilinear(const Raster& img, double x, double y);

Rgb to_rgb8(const RgbF& c);

// ---------------------------------------------------------------------------
// Card geometry
// ---------------------------------------------------------------------------

inline constexpr int kCanonicalWidth = 730;
inline constexpr int kCanonicalHeight = 1220;
inline constexpr int kCropWidth = 636;
inline constexpr int kCropHeight = 490;
inline constexpr int kLaneSlots = 12;

/// Canonical card artwork. Lane rectangles and the swipe line are expressed
/// in crop coordinates; every other position is in canonical card pixels.
struct CardLayout {
  int canonical_width = kCanonicalWidth;
  int canonical_height = kCanonicalHeight;
  Rect crop_window;
  int lane_count = 12;
  std::vector<Rect> lane_rects;  // active lanes only, left to right
  std::vector<Rect> slot_rects;  // all 12 printed slots
  std::vector<int> active_slots; // slot index for each active lane
  int timer_slot = 0;            // slot carrying the timer reagent
  int swipe_line_y = 0;          // first crop row of the swipe line

  std::array<Point2, 3> finder_centers{};  // top-left, top-right, bottom-left
  int finder_module = 9;
  std::array<Point2, 3> corner_marks{};    // top-center, bottom-center, bottom-right
  int corner_module = 5;

  std::array<Point2, 2> wax_fiducials{};
  int wax_mark_size = 21;
  int wax_template_size = 41;

  Rect canonical_rect() const { return {0, 0, canonical_width, canonical_height}; }
  /// Lane rectangle i in canonical coordinates.
  Rect lane_in_canonical(int lane) const { return lane_rects.at(lane).translated(crop_window.x, crop_window.y); }
  /// Index of the timer lane among the active lanes, if the timer is active.
  std::optional<int> timer_lane() const;
};

/// The fixed card layout for panel (12) or single-reagent (9) cards.
CardLayout canonical_layout(int lane_count);

// ---------------------------------------------------------------------------
// Color
// ---------------------------------------------------------------------------

struct LabColor {
  double L = 0.0;
  double a = 0.0;
  double b = 0.0;
};

/// sRGB (D65) to CIE L*a*b*.
LabColor rgb_to_lab(double r, double g, double b);
inline LabColor rgb_to_lab(Rgb c) { return rgb_to_lab(c[0], c[1], c[2]); }
/// Inverse of rgb_to_lab, clamped and rounded to 8 bits.
Rgb lab_to_rgb(const LabColor& lab);

/// Rec. 601 luma in [0, 1].
inline double gray_level(Rgb c) { return (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]) / 255.0; }

// ---------------------------------------------------------------------------
// Utilities
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a, used for cache keys and config digests.
class Digest {
 public:
  Digest& update(std::span<const std::uint8_t> bytes);
  Digest& update(std::string_view s);
  Digest& update(std::uint64_t v);
  Digest& update(double v);
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 14695981039346656037ULL;
};

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to per-index slots for the output to stay deterministic.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

/// Worker count used when a caller passes jobs <= 0.
int default_jobs();

}  // namespace pad
