#include "pad/core.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace pad {

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Raster::Raster(int width, int height, Rgb fill) : width_(width), height_(height) {
  require(width >= 1 && height >= 1, "raster dimensions must be positive");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill[0];
    data_[i + 1] = fill[1];
    data_[i + 2] = fill[2];
  }
}

Raster Raster::from_pixels(int width, int height, std::vector<std::uint8_t> data) {
  require(width >= 1 && height >= 1, "raster dimensions must be positive");
  require(data.size() == static_cast<std::size_t>(width) * height * 3, "raster data length must be width*height*3");
  Raster out;
  out.width_ = width;
  out.height_ = height;
  out.data_ = std::move(data);
  return out;
}

Raster Raster::sub(const Rect& r) const {
  require(!r.empty() && Rect{0, 0, width_, height_}.contains(r), "sub-rectangle outside raster");
  Raster out(r.w, r.h);
  for (int y = 0; y < r.h; ++y) {
    std::copy_n(row(r.y + y) + static_cast<std::size_t>(r.x) * 3, static_cast<std::size_t>(r.w) * 3, out.row(y));
  }
  return out;
}

void Raster::paste(const Raster& src, int x, int y) {
  require(Rect{0, 0, width_, height_}.contains(Rect{x, y, src.width(), src.height()}), "paste outside raster");
  for (int yy = 0; yy < src.height(); ++yy) {
    std::copy_n(src.row(yy), static_cast<std::size_t>(src.width()) * 3, row(y + yy) + static_cast<std::size_t>(x) * 3);
  }
}

std::optional<RgbF> sample_bilinear(const Raster& img, double x, double y) {
  const int w = img.width();
  const int h = img.height();
  if (!(x >= -0.5 && y >= -0.5 && x <= w - 0.5 && y <= h - 0.5)) return std::nullopt;
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const std::uint8_t* r0 = img.row(y0);
  const std::uint8_t* r1 = img.row(y1);
  RgbF out{};
  for (int c = 0; c < 3; ++c) {
    const double top = r0[x0 * 3 + c] * (1.0 - fx) + r0[x1 * 3 + c] * fx;
    const double bot = r1[x0 * 3 + c] * (1.0 - fx) + r1[x1 * 3 + c] * fx;
    out[c] = top * (1.0 - fy) + bot * fy;
  }
  return out;
}

Rgb to_rgb8(const RgbF& c) {
  Rgb out{};
  // Round half away from zero after clamping; cheaper than lround.
  for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::clamp(c[i], 0.0, 255.0) + 0.5);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Slot pitch 53 px across the 636 px crop: 51 px lanes, 2 px wax gutters.
constexpr int kSlotPitch = 53;
constexpr int kLaneWidth = 51;
constexpr int kLaneTop = 12;
constexpr int kSwipeLineY = 450;
constexpr Rect kCropWindow{47, 330, kCropWidth, kCropHeight};

}  // namespace

std::optional<int> CardLayout::timer_lane() const {
  for (std::size_t i = 0; i < active_slots.size(); ++i) {
    if (active_slots[i] == timer_slot) return static_cast<int>(i);
  }
  return std::nullopt;
}

CardLayout canonical_layout(int lane_count) {
  if (lane_count != 9 && lane_count != 12) {
    fail(ErrorCode::InvalidArgument, "lane_count must be 9 or 12, got " + std::to_string(lane_count));
  }
  CardLayout layout;
  layout.crop_window = kCropWindow;
  layout.lane_count = lane_count;
  layout.swipe_line_y = kSwipeLineY;
  for (int s = 0; s < kLaneSlots; ++s) {
    layout.slot_rects.push_back({s * kSlotPitch + 1, kLaneTop, kLaneWidth, kSwipeLineY - kLaneTop});
  }
  if (lane_count == 12) {
    for (int s = 0; s < kLaneSlots; ++s) layout.active_slots.push_back(s);
    layout.timer_slot = 0;
  } else {
    // Three groups of three with a spacer slot between groups; the last slot holds the timer.
    layout.active_slots = {0, 1, 2, 4, 5, 6, 8, 9, 10};
    layout.timer_slot = 11;
  }
  for (int s : layout.active_slots) layout.lane_rects.push_back(layout.slot_rects[s]);

  layout.finder_centers = {Point2{60, 60}, Point2{669, 60}, Point2{60, 1159}};
  layout.corner_marks = {Point2{365, 60}, Point2{365, 1159}, Point2{669, 1159}};
  layout.wax_fiducials = {Point2{120, 295}, Point2{610, 295}};
  return layout;
}

// ---------------------------------------------------------------------------

namespace {

double srgb_to_linear(double v) {
  v /= 255.0;
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
  v = v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
  return v * 255.0;
}

constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;
constexpr double kDelta = 6.0 / 29.0;

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) { return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0); }

}  // namespace

LabColor rgb_to_lab(double r, double g, double b) {
  const double rl = srgb_to_linear(r);
  const double gl = srgb_to_linear(g);
  const double bl = srgb_to_linear(b);
  const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  const double fx = lab_f(x / kXn);
  const double fy = lab_f(y / kYn);
  const double fz = lab_f(z / kZn);
  LabColor lab{116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
  lab.L = std::clamp(lab.L, 0.0, 100.0);
  return lab;
}

Rgb lab_to_rgb(const LabColor& lab) {
  const double fy = (lab.L + 16.0) / 116.0;
  const double fx = fy + lab.a / 500.0;
  const double fz = fy - lab.b / 200.0;
  const double x = kXn * lab_f_inv(fx);
  const double y = kYn * lab_f_inv(fy);
  const double z = kZn * lab_f_inv(fz);
  const double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
  const double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
  const double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
  return to_rgb8({linear_to_srgb(std::max(rl, 0.0)), linear_to_srgb(std::max(gl, 0.0)),
                  linear_to_srgb(std::max(bl, 0.0))});
}

// ---------------------------------------------------------------------------

Digest& Digest::update(std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes) {
    state_ ^= b;
    state_ *= 1099511628211ULL;
  }
  return *this;
}

Digest& Digest::update(std::string_view s) {
  return update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

Digest& Digest::update(std::uint64_t v) {
  std::array<std::uint8_t, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return update(bytes);
}

Digest& Digest::update(double v) { return update(std::bit_cast<std::uint64_t>(v)); }

std::string Digest::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

int default_jobs() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
  if (jobs <= 0) jobs = default_jobs();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace pad
