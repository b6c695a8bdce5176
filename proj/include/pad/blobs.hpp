#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pad/core.hpp"

namespace pad {

inline constexpr double kDefaultGrowTau = 40.0;
inline constexpr double kMergeOverlapRatio = 0.35;
inline constexpr int kSeedsPerLane = 5;

struct Pixel {
  int x = 0;
  int y = 0;
  Rgb rgb{};
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// 4-connected pixel set of one lane. Pixels are kept sorted by (y, x).
struct Region {
  int lane = 0;
  std::vector<Pixel> pixels;
  RgbF mean_rgb{};
  Rect bbox;

  std::size_t size() const { return pixels.size(); }
  bool contains(int x, int y) const;
};

/// Sorts the pixels and computes mean and bounding box.
Region make_region(int lane, std::vector<Pixel> pixels);
std::size_t overlap(const Region& a, const Region& b);

struct ReactionBlob {
  int lane = 0;
  RgbF mean_rgb{};
  double max_diff = 0.0;
  std::size_t size = 0;
  Rect bbox;
};

struct Fingerprint {
  std::optional<int> drug;
  std::vector<RgbF> lane_colors;

  std::size_t lane_count() const { return lane_colors.size(); }
  std::vector<double> flattened() const;

  /// {"version":1,"lanes":[[r,g,b],...]} with three decimals per value.
  std::string to_json() const;
  static Fingerprint from_json(const std::string& text);
};

/// max(|R-G|, |G-B|, |B-R|).
double max_diff(const RgbF& rgb);

/// Centers of five equal-height bands of the lane. When swipe_line_y is
/// given the lane is clipped to the rows above it.
std::vector<Point2> seed_regions(const Raster& crop, const Rect& lane_rect, std::optional<int> swipe_line_y = {});

/// Breadth-first growth over 4-neighbors inside lane_rect; a pixel joins when
/// its RGB distance to the running region mean is at most tau.
Region grow_region(const Raster& crop, const Rect& lane_rect, Point2 seed, double tau, int lane = 0);

/// Merges pairs whose overlap exceeds 0.35 of the bigger region until no
/// such pair remains. Larger combined pairs are merged first.
std::vector<Region> merge_overlapping(std::vector<Region> regions);

/// Highest max_diff; ties go to the larger region, then the higher one.
ReactionBlob select_reaction_blob(const std::vector<Region>& regions);

struct LaneAnalysis {
  std::vector<Region> grown;
  std::vector<Region> merged;
  ReactionBlob blob;
};

LaneAnalysis analyze_lane(const Raster& crop, const CardLayout& layout, int lane, double tau = kDefaultGrowTau);

/// One mean color per active lane, in lane order. With include_timer false
/// the timer lane (if active) is left out.
Fingerprint extract_fingerprint(const Raster& crop, const CardLayout& layout, double tau = kDefaultGrowTau,
                                bool include_timer = true);

}  // namespace pad
