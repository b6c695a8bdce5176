#include "pad/blobs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

#include <json.hpp>

namespace pad {

namespace {

bool pixel_less(const Pixel& a, const Pixel& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); }

Region region_from_sorted(int lane, std::vector<Pixel> pixels) {
  Region r;
  r.lane = lane;
  double sum[3] = {0, 0, 0};
  int x0 = pixels[0].x, x1 = pixels[0].x;
  for (const Pixel& p : pixels) {
    for (int c = 0; c < 3; ++c) sum[c] += p.rgb[c];
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
  }
  const double n = static_cast<double>(pixels.size());
  r.mean_rgb = {sum[0] / n, sum[1] / n, sum[2] / n};
  r.bbox = {x0, pixels.front().y, x1 - x0 + 1, pixels.back().y - pixels.front().y + 1};
  r.pixels = std::move(pixels);
  return r;
}

}  // namespace

bool Region::contains(int x, int y) const {
  return std::binary_search(pixels.begin(), pixels.end(), Pixel{x, y, {}}, pixel_less);
}

Region make_region(int lane, std::vector<Pixel> pixels) {
  require(!pixels.empty(), "a region needs at least one pixel");
  std::sort(pixels.begin(), pixels.end(), pixel_less);
  return region_from_sorted(lane, std::move(pixels));
}

std::size_t overlap(const Region& a, const Region& b) {
  if (!a.bbox.intersects(b.bbox)) return 0;
  std::size_t count = 0;
  auto i = a.pixels.begin();
  auto j = b.pixels.begin();
  while (i != a.pixels.end() && j != b.pixels.end()) {
    if (pixel_less(*i, *j)) ++i;
    else if (pixel_less(*j, *i)) ++j;
    else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

double max_diff(const RgbF& c) {
  return std::max({std::abs(c[0] - c[1]), std::abs(c[1] - c[2]), std::abs(c[2] - c[0])});
}

std::vector<double> Fingerprint::flattened() const {
  std::vector<double> out;
  out.reserve(3 * lane_colors.size());
  for (const RgbF& c : lane_colors) out.insert(out.end(), c.begin(), c.end());
  return out;
}

std::string Fingerprint::to_json() const {
  std::string s = "{\"version\":1,";
  if (drug) s += "\"drug\":" + std::to_string(*drug) + ",";
  s += "\"lanes\":[";
  char buf[96];
  for (std::size_t i = 0; i < lane_colors.size(); ++i) {
    const RgbF& c = lane_colors[i];
    std::snprintf(buf, sizeof buf, "%s[%.3f,%.3f,%.3f]", i ? "," : "", c[0], c[1], c[2]);
    s += buf;
  }
  s += "]}\n";
  return s;
}

Fingerprint Fingerprint::from_json(const std::string& text) {
  Fingerprint fp;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != 1) fail(ErrorCode::Config, "unsupported fingerprint version");
    if (j.contains("drug")) fp.drug = j["drug"].get<int>();
    for (const auto& lane : j.at("lanes")) {
      const auto v = lane.get<std::vector<double>>();
      if (v.size() != 3) fail(ErrorCode::Config, "fingerprint lanes must hold three channels");
      fp.lane_colors.push_back({v[0], v[1], v[2]});
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::Config, std::string("malformed fingerprint: ") + ex.what());
  }
  return fp;
}

std::vector<Point2> seed_regions(const Raster& crop, const Rect& lane_rect, std::optional<int> swipe_line_y) {
  require(Rect{0, 0, crop.width(), crop.height()}.contains(lane_rect), "lane rectangle must lie inside the crop");
  const int h = swipe_line_y ? std::min(lane_rect.h, *swipe_line_y - lane_rect.y) : lane_rect.h;
  require(h >= kSeedsPerLane, "lane is shorter than five pixels");
  std::vector<Point2> seeds;
  const int x = lane_rect.x + lane_rect.w / 2;
  for (int k = 0; k < kSeedsPerLane; ++k) {
    seeds.push_back({static_cast<double>(x), static_cast<double>(lane_rect.y + (2 * k + 1) * h / (2 * kSeedsPerLane))});
  }
  return seeds;
}

Region grow_region(const Raster& crop, const Rect& lane_rect, Point2 seed, double tau, int lane) {
  const int sx = static_cast<int>(std::lround(seed.x));
  const int sy = static_cast<int>(std::lround(seed.y));
  require(lane_rect.contains(sx, sy), "seed must lie inside the lane");
  require(Rect{0, 0, crop.width(), crop.height()}.contains(lane_rect), "lane rectangle must lie inside the crop");
  const int w = lane_rect.w;
  std::vector<std::uint8_t> member(static_cast<std::size_t>(lane_rect.area()), 0);
  auto idx = [&](int x, int y) { return static_cast<std::size_t>(y - lane_rect.y) * w + (x - lane_rect.x); };

  std::size_t count = 0;
  double sum[3] = {0, 0, 0};
  std::vector<std::pair<int, int>> queue;
  auto add = [&](int x, int y, Rgb c) {
    member[idx(x, y)] = 1;
    ++count;
    for (int k = 0; k < 3; ++k) sum[k] += c[k];
    queue.emplace_back(x, y);
  };
  add(sx, sy, crop.pixel(sx, sy));
  const double tau2 = tau * tau;
  constexpr int dx[4] = {-1, 1, 0, 0};
  constexpr int dy[4] = {0, 0, -1, 1};
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const auto [x, y] = queue[head];
    for (int d = 0; d < 4; ++d) {
      const int nx = x + dx[d];
      const int ny = y + dy[d];
      if (!lane_rect.contains(nx, ny) || member[idx(nx, ny)]) continue;
      const Rgb c = crop.pixel(nx, ny);
      const double n = static_cast<double>(count);
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double diff = c[k] - sum[k] / n;
        d2 += diff * diff;
      }
      // Rejected pixels stay eligible: the mean may drift toward them later.
      if (d2 > tau2) continue;
      add(nx, ny, c);
    }
  }
  // Scanning the mask row by row yields the pixels already sorted.
  std::vector<Pixel> pixels;
  pixels.reserve(count);
  for (int y = lane_rect.y; y < lane_rect.y + lane_rect.h; ++y)
    for (int x = lane_rect.x; x < lane_rect.x + w; ++x)
      if (member[idx(x, y)]) pixels.push_back({x, y, crop.pixel(x, y)});
  return region_from_sorted(lane, std::move(pixels));
}

std::vector<Region> merge_overlapping(std::vector<Region> regions) {
  for (;;) {
    struct Candidate {
      std::size_t combined, a, b;
    };
    std::vector<Candidate> pairs;
    for (std::size_t a = 0; a < regions.size(); ++a)
      for (std::size_t b = a + 1; b < regions.size(); ++b) pairs.push_back({regions[a].size() + regions[b].size(), a, b});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Candidate& l, const Candidate& r) { return l.combined > r.combined; });
    bool merged = false;
    for (const auto& p : pairs) {
      const Region& a = regions[p.a];
      const Region& b = regions[p.b];
      const double bigger = static_cast<double>(std::max(a.size(), b.size()));
      if (static_cast<double>(overlap(a, b)) > kMergeOverlapRatio * bigger) {
        std::vector<Pixel> all;
        all.reserve(a.size() + b.size());
        std::set_union(a.pixels.begin(), a.pixels.end(), b.pixels.begin(), b.pixels.end(), std::back_inserter(all), pixel_less);
        Region u = region_from_sorted(a.lane, std::move(all));
        regions[p.a] = std::move(u);
        regions.erase(regions.begin() + static_cast<std::ptrdiff_t>(p.b));
        merged = true;
        break;
      }
    }
    if (!merged) return regions;
  }
}

ReactionBlob select_reaction_blob(const std::vector<Region>& regions) {
  require(!regions.empty(), "no regions to select from");
  const Region* best = &regions[0];
  for (const Region& r : regions) {
    const double a = max_diff(r.mean_rgb);
    const double b = max_diff(best->mean_rgb);
    if (a > b || (a == b && (r.size() > best->size() || (r.size() == best->size() && r.bbox.y < best->bbox.y)))) best = &r;
  }
  return {best->lane, best->mean_rgb, max_diff(best->mean_rgb), best->size(), best->bbox};
}

LaneAnalysis analyze_lane(const Raster& crop, const CardLayout& layout, int lane, double tau) {
  const Rect& rect = layout.lane_rects.at(static_cast<std::size_t>(lane));
  LaneAnalysis out;
  for (const Point2& s : seed_regions(crop, rect, layout.swipe_line_y)) {
    out.grown.push_back(grow_region(crop, rect, s, tau, lane));
  }
  out.merged = merge_overlapping(out.grown);
  out.blob = select_reaction_blob(out.merged);
  return out;
}

Fingerprint extract_fingerprint(const Raster& crop, const CardLayout& layout, double tau, bool include_timer) {
  if (crop.width() != layout.crop_window.w || crop.height() != layout.crop_window.h) {
    fail(ErrorCode::InvalidArgument, "crop size does not match the layout");
  }
  const std::optional<int> timer = layout.timer_lane();
  Fingerprint fp;
  for (int lane = 0; lane < layout.lane_count; ++lane) {
    if (!include_timer && timer && *timer == lane) continue;
    fp.lane_colors.push_back(analyze_lane(crop, layout, lane, tau).blob.mean_rgb);
  }
  return fp;
}

}  // namespace pad
