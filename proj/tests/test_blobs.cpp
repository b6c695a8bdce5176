#include <doctest.h>

#include <cmath>
#include <set>

#include "pad/blobs.hpp"
#include "pad/synth.hpp"

using namespace pad;

namespace {

Region block(int lane, int x0, int y0, int w, int h, Rgb c) {
  std::vector<Pixel> px;
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) px.push_back({x, y, c});
  return make_region(lane, std::move(px));
}

Region join(const Region& a, const Region& b) {
  std::vector<Pixel> px = a.pixels;
  px.insert(px.end(), b.pixels.begin(), b.pixels.end());
  return make_region(a.lane, std::move(px));
}

const ReactionColorModel& model() {
  static const ReactionColorModel m = make_color_model(DatasetConfig{});
  return m;
}

}  // namespace

TEST_CASE("max_diff") {
  CHECK(max_diff({10, 10, 10}) == 0.0);
  CHECK(max_diff({200, 50, 120}) == doctest::Approx(150.0));
  CHECK(max_diff({0, 255, 128}) == doctest::Approx(255.0));
}

TEST_CASE("seed positions") {
  const Raster crop(kCropWidth, kCropHeight, {245, 243, 238});
  const Rect lane{54, 12, 51, 438};
  const auto seeds = seed_regions(crop, lane);
  REQUIRE(seeds.size() == 5);
  for (int k = 0; k < 5; ++k) {
    CHECK(seeds[k].x == 54 + 25);
    CHECK(seeds[k].y == 12 + (2 * k + 1) * 438 / 10);
  }
  const auto clipped = seed_regions(crop, lane, 212);  // only 200 rows above the line
  for (int k = 0; k < 5; ++k) CHECK(clipped[k].y == 12 + (2 * k + 1) * 200 / 10);
}

TEST_CASE("region growing fills a uniform patch exactly") {
  Raster crop(kCropWidth, kCropHeight, {245, 243, 238});
  const Rect lane{1, 12, 51, 438};
  for (int y = 100; y < 160; ++y)
    for (int x = 10; x < 40; ++x) crop.set_pixel(x, y, {180, 60, 90});
  const Region r = grow_region(crop, lane, {20, 120}, 40.0, 0);
  CHECK(r.size() == 60 * 30);
  CHECK(r.bbox == Rect{10, 100, 30, 60});
  CHECK(r.mean_rgb[0] == doctest::Approx(180));
  CHECK(r.contains(10, 100));
  CHECK_FALSE(r.contains(9, 100));

  // The background region stops at the lane rectangle.
  const Region bg = grow_region(crop, lane, {5, 20}, 40.0, 0);
  CHECK(bg.size() == static_cast<std::size_t>(lane.area()) - 60 * 30);
  for (const Pixel& p : bg.pixels) CHECK(lane.contains(p.x, p.y));
}

TEST_CASE("growth follows the running mean") {
  // A gentle ramp joins; a step beyond tau of the mean does not.
  Raster crop(60, 60, {250, 250, 250});
  const Rect lane{0, 0, 60, 60};
  for (int y = 0; y < 60; ++y)
    for (int x = 0; x < 60; ++x) crop.set_pixel(x, y, {static_cast<std::uint8_t>(x < 30 ? 100 + x : 220), 50, 50});
  const Region r = grow_region(crop, lane, {5, 5}, 40.0);
  std::set<int> xs;
  for (const Pixel& p : r.pixels) xs.insert(p.x);
  CHECK(xs.size() == 30);
  CHECK(*xs.rbegin() == 29);
}

TEST_CASE("merge threshold is strictly above 0.35 of the bigger region") {
  const Rgb c{100, 50, 50};
  const Region a = block(0, 0, 0, 10, 10, c);  // 100 pixels

  // 36 shared pixels: 36 > 35 merges.
  const Region b36 = join(block(0, 0, 0, 9, 4, c), block(0, 20, 0, 4, 6, c));
  REQUIRE(b36.size() == 60);
  REQUIRE(overlap(a, b36) == 36);
  const auto merged = merge_overlapping({a, b36});
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].size() == 124);

  // 35 shared pixels: exactly 0.35 * 100, kept apart.
  const Region b35 = join(block(0, 0, 0, 7, 5, c), block(0, 20, 0, 5, 5, c));
  REQUIRE(b35.size() == 60);
  REQUIRE(overlap(a, b35) == 35);
  CHECK(merge_overlapping({a, b35}).size() == 2);
}

TEST_CASE("merging cascades until no pair qualifies") {
  const Rgb c{90, 90, 200};
  const Region a = block(0, 0, 0, 10, 10, c);
  const Region b = block(0, 0, 5, 10, 10, c);  // half of a
  // 30 pixels in each of a and b (not enough for either), 60 in their union.
  const Region d = join(block(0, 0, 2, 10, 3, c), block(0, 0, 10, 10, 3, c));
  REQUIRE(overlap(a, d) == 30);
  REQUIRE(overlap(b, d) == 30);
  const Region far = block(0, 30, 40, 5, 5, c);
  const auto merged = merge_overlapping({a, b, d, far});
  CHECK(merged.size() == 2);
}

TEST_CASE("selection prefers max_diff, then size, then the higher region") {
  const Region strong = block(0, 0, 0, 3, 3, {200, 40, 40});
  const Region weak_big = block(0, 0, 10, 10, 10, {150, 100, 100});
  CHECK(select_reaction_blob({weak_big, strong}).size == 9);

  const Region big = block(0, 0, 10, 6, 6, {150, 100, 100});
  const Region small = block(0, 0, 30, 4, 4, {150, 100, 100});
  CHECK(select_reaction_blob({small, big}).size == 36);

  const Region low = block(0, 0, 40, 4, 4, {150, 100, 100});
  const Region high = block(0, 0, 5, 4, 4, {150, 100, 100});
  CHECK(select_reaction_blob({low, high}).bbox.y == 5);
  CHECK_THROWS_AS(select_reaction_blob({}), Error);
}

TEST_CASE("noise-free fingerprint recovers planted colors") {
  const CardLayout layout = canonical_layout(12);
  const auto panel = resolve_panel(DatasetConfig{}, model());
  ReactionColorModel quiet = model();
  quiet.jitter_sigma = 0.0;
  DistortionParams d = DistortionParams::none();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto card = render_canonical(CardSpec::panel(static_cast<int>(seed * 2), panel), layout, quiet, d, seed);
    const Raster crop = card.image.sub(layout.crop_window);
    const Fingerprint fp = extract_fingerprint(crop, layout);
    REQUIRE(fp.lane_count() == 12);
    for (int l = 0; l < 12; ++l)
      for (int k = 0; k < 3; ++k) CHECK(std::abs(fp.lane_colors[l][k] - card.truth.lanes[l].planted[k]) <= 3.0);
    CHECK(extract_fingerprint(crop, layout, kDefaultGrowTau, false).lane_count() == 11);
  }
}

TEST_CASE("fingerprint of a jittered card stays near the color table") {
  // Full strength, color jitter only: lane means scatter around the table
  // color with the jitter sigma, so about 95% of channels fall within 2 sigma.
  const CardLayout layout = canonical_layout(12);
  const auto panel = resolve_panel(DatasetConfig{}, model());
  ReactionColorModel m = model();
  m.strength_min = 1.0;
  int inside = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int drug = static_cast<int>(seed % kDrugCount);
    const auto card = render_card(CardSpec::panel(drug, panel), layout, m, DistortionParams::none(), seed);
    const Fingerprint fp = extract_fingerprint(card.image.sub(layout.crop_window), layout);
    for (int l = 1; l < 12; ++l) {
      const Rgb base = m.base[drug][panel[l - 1]];
      for (int k = 0; k < 3; ++k) {
        inside += std::abs(fp.lane_colors[l][k] - base[k]) <= 2.0 * m.jitter_sigma + 1.0;
        ++total;
      }
    }
  }
  CHECK(static_cast<double>(inside) / total >= 0.9);
}

TEST_CASE("fingerprint follows a lane permutation") {
  const CardLayout layout = canonical_layout(12);
  const auto panel = resolve_panel(DatasetConfig{}, model());
  const auto card = render_card(CardSpec::panel(7, panel), layout, model(), DistortionParams{}, 3);
  const Raster crop = rectify_pipeline(card.image, layout).crop;
  const Fingerprint fp = extract_fingerprint(crop, layout);
  const auto perm = random_derangement(12, 4);
  const Fingerprint moved = extract_fingerprint(permute_lanes(crop, layout, perm), layout);
  for (int i = 0; i < 12; ++i)
    for (int k = 0; k < 3; ++k) CHECK(std::abs(moved.lane_colors[perm[i]][k] - fp.lane_colors[i][k]) <= 1.0);
}

TEST_CASE("fingerprint json keeps three decimals") {
  Fingerprint fp;
  fp.lane_colors = {{1.23456, 2.0, 3.9999}, {100.0005, 0.0, 255.0}};
  const std::string text = fp.to_json();
  CHECK(text.find("1.235") != std::string::npos);
  const Fingerprint back = Fingerprint::from_json(text);
  REQUIRE(back.lane_count() == 2);
  CHECK(back.lane_colors[0][0] == doctest::Approx(1.235));
  CHECK(back.lane_colors[0][2] == doctest::Approx(4.0));
  CHECK(back.to_json() == text);
  CHECK(fp.flattened().size() == 6);
  CHECK_THROWS_AS(Fingerprint::from_json("[1,2"), Error);
}

TEST_CASE("fingerprint rejects a wrong-size crop") {
  CHECK_THROWS_AS(extract_fingerprint(Raster(100, 100), canonical_layout(12)), Error);
}
