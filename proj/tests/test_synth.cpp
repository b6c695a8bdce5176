#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "pad/blobs.hpp"
#include "pad/synth.hpp"

using namespace pad;

namespace {

double channel_max_diff(const RgbF& c) {
  return std::max({std::abs(c[0] - c[1]), std::abs(c[1] - c[2]), std::abs(c[2] - c[0])});
}

const ReactionColorModel& default_model() {
  static const ReactionColorModel m = make_color_model(DatasetConfig{});
  return m;
}

const std::vector<int>& default_panel() {
  static const std::vector<int> p = resolve_panel(DatasetConfig{}, default_model());
  return p;
}

}  // namespace

TEST_CASE("name tables") {
  CHECK(drug_names().size() == kDrugCount);
  CHECK(reagent_names().size() == kReagentCount);
  CHECK(std::set<std::string>(drug_names().begin(), drug_names().end()).size() == kDrugCount);
}

TEST_CASE("color model is seeded and panel-separable") {
  const auto a = ReactionColorModel::generate(3);
  const auto b = ReactionColorModel::generate(3);
  const auto c = ReactionColorModel::generate(4);
  CHECK(a.base == b.base);
  CHECK(a.base != c.base);
  CHECK(a.drug_count() == kDrugCount);
  CHECK(a.reagent_count() == kReagentCount);

  const auto& panel = default_panel();
  REQUIRE(panel.size() == 11);
  CHECK(std::set<int>(panel.begin(), panel.end()).size() == 11);
  // Ideal panel colors of every pair of drugs differ (9 pixels per lane).
  const auto& m = default_model();
  double worst = 1e18;
  for (int p = 0; p < kDrugCount; ++p)
    for (int q = p + 1; q < kDrugCount; ++q) {
      double d2 = 0;
      for (int r : panel)
        for (int k = 0; k < 3; ++k) {
          const double t = double(m.base[p][r][k]) - m.base[q][r][k];
          d2 += 9 * t * t;
        }
      worst = std::min(worst, std::sqrt(d2));
    }
  CHECK(worst >= 150.0);
}

TEST_CASE("lane color blends from paper") {
  const auto& m = default_model();
  const RgbF zero = m.lane_color(0, 0, 0.0);
  for (int k = 0; k < 3; ++k) CHECK(zero[k] == doctest::Approx(m.paper[k]));
  const RgbF full = m.lane_color(2, 5, 1.0);
  for (int k = 0; k < 3; ++k) CHECK(full[k] == doctest::Approx(m.base[2][5][k]));
  const RgbF half = m.lane_color(2, 5, 0.5);
  for (int k = 0; k < 3; ++k) CHECK(half[k] == doctest::Approx(0.5 * (m.paper[k] + m.base[2][5][k])));
}

TEST_CASE("blob membership without wobble is an ellipse") {
  BlobSpec b;
  b.center = {25.3, 100.7};
  b.axis_x = 17.0;
  b.axis_y = 93.0;
  int checked = 0;
  for (double y = 0; y < 200; y += 0.7)
    for (double x = 0; x < 50; x += 0.9) {
      CHECK(b.contains(x, y) == oracle::in_ellipse(x, y, 25.3, 100.7, 17.0, 93.0));
      ++checked;
    }
  CHECK(checked > 10000);
  const Rect r = b.bounds();
  CHECK(r.contains(Rect{9, 8, 32, 186}));
}

TEST_CASE("card specs") {
  const auto panel = CardSpec::panel(4, default_panel());
  CHECK(panel.lane_reagents.size() == 12);
  CHECK(panel.lane_reagents[0] == kTimerReagent);
  const auto single = CardSpec::single_reagent(4, 7);
  REQUIRE(single.lane_reagents.size() == 9);
  CHECK(std::all_of(single.lane_reagents.begin(), single.lane_reagents.end(), [](int r) { return r == 7; }));
  CHECK(single.lane_strength[0] == doctest::Approx(0.55));
  CHECK(single.lane_strength[4] == doctest::Approx(0.775));
  CHECK(single.lane_strength[8] == doctest::Approx(1.0));
}

TEST_CASE("rendering is deterministic in the seed") {
  const CardLayout layout = canonical_layout(12);
  const DistortionParams d;
  const auto spec = CardSpec::panel(9, default_panel());
  const auto a = render_card(spec, layout, default_model(), d, 77);
  const auto b = render_card(spec, layout, default_model(), d, 77);
  const auto c = render_card(spec, layout, default_model(), d, 78);
  CHECK(a.image == b.image);
  CHECK_FALSE(a.image == c.image);
  CHECK(a.image.width() > 400);
}

TEST_CASE("undistorted render is the canonical card") {
  const CardLayout layout = canonical_layout(12);
  const auto none = DistortionParams::none();
  CHECK(none.is_geometric_identity());
  const auto spec = CardSpec::panel(1, default_panel());
  const auto photo = render_card(spec, layout, default_model(), none, 5);
  const auto canon = render_canonical(spec, layout, default_model(), none, 5);
  CHECK(photo.image == canon.image);
  CHECK(photo.image.width() == kCanonicalWidth);
  CHECK(photo.image.height() == kCanonicalHeight);
  // With no misprint the planted color is painted exactly at the blob center.
  for (const auto& lane : canon.truth.lanes) {
    const Point2 c = lane.reaction.center;
    const Rgb px = canon.image.pixel(static_cast<int>(std::lround(c.x)) + layout.crop_window.x,
                                     static_cast<int>(std::lround(c.y)) + layout.crop_window.y);
    CHECK(px == to_rgb8(lane.planted));
  }
}

TEST_CASE("planted residuals respect the margin and stay clear of the reaction") {
  const CardLayout layout = canonical_layout(12);
  int residuals = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto card = render_canonical(CardSpec::panel(static_cast<int>(seed % kDrugCount), default_panel()), layout,
                                       default_model(), DistortionParams{}, seed);
    for (const auto& lane : card.truth.lanes) {
      const Rect lane_rect = layout.lane_rects[lane.lane];
      CHECK(lane_rect.contains(lane.reaction.bounds()));
      const auto reach_y = [](const BlobSpec& b) {
        return b.axis_y * (1.0 + b.wobble_amp[0] + b.wobble_amp[1] + b.wobble_amp[2]);
      };
      for (std::size_t k = 0; k < lane.residuals.size(); ++k) {
        ++residuals;
        CHECK(channel_max_diff(lane.residual_colors[k]) <= channel_max_diff(lane.planted) - 20.0 + 1e-9);
        const BlobSpec& r = lane.residuals[k];
        CHECK(lane_rect.contains(r.bounds()));
        CHECK(std::abs(r.center.y - lane.reaction.center.y) >= reach_y(r) + reach_y(lane.reaction) + 8.0 - 1e-9);
      }
    }
  }
  CHECK(residuals > 100);
}

TEST_CASE("lane permutation moves lanes and composes") {
  const CardLayout layout = canonical_layout(12);
  Raster crop(kCropWidth, kCropHeight, {200, 200, 200});
  for (int i = 0; i < 12; ++i) {
    const Rect r = layout.lane_rects[i];
    for (int y = r.y; y < r.bottom(); ++y)
      for (int x = r.x; x < r.right(); ++x)
        crop.set_pixel(x, y, {static_cast<std::uint8_t>(i * 20), static_cast<std::uint8_t>(x - r.x), static_cast<std::uint8_t>(y % 251)});
  }
  const auto p1 = random_derangement(12, 1);
  const auto p2 = random_derangement(12, 2);
  const Raster once = permute_lanes(crop, layout, p1);
  for (int i = 0; i < 12; ++i) CHECK(once.sub(layout.lane_rects[p1[i]]) == crop.sub(layout.lane_rects[i]));
  // Outside the lanes nothing changes.
  CHECK(once.pixel(0, 0) == crop.pixel(0, 0));
  CHECK(once.pixel(300, 480) == crop.pixel(300, 480));

  std::vector<int> composed(12);
  for (int i = 0; i < 12; ++i) composed[i] = p2[p1[i]];
  CHECK(permute_lanes(once, layout, p2) == permute_lanes(crop, layout, composed));

  std::vector<int> inverse(12);
  for (int i = 0; i < 12; ++i) inverse[p1[i]] = i;
  CHECK(permute_lanes(once, layout, inverse) == crop);

  std::vector<int> bad(12, 0);
  CHECK_THROWS_AS(permute_lanes(crop, layout, bad), Error);
}

TEST_CASE("derangements have no fixed points") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p = random_derangement(12, s);
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> id(12);
    std::iota(id.begin(), id.end(), 0);
    CHECK(sorted == id);
    for (int i = 0; i < 12; ++i) CHECK(p[i] != i);
    CHECK(random_derangement(12, s) == p);
  }
}

TEST_CASE("pixel noise is seeded and zero-mean") {
  Raster a(200, 200, {128, 128, 128});
  Raster b = a;
  add_pixel_noise(a, 5.0, 9);
  add_pixel_noise(b, 5.0, 9);
  CHECK(a == b);
  double sum = 0, sq = 0;
  for (auto v : a.data()) {
    sum += v - 128.0;
    sq += (v - 128.0) * (v - 128.0);
  }
  const double n = static_cast<double>(a.data().size());
  CHECK(std::abs(sum / n) < 0.1);
  CHECK(std::sqrt(sq / n) == doctest::Approx(5.0).epsilon(0.05));
  Raster c(4, 4, {7, 7, 7});
  add_pixel_noise(c, 0.0, 1);
  CHECK(c == Raster(4, 4, {7, 7, 7}));
}

TEST_CASE("dataset plan") {
  DatasetConfig cfg;
  const auto m = plan_dataset(cfg, 42);
  REQUIRE(m.entries.size() == 780);
  m.validate();
  std::map<std::pair<int, int>, int> count;
  std::set<std::uint64_t> seeds;
  for (const auto& e : m.entries) {
    count[{e.drug_index, e.fold}]++;
    CHECK((e.split == "test") == (e.fold == 0));
    CHECK(e.drug_label == drug_names()[e.drug_index]);
    seeds.insert(e.seed);
  }
  for (int d = 0; d < 26; ++d)
    for (int f = 0; f < 3; ++f) CHECK(count[{d, f}] == 10);
  CHECK(seeds.size() == 780);
  CHECK(plan_dataset(cfg, 42).to_json() == m.to_json());
  CHECK(plan_dataset(cfg, 43).to_json() != m.to_json());
}

TEST_CASE("dataset config json") {
  DatasetConfig cfg;
  cfg.images_per_drug = 4;
  cfg.distortion.noise_sigma = 2.5;
  const auto back = DatasetConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.digest() == cfg.digest());
  DatasetConfig other = cfg;
  other.distortion.noise_sigma = 3.0;
  CHECK(other.digest() != cfg.digest());

  auto expect_config_error = [](const std::string& text) {
    try {
      DatasetConfig::from_json(text);
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Config);
    }
  };
  expect_config_error("{\"lane_count\": 9}");
  expect_config_error("{broken");
}

TEST_CASE("image seeds differ") {
  std::set<std::uint64_t> s;
  for (std::size_t i = 0; i < 1000; ++i) s.insert(image_seed(1, i));
  CHECK(s.size() == 1000);
  CHECK(image_seed(1, 3) != image_seed(2, 3));
}
