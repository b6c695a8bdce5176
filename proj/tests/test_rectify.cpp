#include <doctest.h>

#include <cmath>
#include <random>

#include "pad/rectify.hpp"
#include "pad/synth.hpp"

using namespace pad;

namespace {

// Projective map written out by hand, independent of Homography::apply.
Point2 project(const Eigen::Matrix3d& m, Point2 p) {
  const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
  return {(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w, (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w};
}

Eigen::Matrix3d sample_matrix() {
  Eigen::Matrix3d m;
  m << 0.93, -0.12, 40.0, 0.08, 1.07, 25.0, 1.2e-4, -0.8e-4, 1.0;
  return m;
}

const ReactionColorModel& model() {
  static const ReactionColorModel m = make_color_model(DatasetConfig{});
  return m;
}

const std::vector<int>& panel() {
  static const std::vector<int> p = resolve_panel(DatasetConfig{}, model());
  return p;
}

}  // namespace

TEST_CASE("four exact correspondences recover the homography") {
  const Eigen::Matrix3d m = sample_matrix();
  std::vector<PointPair> pairs;
  for (Point2 p : {Point2{0, 0}, Point2{700, 10}, Point2{690, 1200}, Point2{5, 1210}}) pairs.push_back({p, project(m, p)});
  const HomographyFit fit = fit_homography(pairs);
  CHECK(fit.max_residual < 1e-6);
  for (double x = 0; x < 730; x += 97)
    for (double y = 0; y < 1220; y += 131) {
      const Point2 a = fit.h.apply({x, y});
      const Point2 b = project(m, {x, y});
      CHECK(distance(a, b) < 1e-6);
    }
  CHECK(fit.h.h(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("least squares with noisy extra points") {
  const Eigen::Matrix3d m = sample_matrix();
  std::mt19937 rng(3);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<PointPair> pairs;
  for (int i = 0; i < 30; ++i) {
    const Point2 p{std::uniform_real_distribution<double>(0, 730)(rng), std::uniform_real_distribution<double>(0, 1220)(rng)};
    const Point2 q = project(m, p);
    pairs.push_back({p, {q.x + noise(rng), q.y + noise(rng)}});
  }
  const HomographyFit fit = fit_homography(pairs);
  CHECK(fit.mean_residual < 0.6);
  CHECK(fit.residuals.size() == pairs.size());
  CHECK(distance(fit.h.apply({365, 610}), project(m, {365, 610})) < 0.5);
}

TEST_CASE("outlier filter hook refits on the kept pairs") {
  const Eigen::Matrix3d m = sample_matrix();
  std::vector<PointPair> pairs;
  for (Point2 p : {Point2{0, 0}, Point2{700, 10}, Point2{690, 1200}, Point2{5, 1210}, Point2{365, 600}})
    pairs.push_back({p, project(m, p)});
  pairs.back().dst.x += 40.0;
  const HomographyFit plain = fit_homography(pairs);
  CHECK(plain.max_residual > 1.0);
  const HomographyFit filtered = fit_homography(pairs, [](std::span<const PointPair> ps, const Homography&) {
    std::vector<bool> keep(ps.size(), true);
    keep.back() = false;
    return keep;
  });
  CHECK(filtered.max_residual < 1e-6);
}

TEST_CASE("degenerate correspondences") {
  auto expect_degenerate = [](const std::vector<PointPair>& pairs) {
    try {
      fit_homography(pairs);
      FAIL("expected DegenerateFiducials");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateFiducials);
    }
  };
  expect_degenerate({{{0, 0}, {0, 0}}, {{1, 0}, {1, 0}}, {{0, 1}, {0, 1}}});
  expect_degenerate({{{0, 0}, {0, 0}}, {{1, 1}, {1, 1}}, {{2, 2}, {2, 2}}, {{5, 0}, {5, 0}}});
}

TEST_CASE("composition and inverse") {
  const Homography a = Homography::from_matrix(sample_matrix());
  Eigen::Matrix3d mb;
  mb << 1.1, 0.05, -7.0, -0.02, 0.95, 3.0, 0.0, 1e-5, 1.0;
  const Homography b = Homography::from_matrix(mb);
  for (Point2 p : {Point2{3, 4}, Point2{500, 900}, Point2{120, 40}}) {
    CHECK(distance((a * b).apply(p), a.apply(b.apply(p))) < 1e-8);
    CHECK(distance(a.inverse().apply(a.apply(p)), p) < 1e-8);
  }
  RigidTransform r{0.01, {2.5, -1.5}, {365, 575}};
  for (Point2 p : {Point2{0, 0}, Point2{700, 300}}) {
    CHECK(distance(r.inverse().apply(r.apply(p)), p) < 1e-9);
    // Rigid maps preserve distances.
    CHECK(distance(r.apply(p), r.apply({10, 10})) == doctest::Approx(distance(p, {10, 10})));
  }
}

TEST_CASE("blank image has no fiducials") {
  const Raster blank(800, 1200, {240, 240, 240});
  try {
    detect_finder_patterns(blank);
    FAIL("expected NotEnoughFiducials");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotEnoughFiducials);
  }
  CHECK_THROWS_AS(rectify_pipeline(blank, canonical_layout(12)), Error);
}

TEST_CASE("finders and corner marks are found at their printed centers") {
  const CardLayout layout = canonical_layout(12);
  const auto card = render_canonical(CardSpec::panel(0, panel()), layout, model(), DistortionParams::none(), 1);
  auto dets = detect_finder_patterns(card.image);
  CHECK(dets.size() == 6);
  const auto pairs = match_fiducials(dets, layout);
  CHECK(pairs.size() == 6);
  for (const auto& p : pairs) CHECK(distance(p.src, p.dst) < 1.0);
}

TEST_CASE("rectification matches the rendering transform") {
  const CardLayout layout = canonical_layout(12);
  const DistortionParams d;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto card = render_card(CardSpec::panel(static_cast<int>(seed), panel()), layout, model(), d, 100 + seed);
    const RectifyResult r = rectify_pipeline(card.image, layout);
    CHECK(r.mean_reprojection_error < 2.0);
    CHECK(r.crop.width() == kCropWidth);
    CHECK(r.crop.height() == kCropHeight);
    CHECK(r.rectified.width() == kCanonicalWidth);
    const Rect cw = layout.crop_window;
    for (Point2 p : {Point2{double(cw.x), double(cw.y)}, Point2{double(cw.right()), double(cw.bottom())},
                     Point2{365, 610}}) {
      CHECK(distance(r.card_to_image.apply(p), card.truth.card_to_image.apply(p)) < 2.0);
    }
    CHECK(r.wax_found);
  }
}

TEST_CASE("wax alignment recovers the misprint") {
  const CardLayout layout = canonical_layout(12);
  DistortionParams d = DistortionParams::none();
  d.wax_offset_px = 3.0;
  d.wax_rotation_deg = 0.3;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto card = render_canonical(CardSpec::panel(3, panel()), layout, model(), d, seed);
    const LaneAlignment a = refine_lane_alignment(card.image, layout);
    REQUIRE(a.wax_found);
    // Compare where both transforms send the lane area. The marks are
    // rasterized to whole pixels, so half a pixel per mark is irreducible.
    for (Point2 p : {Point2{100, 400}, Point2{650, 400}, Point2{365, 780}}) {
      CHECK(distance(a.correction.apply(p), card.truth.wax.apply(p)) < 1.25);
    }
  }
}

TEST_CASE("missing wax marks leave the image untouched") {
  const CardLayout layout = canonical_layout(12);
  const Raster plain(kCanonicalWidth, kCanonicalHeight, {245, 243, 238});
  const LaneAlignment a = refine_lane_alignment(plain, layout);
  CHECK_FALSE(a.wax_found);
  CHECK(a.image == plain);
  CHECK(crop_salient(plain, layout).width() == kCropWidth);
  CHECK_THROWS_AS(crop_salient(Raster(10, 10), layout), Error);
}
