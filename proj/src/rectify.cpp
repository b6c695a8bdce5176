#include "pad/rectify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pad/linalg.hpp"

namespace pad {

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

Homography Homography::from_matrix(const Eigen::Matrix3d& m) {
  if (!(std::abs(m(2, 2)) > 1e-300)) fail(ErrorCode::DegenerateFiducials, "homography with zero h22");
  Homography out;
  out.h = m / m(2, 2);
  return out;
}

Point2 Homography::apply(Point2 p) const {
  const double w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
  return {(h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2)) / w, (h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2)) / w};
}

Homography Homography::inverse() const { return from_matrix(h.inverse()); }

Point2 RigidTransform::apply(Point2 p) const {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double dx = p.x - pivot.x;
  const double dy = p.y - pivot.y;
  return {pivot.x + shift.x + c * dx - s * dy, pivot.y + shift.y + s * dx + c * dy};
}

RigidTransform RigidTransform::inverse() const {
  return {-angle, Point2{-shift.x, -shift.y}, pivot + shift};
}

// ---------------------------------------------------------------------------
// Homography estimation
// ---------------------------------------------------------------------------

namespace {

// Similarity taking the points to zero mean and mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(std::span<const Point2> pts) {
  Point2 c{};
  for (const auto& p : pts) c = c + p;
  c = (1.0 / static_cast<double>(pts.size())) * c;
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += distance(p, c);
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::numbers::sqrt2 / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x, 0, s, -s * c.y, 0, 0, 1;
  return t;
}

Point2 transform(const Eigen::Matrix3d& t, Point2 p) {
  const Eigen::Vector3d v = t * Eigen::Vector3d(p.x, p.y, 1.0);
  return {v(0) / v(2), v(1) / v(2)};
}

bool has_collinear_triple(std::span<const Point2> pts) {
  double extent = 0.0;
  for (const auto& a : pts)
    for (const auto& b : pts) extent = std::max(extent, distance(a, b));
  const double tol = 1e-9 * extent * extent;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      for (std::size_t k = j + 1; k < pts.size(); ++k) {
        const Point2 u = pts[j] - pts[i];
        const Point2 v = pts[k] - pts[i];
        if (std::abs(u.x * v.y - u.y * v.x) <= tol) return true;
      }
  return false;
}

HomographyFit fit_dlt(std::span<const PointPair> pairs) {
  const std::size_t n = pairs.size();
  if (n < 4) fail(ErrorCode::DegenerateFiducials, "homography needs at least 4 correspondences");
  std::vector<Point2> src(n), dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = pairs[i].src;
    dst[i] = pairs[i].dst;
  }
  if (n == 4 && (has_collinear_triple(src) || has_collinear_triple(dst))) {
    fail(ErrorCode::DegenerateFiducials, "three of the four correspondences are collinear");
  }
  const Eigen::Matrix3d ts = normalizing_transform(src);
  const Eigen::Matrix3d td = normalizing_transform(dst);

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 p = transform(ts, src[i]);
    const Point2 q = transform(td, dst[i]);
    const Eigen::Index r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    a.row(r + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }
  const Svd sa = jacobi_svd(a);
  // Eight independent constraints are required for a unique null vector.
  if (sa.s.size() < 8 || sa.s(7) <= 1e-10 * sa.s(0)) {
    fail(ErrorCode::DegenerateFiducials, "correspondence system is rank deficient");
  }
  const Eigen::VectorXd null = sa.v.col(8);
  Eigen::Matrix3d hn;
  hn << null(0), null(1), null(2), null(3), null(4), null(5), null(6), null(7), null(8);
  const Svd sh = jacobi_svd(hn);
  if (sh.s(2) <= 1e-8 * sh.s(0)) fail(ErrorCode::DegenerateFiducials, "estimated homography is singular");

  const Eigen::Matrix3d m = td.inverse() * hn * ts;
  if (std::abs(m(2, 2)) <= 1e-12 * m.cwiseAbs().maxCoeff()) {
    fail(ErrorCode::DegenerateFiducials, "homography maps the origin to infinity");
  }
  HomographyFit fit;
  fit.h = Homography::from_matrix(m);
  const double det2 = fit.h.h(0, 0) * fit.h.h(1, 1) - fit.h.h(0, 1) * fit.h.h(1, 0);
  if (!(std::abs(det2) > 1e-12)) fail(ErrorCode::DegenerateFiducials, "homography has a degenerate linear part");

  fit.residuals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = distance(fit.h.apply(src[i]), dst[i]);
    fit.residuals.push_back(r);
    fit.mean_residual += r;
    fit.max_residual = std::max(fit.max_residual, r);
  }
  fit.mean_residual /= static_cast<double>(n);
  return fit;
}

}  // namespace

HomographyFit fit_homography(std::span<const PointPair> pairs, const OutlierFilter& filter) {
  HomographyFit fit = fit_dlt(pairs);
  if (!filter) return fit;
  const std::vector<bool> keep = filter(pairs, fit.h);
  std::vector<PointPair> kept;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i < keep.size() && keep[i]) kept.push_back(pairs[i]);
  }
  if (kept.size() == pairs.size()) return fit;
  return fit_dlt(kept);
}

// ---------------------------------------------------------------------------
// Finder pattern detection
// ---------------------------------------------------------------------------

namespace {

constexpr int kThresholdWindow = 31;
constexpr int kThresholdOffset = 8;
// Pixels darker than this are dark regardless of their neighborhood, so the
// solid center of a large mark does not flip to light inside its own window.
constexpr int kAbsoluteDark = 64;

class BinaryImage {
 public:
  explicit BinaryImage(const Raster& img) : w_(img.width()), h_(img.height()), dark_(static_cast<std::size_t>(w_) * h_) {
    std::vector<int> gray(static_cast<std::size_t>(w_) * h_);
    for (int y = 0; y < h_; ++y) {
      const std::uint8_t* row = img.row(y);
      for (int x = 0; x < w_; ++x) {
        const std::uint8_t* p = row + 3 * x;
        gray[static_cast<std::size_t>(y) * w_ + x] = (299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000;
      }
    }
    std::vector<long long> integral(static_cast<std::size_t>(w_ + 1) * (h_ + 1), 0);
    for (int y = 0; y < h_; ++y) {
      long long acc = 0;
      for (int x = 0; x < w_; ++x) {
        acc += gray[static_cast<std::size_t>(y) * w_ + x];
        integral[static_cast<std::size_t>(y + 1) * (w_ + 1) + x + 1] = integral[static_cast<std::size_t>(y) * (w_ + 1) + x + 1] + acc;
      }
    }
    const int r = kThresholdWindow / 2;
    for (int y = 0; y < h_; ++y) {
      const int y0 = std::max(0, y - r);
      const int y1 = std::min(h_, y + r + 1);
      for (int x = 0; x < w_; ++x) {
        const int x0 = std::max(0, x - r);
        const int x1 = std::min(w_, x + r + 1);
        const long long sum = integral[static_cast<std::size_t>(y1) * (w_ + 1) + x1] - integral[static_cast<std::size_t>(y0) * (w_ + 1) + x1] -
                              integral[static_cast<std::size_t>(y1) * (w_ + 1) + x0] + integral[static_cast<std::size_t>(y0) * (w_ + 1) + x0];
        const long long area = static_cast<long long>(x1 - x0) * (y1 - y0);
        const int g = gray[static_cast<std::size_t>(y) * w_ + x];
        dark_[static_cast<std::size_t>(y) * w_ + x] = g < kAbsoluteDark || static_cast<long long>(g + kThresholdOffset) * area < sum;
      }
    }
  }

  int width() const { return w_; }
  int height() const { return h_; }
  bool dark(int x, int y) const { return dark_[static_cast<std::size_t>(y) * w_ + x] != 0; }

 private:
  int w_;
  int h_;
  std::vector<std::uint8_t> dark_;
};

bool ratio_ok(const std::array<int, 5>& c) {
  int total = 0;
  for (int v : c) {
    if (v == 0) return false;
    total += v;
  }
  if (total < 7 * 2) return false;
  const double m = total / 7.0;
  const double tol = m * 0.5;
  return std::abs(m - c[0]) < tol && std::abs(m - c[1]) < tol && std::abs(3.0 * m - c[2]) < 3.0 * tol &&
         std::abs(m - c[3]) < tol && std::abs(m - c[4]) < tol;
}

int total_of(const std::array<int, 5>& c) { return c[0] + c[1] + c[2] + c[3] + c[4]; }

// Walks outward from (x, y) along (dx, dy) through the center run and the
// two rings on each side. Returns the run lengths and the center run midpoint
// offset (in pixels along the walk direction) relative to the start.
struct CrossCheck {
  bool ok = false;
  double center = 0.0;
  int total = 0;
};

CrossCheck cross_check(const BinaryImage& bin, int x, int y, int dx, int dy, int max_run) {
  auto inside = [&](int px, int py) { return px >= 0 && py >= 0 && px < bin.width() && py < bin.height(); };
  if (!inside(x, y) || !bin.dark(x, y)) return {};
  std::array<int, 5> c{};
  int backward = 0;  // center-run pixels behind the start
  int px = x, py = y;
  while (inside(px, py) && bin.dark(px, py) && c[2] <= max_run * 3) { ++c[2]; ++backward; px -= dx; py -= dy; }
  while (inside(px, py) && !bin.dark(px, py) && c[1] <= max_run) { ++c[1]; px -= dx; py -= dy; }
  while (inside(px, py) && bin.dark(px, py) && c[0] <= max_run) { ++c[0]; px -= dx; py -= dy; }
  px = x + dx;
  py = y + dy;
  while (inside(px, py) && bin.dark(px, py) && c[2] <= max_run * 3) { ++c[2]; px += dx; py += dy; }
  while (inside(px, py) && !bin.dark(px, py) && c[3] <= max_run) { ++c[3]; px += dx; py += dy; }
  while (inside(px, py) && bin.dark(px, py) && c[4] <= max_run) { ++c[4]; px += dx; py += dy; }
  if (!ratio_ok(c)) return {};
  CrossCheck out;
  out.ok = true;
  out.total = total_of(c);
  // Center run spans [-(backward - 1), c[2] - backward] relative to the start pixel.
  out.center = -(backward - 1) + (c[2] - 1) / 2.0;
  return out;
}

struct Cluster {
  double sx = 0.0, sy = 0.0, smod = 0.0;
  int count = 0;
  double x() const { return sx / count; }
  double y() const { return sy / count; }
  double module() const { return smod / count; }
};

}  // namespace

std::vector<FiducialDetection> detect_finder_patterns(const Raster& image) {
  require(image.width() >= 64 && image.height() >= 64, "finder detection needs an image of at least 64x64");
  const BinaryImage bin(image);
  std::vector<Cluster> clusters;

  std::vector<std::pair<int, int>> runs;  // (start, length), alternating colors
  for (int y = 0; y < bin.height(); ++y) {
    runs.clear();
    bool first_dark = bin.dark(0, y);
    int start = 0;
    for (int x = 1; x <= bin.width(); ++x) {
      if (x == bin.width() || bin.dark(x, y) != bin.dark(x - 1, y)) {
        runs.emplace_back(start, x - start);
        start = x;
      }
    }
    for (std::size_t i = first_dark ? 0 : 1; i + 4 < runs.size(); i += 2) {
      const std::array<int, 5> c{runs[i].second, runs[i + 1].second, runs[i + 2].second, runs[i + 3].second,
                                 runs[i + 4].second};
      if (!ratio_ok(c)) continue;
      const int htotal = total_of(c);
      const double cx = runs[i + 2].first + (runs[i + 2].second - 1) / 2.0;
      const int col = static_cast<int>(std::lround(cx));
      const int max_run = htotal / 7 * 2 + 2;
      const CrossCheck vert = cross_check(bin, col, y, 0, 1, max_run);
      if (!vert.ok || std::abs(vert.total - htotal) > 0.5 * htotal) continue;
      const double cy = y + vert.center;
      const CrossCheck horz = cross_check(bin, col, static_cast<int>(std::lround(cy)), 1, 0, max_run);
      if (!horz.ok) continue;
      const double rx = col + horz.center;
      const double module = (horz.total + vert.total) / 14.0;

      auto it = std::find_if(clusters.begin(), clusters.end(), [&](const Cluster& cl) {
        const double m = cl.module();
        return std::abs(cl.x() - rx) <= m && std::abs(cl.y() - cy) <= m && module > 0.6 * m && module < 1.6 * m;
      });
      if (it == clusters.end()) {
        clusters.push_back({rx, cy, module, 1});
      } else {
        it->sx += rx;
        it->sy += cy;
        it->smod += module;
        ++it->count;
      }
    }
  }

  std::vector<FiducialDetection> dets;
  for (const auto& cl : clusters) {
    // Every row through the 3-module center square should confirm the mark.
    const double score = std::min(1.0, cl.count / (3.0 * cl.module()));
    if (cl.count < 3 || score < 0.3) continue;
    dets.push_back({{cl.x(), cl.y()}, FiducialKind::CornerMark, score, cl.module()});
  }
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.module_size > b.module_size;
  });
  if (dets.size() > 6) dets.resize(6);
  if (dets.size() < 4) {
    fail(ErrorCode::NotEnoughFiducials, "found " + std::to_string(dets.size()) + " fiducials, need at least 4");
  }
  // The three largest marks are the finder patterns.
  std::vector<std::size_t> by_module(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) by_module[i] = i;
  std::stable_sort(by_module.begin(), by_module.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].module_size > dets[b].module_size; });
  for (std::size_t r = 0; r < 3; ++r) dets[by_module[r]].kind = FiducialKind::Finder;
  return dets;
}

std::vector<PointPair> match_fiducials(std::vector<FiducialDetection>& detections, const CardLayout& layout) {
  std::vector<std::size_t> finders, marks;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    (detections[i].kind == FiducialKind::Finder ? finders : marks).push_back(i);
  }
  if (finders.size() != 3) fail(ErrorCode::NotEnoughFiducials, "expected three finder patterns");

  // The top-left finder sits opposite the longest side of the finder triangle.
  std::array<Point2, 3> p{};
  for (int i = 0; i < 3; ++i) p[i] = detections[finders[i]].center;
  const double d01 = distance(p[0], p[1]);
  const double d02 = distance(p[0], p[2]);
  const double d12 = distance(p[1], p[2]);
  int tl = 0, a = 1, b = 2;
  if (d02 >= d01 && d02 >= d12) { tl = 1; a = 0; b = 2; }
  else if (d01 >= d02 && d01 >= d12) { tl = 2; a = 0; b = 1; }
  const Point2 u = p[a] - p[tl];
  const Point2 v = p[b] - p[tl];
  if (u.x * v.y - u.y * v.x < 0) std::swap(a, b);  // image y points down: TR x BL > 0

  std::vector<PointPair> pairs{{layout.finder_centers[0], p[tl]},
                               {layout.finder_centers[1], p[a]},
                               {layout.finder_centers[2], p[b]}};

  // Affine prediction from the three finders places the corner marks.
  Eigen::Matrix3d src, dst;
  for (int i = 0; i < 3; ++i) {
    src.col(i) << pairs[i].src.x, pairs[i].src.y, 1.0;
    dst.col(i) << pairs[i].dst.x, pairs[i].dst.y, 1.0;
  }
  const Eigen::Matrix3d affine = dst * src.inverse();
  const double gate = 0.25 * distance(p[tl], p[a]);
  struct Cand { double d; std::size_t det; std::size_t mark; };
  std::vector<Cand> cands;
  for (std::size_t m = 0; m < layout.corner_marks.size(); ++m) {
    const Eigen::Vector3d q = affine * Eigen::Vector3d(layout.corner_marks[m].x, layout.corner_marks[m].y, 1.0);
    for (std::size_t i : marks) {
      const double d = distance(detections[i].center, {q(0), q(1)});
      if (d <= gate) cands.push_back({d, i, m});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.d < y.d; });
  std::vector<bool> det_used(detections.size(), false), mark_used(layout.corner_marks.size(), false);
  for (const auto& c : cands) {
    if (det_used[c.det] || mark_used[c.mark]) continue;
    det_used[c.det] = mark_used[c.mark] = true;
    pairs.push_back({layout.corner_marks[c.mark], detections[c.det].center});
  }
  if (pairs.size() < 4) fail(ErrorCode::NotEnoughFiducials, "could not match a corner mark to the layout");
  return pairs;
}

// ---------------------------------------------------------------------------
// Warping, alignment, cropping
// ---------------------------------------------------------------------------

Raster warp_to_canonical(const Raster& image, const Homography& card_to_image, const CardLayout& layout) {
  Raster out(layout.canonical_width, layout.canonical_height, Rgb{255, 255, 255});
  const Eigen::Matrix3d& h = card_to_image.h;
  for (int y = 0; y < out.height(); ++y) {
    std::uint8_t* row = out.row(y);
    for (int x = 0; x < out.width(); ++x) {
      const double w = h(2, 0) * x + h(2, 1) * y + h(2, 2);
      const double sx = (h(0, 0) * x + h(0, 1) * y + h(0, 2)) / w;
      const double sy = (h(1, 0) * x + h(1, 1) * y + h(1, 2)) / w;
      if (auto c = sample_bilinear(image, sx, sy)) {
        const Rgb v = to_rgb8(*c);
        row[3 * x] = v[0];
        row[3 * x + 1] = v[1];
        row[3 * x + 2] = v[2];
      }
    }
  }
  return out;
}

namespace {

struct NccPeak {
  Point2 center{};
  double score = 0.0;
};

NccPeak match_wax_mark(const std::vector<float>& gray, int w, int h, Point2 expected, const CardLayout& layout) {
  const int tsize = layout.wax_template_size;
  const int half = tsize / 2;
  const int mhalf = layout.wax_mark_size / 2;
  // The template is 1 around the mark and 0 on it, minus its mean, so the
  // correlation only needs box sums of the patch and of the mark square.
  const double n = static_cast<double>(tsize) * tsize;
  const double msize = 2.0 * mhalf + 1.0;
  const double tmean = (n - msize * msize) / n;
  const double tvar = n * tmean * (1.0 - tmean);

  const int ex = static_cast<int>(std::lround(expected.x));
  const int ey = static_cast<int>(std::lround(expected.y));
  constexpr int r = kWaxSearchRadius;
  const int wx0 = std::max(0, ex - r - half);
  const int wy0 = std::max(0, ey - r - half);
  const int wx1 = std::min(w, ex + r - half + tsize);
  const int wy1 = std::min(h, ey + r - half + tsize);
  const int iw = std::max(0, wx1 - wx0) + 1;
  const int ih = std::max(0, wy1 - wy0) + 1;
  std::vector<double> s1(static_cast<std::size_t>(iw) * ih, 0.0), s2(s1.size(), 0.0);
  auto ii = [&](int x, int y) { return static_cast<std::size_t>(y) * iw + x; };
  for (int y = 1; y < ih; ++y) {
    double row1 = 0.0, row2 = 0.0;
    for (int x = 1; x < iw; ++x) {
      const double v = gray[static_cast<std::size_t>(wy0 + y - 1) * w + wx0 + x - 1];
      row1 += v;
      row2 += v * v;
      s1[ii(x, y)] = s1[ii(x, y - 1)] + row1;
      s2[ii(x, y)] = s2[ii(x, y - 1)] + row2;
    }
  }
  // Sum over the box with top-left (x, y) in image coordinates and side k.
  auto box = [&](const std::vector<double>& t, int x, int y, int k) {
    const int lx = x - wx0, ly = y - wy0;
    return t[ii(lx + k, ly + k)] - t[ii(lx, ly + k)] - t[ii(lx + k, ly)] + t[ii(lx, ly)];
  };

  std::vector<double> ncc(static_cast<std::size_t>(2 * r + 1) * (2 * r + 1), -1.0);
  auto at = [&](int dx, int dy) -> double& { return ncc[static_cast<std::size_t>(dy + r) * (2 * r + 1) + dx + r]; };
  int best_dx = 0, best_dy = 0;
  double best = -2.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int x0 = ex + dx - half;
      const int y0 = ey + dy - half;
      if (x0 < 0 || y0 < 0 || x0 + tsize > w || y0 + tsize > h) continue;
      const double sum = box(s1, x0, y0, tsize);
      const double sum2 = box(s2, x0, y0, tsize);
      const double mark = box(s1, x0 + half - mhalf, y0 + half - mhalf, static_cast<int>(msize));
      const double cross = (sum - mark) - tmean * sum;
      const double pvar = sum2 - sum * sum / n;
      const double v = pvar > 1e-9 ? cross / std::sqrt(pvar * tvar) : 0.0;
      at(dx, dy) = v;
      if (v > best) {
        best = v;
        best_dx = dx;
        best_dy = dy;
      }
    }
  }
  auto parabola = [](double l, double c, double rr) {
    const double denom = l - 2.0 * c + rr;
    return denom < 0.0 ? 0.5 * (l - rr) / denom : 0.0;
  };
  double sub_x = 0.0, sub_y = 0.0;
  if (best_dx > -r && best_dx < r) sub_x = parabola(at(best_dx - 1, best_dy), best, at(best_dx + 1, best_dy));
  if (best_dy > -r && best_dy < r) sub_y = parabola(at(best_dx, best_dy - 1), best, at(best_dx, best_dy + 1));
  return {{ex + best_dx + sub_x, ey + best_dy + sub_y}, std::clamp(best, 0.0, 1.0)};
}

Raster resample_rigid(const Raster& img, const RigidTransform& t) {
  Raster out(img.width(), img.height(), Rgb{255, 255, 255});
  // Same arithmetic as sample_bilinear and to_rgb8, inlined for speed.
  const int w = img.width();
  const int h = img.height();
  const double cs = std::cos(t.angle);
  const double sn = std::sin(t.angle);
  for (int y = 0; y < img.height(); ++y) {
    const double dy = y - t.pivot.y;
    for (int x = 0; x < img.width(); ++x) {
      const double dx = x - t.pivot.x;
      const double sx = t.pivot.x + t.shift.x + cs * dx - sn * dy;
      const double sy = t.pivot.y + t.shift.y + sn * dx + cs * dy;
      if (!(sx >= -0.5 && sy >= -0.5 && sx <= w - 0.5 && sy <= h - 0.5)) continue;
      const double cx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const double cy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(cx);
      const int y0 = static_cast<int>(cy);
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = cx - x0;
      const double fy = cy - y0;
      const std::uint8_t* r0 = img.row(y0);
      const std::uint8_t* r1 = img.row(y1);
      std::uint8_t* o = out.row(y) + 3 * x;
      for (int c = 0; c < 3; ++c) {
        const double top = r0[x0 * 3 + c] * (1.0 - fx) + r0[x1 * 3 + c] * fx;
        const double bot = r1[x0 * 3 + c] * (1.0 - fx) + r1[x1 * 3 + c] * fx;
        o[c] = static_cast<std::uint8_t>(std::clamp(top * (1.0 - fy) + bot * fy, 0.0, 255.0) + 0.5);
      }
    }
  }
  return out;
}

}  // namespace

LaneAlignment refine_lane_alignment(const Raster& rectified, const CardLayout& layout) {
  require(rectified.width() == layout.canonical_width && rectified.height() == layout.canonical_height,
          "lane alignment expects a canonical-size raster");
  const int w = rectified.width();
  const int h = rectified.height();
  // Only the neighbourhoods searched for the wax marks are ever read.
  std::vector<float> gray(static_cast<std::size_t>(w) * h, 0.0f);
  const int reach = layout.wax_template_size / 2 + kWaxSearchRadius + 1;
  for (const Point2& e : layout.wax_fiducials) {
    const int ex = static_cast<int>(std::lround(e.x));
    const int ey = static_cast<int>(std::lround(e.y));
    for (int y = std::max(0, ey - reach); y <= std::min(h - 1, ey + reach); ++y)
      for (int x = std::max(0, ex - reach); x <= std::min(w - 1, ex + reach); ++x)
        gray[static_cast<std::size_t>(y) * w + x] = static_cast<float>(gray_level(rectified.pixel(x, y)));
  }

  LaneAlignment out;
  for (int k = 0; k < 2; ++k) {
    const NccPeak peak = match_wax_mark(gray, w, h, layout.wax_fiducials[k], layout);
    out.found[k] = peak.center;
    out.scores[k] = peak.score;
  }
  out.wax_found = out.scores[0] >= kWaxMinScore && out.scores[1] >= kWaxMinScore;
  if (!out.wax_found) {
    out.image = rectified;
    return out;
  }
  const Point2 e1 = layout.wax_fiducials[0];
  const Point2 e2 = layout.wax_fiducials[1];
  const Point2 f1 = out.found[0];
  const Point2 f2 = out.found[1];
  out.correction.angle = std::atan2(f2.y - f1.y, f2.x - f1.x) - std::atan2(e2.y - e1.y, e2.x - e1.x);
  out.correction.pivot = 0.5 * (e1 + e2);
  out.correction.shift = 0.5 * (f1 + f2) - out.correction.pivot;

  // Sub-quarter-pixel shifts are within matching noise; resampling would only blur.
  constexpr double kMinShift = 0.25;
  constexpr double kMinAngle = 0.05 * std::numbers::pi / 180.0;
  const double shift = std::hypot(out.correction.shift.x, out.correction.shift.y);
  out.applied = shift >= kMinShift || std::abs(out.correction.angle) >= kMinAngle;
  out.image = out.applied ? resample_rigid(rectified, out.correction) : rectified;
  return out;
}

Raster crop_salient(const Raster& rectified, const CardLayout& layout) {
  require(rectified.width() == layout.canonical_width && rectified.height() == layout.canonical_height,
          "crop expects a canonical-size raster");
  return rectified.sub(layout.crop_window);
}

RectifyResult rectify_pipeline(const Raster& image, const CardLayout& layout) {
  RectifyResult out;
  out.detections = detect_finder_patterns(image);
  out.correspondences = match_fiducials(out.detections, layout);
  const HomographyFit fit = fit_homography(out.correspondences);
  out.card_to_image = fit.h;
  out.mean_reprojection_error = fit.mean_residual;
  const Raster warped = warp_to_canonical(image, fit.h, layout);
  LaneAlignment aligned = refine_lane_alignment(warped, layout);
  out.wax_found = aligned.wax_found;
  if (aligned.wax_found) out.lane_correction = aligned.correction;
  if (!aligned.applied) out.lane_correction = {};
  out.rectified = std::move(aligned.image);
  out.crop = crop_salient(out.rectified, layout);
  return out;
}

}  // namespace pad
