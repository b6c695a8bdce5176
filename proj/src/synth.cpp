#include "pad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <json.hpp>

#include "pad/blobs.hpp"
#include "pad/image_io.hpp"
#include "pad/reagentsel.hpp"

namespace pad {

const std::vector<std::string>& drug_names() {
  static const std::vector<std::string> names{
      "acetaminophen", "acetylsalicylic acid", "amodiaquine", "amoxicillin",     "ampicillin",
      "artesunate",    "azithromycin",         "calcium carbonate", "chloramphenicol", "chloroquine",
      "ciprofloxacin", "corn starch",          "DI water",    "diethylcarbamazine", "dried wheat starch",
      "ethambutol",    "isoniazid",            "penicillin G", "potato starch",   "primaquine",
      "quinine",       "rifampicin",           "streptomycin", "sulfadoxine",     "talc",
      "tetracycline"};
  return names;
}

const std::vector<std::string>& reagent_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (int i = 0; i < kReagentCount; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "reagent-%02d", i);
      out.emplace_back(buf);
    }
    return out;
  }();
  return names;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

RgbF hsv_to_rgb(double hue_deg, double s, double v) {
  hue_deg = std::fmod(hue_deg, 360.0);
  if (hue_deg < 0) hue_deg += 360.0;
  const double c = v * s;
  const double hp = hue_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0};
}

RgbF blend(const Rgb& paper, const RgbF& color, double f) {
  return {paper[0] + f * (color[0] - paper[0]), paper[1] + f * (color[1] - paper[1]), paper[2] + f * (color[2] - paper[2])};
}

RgbF to_f(const Rgb& c) { return {static_cast<double>(c[0]), static_cast<double>(c[1]), static_cast<double>(c[2])}; }

RgbF clamp_color(RgbF c) {
  for (double& v : c) v = std::clamp(v, 0.0, 255.0);
  return c;
}

constexpr std::array<double, 3> kGroupStrength{0.55, 0.775, 1.0};

// Ideal single-reagent fingerprint database (one noiseless replicate).
FingerprintDatabase ideal_database(const ReactionColorModel& model) {
  FingerprintDatabase db;
  const int nd = model.drug_count();
  const int nr = model.reagent_count();
  for (int i = 0; i < nd; ++i) db.drugs.push_back(i < kDrugCount ? drug_names()[i] : "drug-" + std::to_string(i));
  for (int j = 0; j < nr; ++j) db.reagents.push_back(j < kReagentCount ? reagent_names()[j] : "reagent-" + std::to_string(j));
  for (int i = 0; i < nd; ++i)
    for (int j = 0; j < nr; ++j) {
      Fingerprint fp;
      fp.drug = i;
      for (int lane = 0; lane < 9; ++lane) fp.lane_colors.push_back(model.lane_color(i, j, kGroupStrength[lane / 3]));
      db.records[{i, j}].push_back(std::move(fp));
    }
  return db;
}

std::vector<int> panel_from_model(const ReactionColorModel& model, int panel_size) {
  const DistanceMatrix m = build_distance_matrix(ideal_database(model));
  const Svd s = svd(m);
  std::vector<int> lanes = select_panel(m, s, panel_size);
  lanes.erase(lanes.begin());  // timer slot
  return lanes;
}

}  // namespace

RgbF ReactionColorModel::lane_color(int drug, int reagent, double strength) const {
  if (reagent == kTimerReagent) return blend(paper, to_f(timer_color), strength);
  return blend(paper, to_f(base.at(drug).at(reagent)), strength);
}

ReactionColorModel ReactionColorModel::generate(std::uint64_t seed, const GenerationParams& params) {
  require(params.drugs >= 1 && params.reagents >= 1, "color model needs at least one drug and reagent");
  std::mt19937_64 rng(seed);
  ReactionColorModel model;
  struct Hsv { double h, s, v; };
  std::vector<std::vector<Hsv>> palettes(static_cast<std::size_t>(params.reagents));
  for (auto& pal : palettes) {
    for (int k = 0; k < params.palette_per_reagent; ++k) {
      pal.push_back({uniform(rng, 0.0, 360.0), uniform(rng, 0.6, 0.95), uniform(rng, 0.45, 0.85)});
    }
  }
  auto draw_row = [&](std::vector<Rgb>& row) {
    row.assign(static_cast<std::size_t>(params.reagents), model.paper);
    for (int j = 0; j < params.reagents; ++j) {
      if (uniform(rng, 0.0, 1.0) >= params.reaction_probability) continue;
      const auto& pal = palettes[static_cast<std::size_t>(j)];
      const Hsv& c = pal[std::uniform_int_distribution<std::size_t>(0, pal.size() - 1)(rng)];
      const double hue = c.h + uniform(rng, -8.0, 8.0);
      const double s = std::clamp(c.s + uniform(rng, -0.06, 0.06), 0.55, 1.0);
      const double v = std::clamp(c.v + uniform(rng, -0.06, 0.06), 0.4, 0.9);
      row[static_cast<std::size_t>(j)] = to_rgb8(hsv_to_rgb(hue, s, v));
    }
  };
  model.base.resize(static_cast<std::size_t>(params.drugs));
  for (auto& row : model.base) draw_row(row);

  if (params.drugs < 2 || params.panel_size - 1 > params.reagents) return model;
  constexpr int kMaxRedraws = 1000;
  for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
    // The panel must hold every drug's best reagent: thin out singletons first.
    const DistanceMatrix m = build_distance_matrix(ideal_database(model));
    const Svd s = svd(m);
    std::vector<int> top1(static_cast<std::size_t>(params.drugs));
    std::vector<int> uses(static_cast<std::size_t>(params.reagents), 0);
    for (int i = 0; i < params.drugs; ++i) ++uses[top1[i] = rank_reagents_for_drug(m, s, i).front()];
    const auto distinct = std::count_if(uses.begin(), uses.end(), [](int u) { return u > 0; });
    if (distinct > params.panel_size - 1) {
      int drug = params.drugs - 1;
      while (drug > 0 && uses[top1[drug]] != 1) --drug;
      draw_row(model.base[static_cast<std::size_t>(drug)]);
      continue;
    }
    std::vector<int> panel = select_panel(m, s, params.panel_size);
    panel.erase(panel.begin());
    int offender = -1;
    for (int p = 0; p < params.drugs && offender < 0; ++p) {
      for (int q = p + 1; q < params.drugs; ++q) {
        double d2 = 0.0;
        for (int r : panel) {
          const RgbF a = model.lane_color(p, r, 1.0);
          const RgbF b = model.lane_color(q, r, 1.0);
          for (int c = 0; c < 3; ++c) d2 += 9.0 * (a[c] - b[c]) * (a[c] - b[c]);
        }
        if (std::sqrt(d2) < params.min_panel_separation) {
          offender = q;
          break;
        }
      }
    }
    if (offender < 0) return model;
    draw_row(model.base[static_cast<std::size_t>(offender)]);
  }
  fail(ErrorCode::Config, "could not draw a color table with separated drugs; lower min_panel_separation");
}

// ---------------------------------------------------------------------------

DistortionParams DistortionParams::none() {
  DistortionParams d;
  d.corner_jitter_px = 0.0;
  d.rotation_deg = 0.0;
  d.scale_min = 1.0;
  d.scale_max = 1.0;
  d.noise_sigma = 0.0;
  d.wax_offset_px = 0.0;
  d.wax_rotation_deg = 0.0;
  d.canvas_margin_px = 0;
  return d;
}

bool DistortionParams::is_geometric_identity() const {
  return corner_jitter_px == 0.0 && rotation_deg == 0.0 && scale_min == 1.0 && scale_max == 1.0 && canvas_margin_px == 0;
}

void DistortionParams::validate() const {
  if (corner_jitter_px < 0 || rotation_deg < 0 || noise_sigma < 0 || wax_offset_px < 0 || wax_rotation_deg < 0 ||
      canvas_margin_px < 0) {
    fail(ErrorCode::Config, "distortion ranges must be nonnegative");
  }
  if (!(scale_min > 0.0) || scale_max < scale_min) fail(ErrorCode::Config, "scale range must be positive and ordered");
}

bool BlobSpec::contains(double x, double y) const {
  const double u = (x - center.x) / axis_x;
  const double v = (y - center.y) / axis_y;
  const double r = std::sqrt(u * u + v * v);
  if (r > 1.0 + wobble_amp[0] + wobble_amp[1] + wobble_amp[2]) return false;
  const double phi = std::atan2(v, u);
  constexpr std::array<double, 3> harmonics{2.0, 3.0, 5.0};
  double limit = 1.0;
  for (int k = 0; k < 3; ++k) limit += wobble_amp[k] * std::sin(harmonics[k] * phi + wobble_phase[k]);
  return r <= limit;
}

Rect BlobSpec::bounds() const {
  const double grow = 1.0 + wobble_amp[0] + wobble_amp[1] + wobble_amp[2];
  const int x0 = static_cast<int>(std::floor(center.x - axis_x * grow)) - 1;
  const int y0 = static_cast<int>(std::floor(center.y - axis_y * grow)) - 1;
  const int x1 = static_cast<int>(std::ceil(center.x + axis_x * grow)) + 2;
  const int y1 = static_cast<int>(std::ceil(center.y + axis_y * grow)) + 2;
  return {x0, y0, x1 - x0, y1 - y0};
}

CardSpec CardSpec::panel(int drug, const std::vector<int>& panel_reagents) {
  CardSpec spec;
  spec.drug = drug;
  spec.lane_reagents.push_back(kTimerReagent);
  spec.lane_reagents.insert(spec.lane_reagents.end(), panel_reagents.begin(), panel_reagents.end());
  spec.lane_strength.assign(spec.lane_reagents.size(), 1.0);
  return spec;
}

CardSpec CardSpec::single_reagent(int drug, int reagent) {
  CardSpec spec;
  spec.drug = drug;
  for (int lane = 0; lane < 9; ++lane) {
    spec.lane_reagents.push_back(reagent);
    spec.lane_strength.push_back(kGroupStrength[lane / 3]);
  }
  return spec;
}

// ---------------------------------------------------------------------------

namespace {

constexpr Rgb kWaxColor{40, 45, 70};
constexpr Rgb kInkColor{22, 22, 26};
constexpr Rgb kSwipeColor{120, 118, 115};

class NoiseTable {
 public:
  NoiseTable() : values_(1 << 16) {
    std::mt19937_64 rng(0x5EED);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : values_) v = n(rng);
  }
  double operator[](std::uint64_t i) const { return values_[i & 0xFFFF]; }

 private:
  std::vector<double> values_;
};

const NoiseTable& noise_table() {
  static const NoiseTable table;
  return table;
}

BlobSpec random_blob(std::mt19937_64& rng, double ax_lo, double ax_hi, double ay_lo, double ay_hi, double wobble) {
  BlobSpec b;
  b.axis_x = uniform(rng, ax_lo, ax_hi);
  b.axis_y = uniform(rng, ay_lo, ay_hi);
  for (int k = 0; k < 3; ++k) {
    b.wobble_amp[k] = uniform(rng, 0.0, wobble / 3.0);
    b.wobble_phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  return b;
}

double reach(const BlobSpec& b, double axis) { return axis * (1.0 + b.wobble_amp[0] + b.wobble_amp[1] + b.wobble_amp[2]); }

LaneTruth plan_lane(std::mt19937_64& rng, int lane, const Rect& rect, const RgbF& ideal, const ReactionColorModel& model) {
  LaneTruth t;
  t.lane = lane;
  std::normal_distribution<double> jitter(0.0, model.jitter_sigma);
  t.planted = ideal;
  for (double& v : t.planted) v += model.jitter_sigma > 0 ? jitter(rng) : 0.0;
  t.planted = clamp_color(t.planted);

  const auto& sp = model.shape;
  BlobSpec blob = random_blob(rng, sp.axis_x_min, sp.axis_x_max, sp.axis_y_min, sp.axis_y_max, sp.boundary_wobble);
  const double cx = rect.x + (rect.w - 1) / 2.0;
  const double max_dx = std::max(0.0, (rect.w - 1) / 2.0 - reach(blob, blob.axis_x) - 1.0);
  blob.center.x = cx + uniform(rng, -std::min(2.0, max_dx), std::min(2.0, max_dx) + 1e-12);
  const double ry = reach(blob, blob.axis_y);
  const double y_lo = rect.y + ry + 4.0;
  const double y_hi = rect.bottom() - ry - 5.0;
  blob.center.y = y_hi > y_lo ? uniform(rng, y_lo, y_hi) : 0.5 * (rect.y + rect.bottom());
  t.reaction = blob;

  const double planted_diff = max_diff(t.planted);
  const RgbF paper = to_f(model.paper);
  std::vector<std::pair<double, double>> occupied{{blob.center.y - ry, blob.center.y + ry}};
  for (int slot = 0; slot < 2; ++slot) {
    const double roll = uniform(rng, 0.0, 1.0);
    BlobSpec res = random_blob(rng, sp.residual_axis_x_min, sp.residual_axis_x_max, sp.residual_axis_y_min,
                               sp.residual_axis_y_max, sp.boundary_wobble);
    const double f0 = uniform(rng, 0.35, 0.65);
    const double pos = uniform(rng, 0.0, 1.0);
    const double xoff = uniform(rng, -2.0, 2.0);
    if (roll >= model.residual_rate || planted_diff < model.residual_margin + 10.0) continue;

    // Fainter than the reaction blob by at least the configured margin.
    double f = f0;
    RgbF color = blend(model.paper, t.planted, f);
    while (f > 0.05 && max_diff(color) > planted_diff - model.residual_margin) {
      f -= 0.05;
      color = blend(model.paper, t.planted, f);
    }
    if (max_diff(color) > planted_diff - model.residual_margin) continue;
    (void)paper;

    // Free vertical gaps (with an 8 px clearance) that fit the residual.
    const double rr = reach(res, res.axis_y);
    std::sort(occupied.begin(), occupied.end());
    std::vector<std::pair<double, double>> gaps;
    double cursor = rect.y + 2.0;
    for (const auto& [a, b] : occupied) {
      if (a - 8.0 - cursor >= 2.0 * rr) gaps.emplace_back(cursor + rr, a - 8.0 - rr);
      cursor = std::max(cursor, b + 8.0);
    }
    if (rect.bottom() - 3.0 - cursor >= 2.0 * rr) gaps.emplace_back(cursor + rr, rect.bottom() - 3.0 - rr);
    if (gaps.empty()) continue;
    const auto& g = gaps[std::min(gaps.size() - 1, static_cast<std::size_t>(pos * gaps.size()))];
    res.center.y = g.first + (g.second - g.first) * uniform(rng, 0.0, 1.0);
    const double rmax = std::max(0.0, (rect.w - 1) / 2.0 - reach(res, res.axis_x) - 1.0);
    res.center.x = cx + std::clamp(xoff, -rmax, rmax);
    occupied.emplace_back(res.center.y - rr, res.center.y + rr);
    t.residuals.push_back(res);
    t.residual_colors.push_back(color);
  }
  return t;
}

// Draws a shape given in lane-frame crop coordinates through the wax transform.
template <typename Inside>
void draw_wax_shape(Raster& card, const CardLayout& layout, const RigidTransform& wax, const Rect& crop_bounds,
                    const Rgb& color, Inside inside) {
  const RigidTransform inv = wax.inverse();
  const double ox = layout.crop_window.x;
  const double oy = layout.crop_window.y;
  double minx = 1e18, miny = 1e18, maxx = -1e18, maxy = -1e18;
  for (int cy = 0; cy < 2; ++cy)
    for (int cx = 0; cx < 2; ++cx) {
      const Point2 p = wax.apply({ox + crop_bounds.x + cx * crop_bounds.w, oy + crop_bounds.y + cy * crop_bounds.h});
      minx = std::min(minx, p.x);
      maxx = std::max(maxx, p.x);
      miny = std::min(miny, p.y);
      maxy = std::max(maxy, p.y);
    }
  const int x0 = std::max(0, static_cast<int>(std::floor(minx)) - 2);
  const int y0 = std::max(0, static_cast<int>(std::floor(miny)) - 2);
  const int x1 = std::min(card.width() - 1, static_cast<int>(std::ceil(maxx)) + 2);
  const int y1 = std::min(card.height() - 1, static_cast<int>(std::ceil(maxy)) + 2);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const Point2 q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      if (inside(q.x - ox, q.y - oy)) card.set_pixel(x, y, color);
    }
}

bool in_rect(const Rect& r, double x, double y) {
  return x >= r.x - 0.5 && x < r.right() - 0.5 && y >= r.y - 0.5 && y < r.bottom() - 0.5;
}

void draw_finder(Raster& card, Point2 center, int module, Rgb ink) {
  const int cx = static_cast<int>(center.x);
  const int cy = static_cast<int>(center.y);
  const int half = (7 * module - 1) / 2;
  const int inner = (3 * module - 1) / 2;
  const int ring = (5 * module - 1) / 2;
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const int d = std::max(std::abs(dx), std::abs(dy));
      if (d <= inner || d > ring) card.set_pixel(cx + dx, cy + dy, ink);
    }
}

}  // namespace

void add_pixel_noise(Raster& img, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  const NoiseTable& table = noise_table();
  std::mt19937_64 rng(seed);
  auto data = img.data();
  std::uint64_t bits = 0;
  int left = 0;
  for (auto& v : data) {
    if (left == 0) {
      bits = rng();
      left = 4;
    }
    const double n = v + sigma * table[bits];
    bits >>= 16;
    --left;
    v = static_cast<std::uint8_t>(std::clamp(std::lround(n), 0L, 255L));
  }
}

RenderedCard render_canonical(const CardSpec& spec, const CardLayout& layout, const ReactionColorModel& model,
                              const DistortionParams& distortion, std::uint64_t seed) {
  distortion.validate();
  if (spec.drug < 0 || spec.drug >= model.drug_count()) {
    fail(ErrorCode::InvalidArgument, "unknown drug index " + std::to_string(spec.drug));
  }
  require(static_cast<int>(spec.lane_reagents.size()) == layout.lane_count &&
              spec.lane_strength.size() == spec.lane_reagents.size(),
          "card spec must name a reagent and strength for every active lane");
  std::mt19937_64 rng(seed);
  RenderedCard out;
  GroundTruth& truth = out.truth;

  const double wax_dx = uniform(rng, -1.0, 1.0) * distortion.wax_offset_px;
  const double wax_dy = uniform(rng, -1.0, 1.0) * distortion.wax_offset_px;
  const double wax_rot = uniform(rng, -1.0, 1.0) * distortion.wax_rotation_deg * std::numbers::pi / 180.0;
  truth.wax.angle = wax_rot;
  truth.wax.shift = {wax_dx, wax_dy};
  truth.wax.pivot = {layout.crop_window.x + layout.crop_window.w / 2.0, layout.crop_window.y + layout.crop_window.h / 2.0};
  truth.strength = uniform(rng, std::min(model.strength_min, 1.0), 1.0);

  for (int lane = 0; lane < layout.lane_count; ++lane) {
    const int reagent = spec.lane_reagents[lane];
    const double s = spec.lane_strength[lane] * truth.strength;
    if (reagent != kTimerReagent) require(reagent >= 0 && reagent < model.reagent_count(), "unknown reagent index");
    LaneTruth t = plan_lane(rng, lane, layout.lane_rects[lane], model.lane_color(spec.drug, reagent, s), model);
    t.reagent = reagent;
    truth.lanes.push_back(std::move(t));
  }
  // The timer slot of a single-reagent card is printed but not analyzed.
  LaneTruth timer_extra;
  const bool extra_timer = !layout.timer_lane().has_value();
  if (extra_timer) {
    timer_extra = plan_lane(rng, -1, layout.slot_rects[layout.timer_slot],
                            model.lane_color(spec.drug, kTimerReagent, truth.strength), model);
    timer_extra.reagent = kTimerReagent;
  }

  Raster card(layout.canonical_width, layout.canonical_height, distortion.background);
  // Wax layer: lane separators, top bar, alignment marks, then reactions.
  const int sep_bottom = layout.swipe_line_y + 10;
  std::vector<Rect> wax_rects;
  wax_rects.push_back({0, 0, 1, sep_bottom});
  wax_rects.push_back({layout.crop_window.w - 1, 0, 1, sep_bottom});
  for (int s = 1; s < kLaneSlots; ++s) wax_rects.push_back({layout.slot_rects[s].x - 2, 0, 2, sep_bottom});
  wax_rects.push_back({0, 2, layout.crop_window.w, 4});
  for (const Point2& m : layout.wax_fiducials) {
    const int half = layout.wax_mark_size / 2;
    wax_rects.push_back({static_cast<int>(m.x) - half - layout.crop_window.x, static_cast<int>(m.y) - half - layout.crop_window.y,
                         layout.wax_mark_size, layout.wax_mark_size});
  }
  for (const Rect& r : wax_rects) {
    draw_wax_shape(card, layout, truth.wax, r, kWaxColor, [&](double x, double y) { return in_rect(r, x, y); });
  }
  auto draw_lane = [&](const LaneTruth& t) {
    for (std::size_t k = 0; k < t.residuals.size(); ++k) {
      const BlobSpec& b = t.residuals[k];
      draw_wax_shape(card, layout, truth.wax, b.bounds(), to_rgb8(t.residual_colors[k]),
                     [&](double x, double y) { return b.contains(x, y); });
    }
    const BlobSpec& b = t.reaction;
    draw_wax_shape(card, layout, truth.wax, b.bounds(), to_rgb8(t.planted),
                   [&](double x, double y) { return b.contains(x, y); });
  };
  for (const auto& t : truth.lanes) draw_lane(t);
  if (extra_timer) draw_lane(timer_extra);

  // Ink layer: finder patterns, corner marks, swipe line.
  for (const Point2& c : layout.finder_centers) draw_finder(card, c, layout.finder_module, kInkColor);
  for (const Point2& c : layout.corner_marks) draw_finder(card, c, layout.corner_module, kInkColor);
  const int swipe_y = layout.crop_window.y + layout.swipe_line_y + 2;
  for (int y = swipe_y; y < swipe_y + 3; ++y)
    for (int x = layout.crop_window.x; x < layout.crop_window.right(); ++x) card.set_pixel(x, y, kSwipeColor);

  out.image = std::move(card);
  return out;
}

RenderedCard render_card(const CardSpec& spec, const CardLayout& layout, const ReactionColorModel& model,
                         const DistortionParams& distortion, std::uint64_t seed) {
  RenderedCard out = render_canonical(spec, layout, model, distortion, seed);
  std::mt19937_64 rng(splitmix64(seed ^ 0xC0FFEEULL));
  const double scale = uniform(rng, distortion.scale_min, distortion.scale_max + 1e-300);
  const double rot = uniform(rng, -1.0, 1.0) * distortion.rotation_deg * std::numbers::pi / 180.0;
  std::array<Point2, 4> jitter{};
  for (auto& j : jitter) j = {uniform(rng, -1.0, 1.0) * distortion.corner_jitter_px, uniform(rng, -1.0, 1.0) * distortion.corner_jitter_px};
  const std::uint64_t noise_seed = rng();

  if (!distortion.is_geometric_identity()) {
    const double w = layout.canonical_width;
    const double h = layout.canonical_height;
    const std::array<Point2, 4> corners{Point2{-0.5, -0.5}, Point2{w - 0.5, -0.5}, Point2{w - 0.5, h - 0.5}, Point2{-0.5, h - 0.5}};
    const Point2 mid{(w - 1) / 2.0, (h - 1) / 2.0};
    std::array<PointPair, 4> pairs{};
    double minx = 1e18, miny = 1e18, maxx = -1e18, maxy = -1e18;
    for (int i = 0; i < 4; ++i) {
      const Point2 d = corners[i] - mid;
      const Point2 q{scale * (std::cos(rot) * d.x - std::sin(rot) * d.y) + jitter[i].x,
                     scale * (std::sin(rot) * d.x + std::cos(rot) * d.y) + jitter[i].y};
      pairs[i] = {corners[i], q};
      minx = std::min(minx, q.x);
      maxx = std::max(maxx, q.x);
      miny = std::min(miny, q.y);
      maxy = std::max(maxy, q.y);
    }
    const double margin = distortion.canvas_margin_px;
    const double tx = margin - (minx + 0.5);
    const double ty = margin - (miny + 0.5);
    for (auto& p : pairs) p.dst = p.dst + Point2{tx, ty};
    const int cw = static_cast<int>(std::ceil(maxx + 0.5 + tx + margin));
    const int ch = static_cast<int>(std::ceil(maxy + 0.5 + ty + margin));
    const Homography hmat = estimate_homography(pairs);
    const Homography inv = hmat.inverse();
    Raster photo(cw, ch, distortion.backdrop);
    for (int y = 0; y < ch; ++y) {
      std::uint8_t* row = photo.row(y);
      for (int x = 0; x < cw; ++x) {
        const Point2 q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
        if (auto c = sample_bilinear(out.image, q.x, q.y)) {
          const Rgb v = to_rgb8(*c);
          row[3 * x] = v[0];
          row[3 * x + 1] = v[1];
          row[3 * x + 2] = v[2];
        }
      }
    }
    out.image = std::move(photo);
    out.truth.card_to_image = hmat;
  }
  add_pixel_noise(out.image, distortion.noise_sigma, noise_seed);
  return out;
}

Raster permute_lanes(const Raster& crop, const CardLayout& layout, const std::vector<int>& perm) {
  const int n = layout.lane_count;
  if (static_cast<int>(perm.size()) != n) fail(ErrorCode::InvalidArgument, "permutation length must equal lane count");
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) fail(ErrorCode::InvalidArgument, "lane permutation is not a bijection");
    seen[static_cast<std::size_t>(p)] = true;
  }
  require(crop.width() == layout.crop_window.w && crop.height() == layout.crop_window.h, "crop size does not match layout");
  Raster out = crop;
  for (int i = 0; i < n; ++i) out.paste(crop.sub(layout.lane_rects[i]), layout.lane_rects[perm[i]].x, layout.lane_rects[perm[i]].y);
  return out;
}

std::vector<int> random_derangement(int n, std::uint64_t seed) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[i] = i;
  if (n < 2) return p;
  std::mt19937_64 rng(seed);
  for (;;) {
    std::shuffle(p.begin(), p.end(), rng);
    bool fixed = false;
    for (int i = 0; i < n; ++i) fixed = fixed || p[i] == i;
    if (!fixed) return p;
  }
}

// ---------------------------------------------------------------------------

std::uint64_t image_seed(std::uint64_t seed, std::size_t index) { return splitmix64(seed * 0x100000001B3ULL + index); }

std::string DatasetConfig::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["drugs"] = drugs;
  j["images_per_drug"] = images_per_drug;
  j["lane_count"] = lane_count;
  j["folds"] = folds;
  j["color_seed"] = color_seed;
  j["reaction_probability"] = color_params.reaction_probability;
  j["palette_per_reagent"] = color_params.palette_per_reagent;
  j["min_panel_separation"] = color_params.min_panel_separation;
  j["jitter_sigma"] = jitter_sigma;
  j["residual_margin"] = residual_margin;
  j["residual_rate"] = residual_rate;
  j["strength_min"] = strength_min;
  const auto& d = distortion;
  j["distortion"] = {{"corner_jitter_px", d.corner_jitter_px}, {"rotation_deg", d.rotation_deg},
                     {"scale_min", d.scale_min},               {"scale_max", d.scale_max},
                     {"noise_sigma", d.noise_sigma},           {"background", d.background},
                     {"backdrop", d.backdrop},                 {"wax_offset_px", d.wax_offset_px},
                     {"wax_rotation_deg", d.wax_rotation_deg}, {"canvas_margin_px", d.canvas_margin_px}};
  if (panel) j["panel"] = *panel;
  return j.dump(1);
}

DatasetConfig DatasetConfig::from_json(const std::string& text) {
  DatasetConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.drugs = j.value("drugs", c.drugs);
    c.images_per_drug = j.value("images_per_drug", c.images_per_drug);
    c.lane_count = j.value("lane_count", c.lane_count);
    c.folds = j.value("folds", c.folds);
    c.color_seed = j.value("color_seed", c.color_seed);
    c.color_params.reaction_probability = j.value("reaction_probability", c.color_params.reaction_probability);
    c.color_params.palette_per_reagent = j.value("palette_per_reagent", c.color_params.palette_per_reagent);
    c.color_params.min_panel_separation = j.value("min_panel_separation", c.color_params.min_panel_separation);
    c.jitter_sigma = j.value("jitter_sigma", c.jitter_sigma);
    c.residual_margin = j.value("residual_margin", c.residual_margin);
    c.residual_rate = j.value("residual_rate", c.residual_rate);
    c.strength_min = j.value("strength_min", c.strength_min);
    if (j.contains("distortion")) {
      const auto& dj = j["distortion"];
      auto& d = c.distortion;
      d.corner_jitter_px = dj.value("corner_jitter_px", d.corner_jitter_px);
      d.rotation_deg = dj.value("rotation_deg", d.rotation_deg);
      d.scale_min = dj.value("scale_min", d.scale_min);
      d.scale_max = dj.value("scale_max", d.scale_max);
      d.noise_sigma = dj.value("noise_sigma", d.noise_sigma);
      d.background = dj.value("background", d.background);
      d.backdrop = dj.value("backdrop", d.backdrop);
      d.wax_offset_px = dj.value("wax_offset_px", d.wax_offset_px);
      d.wax_rotation_deg = dj.value("wax_rotation_deg", d.wax_rotation_deg);
      d.canvas_margin_px = dj.value("canvas_margin_px", d.canvas_margin_px);
    }
    if (j.contains("panel")) c.panel = j["panel"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::Config, std::string("malformed generator config: ") + ex.what());
  }
  if (c.drugs < 1 || c.drugs > kDrugCount) fail(ErrorCode::Config, "drugs must be in 1..26");
  if (c.images_per_drug < 1) fail(ErrorCode::Config, "images_per_drug must be >= 1");
  if (c.lane_count != 12) fail(ErrorCode::Config, "datasets are rendered on 12-lane panel cards");
  if (c.folds < 1) fail(ErrorCode::Config, "folds must be >= 1");
  c.distortion.validate();
  return c;
}

std::string DatasetConfig::digest() const { return Digest().update(to_json()).hex(); }

ReactionColorModel make_color_model(const DatasetConfig& config) {
  ReactionColorModel::GenerationParams params = config.color_params;
  params.drugs = kDrugCount;
  ReactionColorModel model = ReactionColorModel::generate(config.color_seed, params);
  model.paper = config.distortion.background;
  model.jitter_sigma = config.jitter_sigma;
  model.residual_margin = config.residual_margin;
  model.residual_rate = config.residual_rate;
  model.strength_min = config.strength_min;
  return model;
}

std::vector<int> resolve_panel(const DatasetConfig& config, const ReactionColorModel& model) {
  if (config.panel) {
    if (static_cast<int>(config.panel->size()) != kLaneSlots - 1) fail(ErrorCode::Config, "panel must list 11 reagents");
    for (int r : *config.panel) {
      if (r < 0 || r >= model.reagent_count()) fail(ErrorCode::Config, "panel reagent out of range");
    }
    return *config.panel;
  }
  return panel_from_model(model, kLaneSlots);
}

DatasetManifest plan_dataset(const DatasetConfig& config, std::uint64_t seed) {
  DatasetManifest m;
  m.lane_count = config.lane_count;
  m.folds = config.folds;
  m.seed = seed;
  m.generator_digest = config.digest();
  for (int d = 0; d < config.drugs; ++d) m.drugs.push_back(drug_names()[d]);
  std::vector<int> labels;
  for (int d = 0; d < config.drugs; ++d) {
    for (int k = 0; k < config.images_per_drug; ++k) {
      const std::size_t index = m.entries.size();
      char id[32];
      std::snprintf(id, sizeof id, "img_%04zu", index);
      ManifestEntry e;
      e.id = id;
      e.image_path = std::string("images/") + id + ".png";
      e.drug_label = drug_names()[d];
      e.drug_index = d;
      e.seed = image_seed(seed, index);
      m.entries.push_back(std::move(e));
      labels.push_back(d);
    }
  }
  const std::vector<int> folds = stratified_folds(labels, config.folds, splitmix64(seed ^ 0xF01DULL));
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    m.entries[i].fold = folds[i];
    m.entries[i].split = folds[i] == 0 ? "test" : "train";
  }
  return m;
}

DatasetManifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir,
                                 int jobs) {
  DatasetManifest m = plan_dataset(config, seed);
  const ReactionColorModel model = make_color_model(config);
  m.panel = resolve_panel(config, model);
  m.base_dir = out_dir;
  const CardLayout layout = canonical_layout(config.lane_count);
  try {
    std::filesystem::create_directories(out_dir / "images");
  } catch (const std::filesystem::filesystem_error& e) {
    fail(ErrorCode::Io, e.what());
  }
  parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
    const ManifestEntry& e = m.entries[i];
    const RenderedCard card = render_card(CardSpec::panel(e.drug_index, m.panel), layout, model, config.distortion, e.seed);
    write_png(m.image_file(e), card.image);
  });
  m.validate();
  m.save(out_dir / "manifest.json");
  return m;
}

}  // namespace pad
