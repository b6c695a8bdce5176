#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pad/core.hpp"
#include "pad/dataset.hpp"
#include "pad/rectify.hpp"

namespace pad {

inline constexpr int kDrugCount = 26;
inline constexpr int kReagentCount = 24;
inline constexpr int kTimerReagent = -1;

const std::vector<std::string>& drug_names();
const std::vector<std::string>& reagent_names();

struct BlobShapeParams {
  double axis_x_min = 14.0;
  double axis_x_max = 21.0;
  double axis_y_min = 90.0;
  double axis_y_max = 140.0;
  double residual_axis_x_min = 8.0;
  double residual_axis_x_max = 16.0;
  double residual_axis_y_min = 15.0;
  double residual_axis_y_max = 35.0;
  double boundary_wobble = 0.08;  // relative radius perturbation
};

/// Per drug/reagent reaction colors plus the noise model used when a card is
/// rendered. A base color equal to the paper color means "no reaction".
struct ReactionColorModel {
  std::vector<std::vector<Rgb>> base;  // [drug][reagent]
  Rgb timer_color{232, 128, 168};
  Rgb paper{245, 243, 238};
  double jitter_sigma = 6.0;
  double residual_margin = 20.0;
  double residual_rate = 0.5;   // each of two residual slots is filled with this probability
  double strength_min = 0.8;    // per-card reaction strength is uniform in [strength_min, 1]
  BlobShapeParams shape;

  struct GenerationParams {
    int drugs = kDrugCount;
    int reagents = kReagentCount;
    double reaction_probability = 0.55;
    int palette_per_reagent = 3;
    double min_panel_separation = 150.0;
    int panel_size = 12;
  };

  /// Seeded color table: each reagent reacts through a small palette of
  /// hues; rows are redrawn until every drug pair is separated on the
  /// panel selected from the table.
  static ReactionColorModel generate(std::uint64_t seed, const GenerationParams& params);
  static ReactionColorModel generate(std::uint64_t seed) { return generate(seed, GenerationParams{}); }

  int drug_count() const { return static_cast<int>(base.size()); }
  int reagent_count() const { return base.empty() ? 0 : static_cast<int>(base[0].size()); }
  /// Color of a lane at reaction strength s in [0, 1] (0 = paper).
  RgbF lane_color(int drug, int reagent, double strength) const;
};

struct DistortionParams {
  double corner_jitter_px = 40.0;
  double rotation_deg = 10.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double noise_sigma = 5.0;
  Rgb background{245, 243, 238};  // card paper
  Rgb backdrop{58, 52, 48};       // table behind the card
  double wax_offset_px = 3.0;     // wax layer misprint, per axis
  double wax_rotation_deg = 0.3;
  int canvas_margin_px = 24;

  /// No warp, no noise, no wax misprint: the render is the canonical card.
  static DistortionParams none();
  bool is_geometric_identity() const;
  void validate() const;
};

/// Perturbed ellipse in crop coordinates of the lane (wax) frame.
struct BlobSpec {
  Point2 center{};
  double axis_x = 1.0;
  double axis_y = 1.0;
  std::array<double, 3> wobble_amp{};
  std::array<double, 3> wobble_phase{};

  bool contains(double x, double y) const;
  Rect bounds() const;
};

struct LaneTruth {
  int lane = 0;
  int reagent = 0;  // kTimerReagent for the timer lane
  RgbF planted{};   // reaction blob color after strength and jitter
  BlobSpec reaction;
  std::vector<BlobSpec> residuals;
  std::vector<RgbF> residual_colors;
};

struct GroundTruth {
  Homography card_to_image;   // canonical card -> rendered image
  RigidTransform wax;         // lane frame -> printed position on the card
  std::vector<LaneTruth> lanes;
  double strength = 1.0;
};

struct CardSpec {
  int drug = 0;
  std::vector<int> lane_reagents;     // per active lane; kTimerReagent for the timer
  std::vector<double> lane_strength;  // concentration factor per active lane

  /// Panel card: timer in lane 0, then the panel reagents.
  static CardSpec panel(int drug, const std::vector<int>& panel_reagents);
  /// Single-reagent card: nine lanes in light/medium/heavy groups.
  static CardSpec single_reagent(int drug, int reagent);
};

struct RenderedCard {
  Raster image;
  GroundTruth truth;
};

/// Renders a photographed card. Deterministic in (spec, layout, model, distortion, seed).
RenderedCard render_card(const CardSpec& spec, const CardLayout& layout, const ReactionColorModel& model,
                         const DistortionParams& distortion, std::uint64_t seed);

/// The un-warped canonical artwork with reactions (no camera noise).
RenderedCard render_canonical(const CardSpec& spec, const CardLayout& layout, const ReactionColorModel& model,
                              const DistortionParams& distortion, std::uint64_t seed);

/// Adds zero-mean Gaussian pixel noise in place.
void add_pixel_noise(Raster& img, double sigma, std::uint64_t seed);

/// Moves lane contents: output lane perm[i] receives input lane i.
Raster permute_lanes(const Raster& crop, const CardLayout& layout, const std::vector<int>& perm);

/// Random permutation with no fixed points (for n >= 2).
std::vector<int> random_derangement(int n, std::uint64_t seed);

struct DatasetConfig {
  int drugs = kDrugCount;
  int images_per_drug = 30;
  int lane_count = 12;
  int folds = 3;
  std::uint64_t color_seed = 7;
  ReactionColorModel::GenerationParams color_params;
  double jitter_sigma = 6.0;
  double residual_margin = 20.0;
  double residual_rate = 0.5;
  double strength_min = 0.8;
  DistortionParams distortion;
  std::optional<std::vector<int>> panel;  // 11 reagent indices; derived when absent

  std::string digest() const;
  static DatasetConfig from_json(const std::string& text);
  std::string to_json() const;
};

/// Color model described by the config (seeded table + noise settings).
ReactionColorModel make_color_model(const DatasetConfig& config);
/// The panel used for the config: explicit, or selected from the color table.
std::vector<int> resolve_panel(const DatasetConfig& config, const ReactionColorModel& model);

/// Seed of image `index` in a dataset generated with `seed`.
std::uint64_t image_seed(std::uint64_t seed, std::size_t index);

/// Writes raw card photos to out_dir/images and returns the manifest
/// (also written to out_dir/manifest.json).
DatasetManifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir,
                                 int jobs = 0);

/// Manifest entries without any images (used by in-memory experiments).
DatasetManifest plan_dataset(const DatasetConfig& config, std::uint64_t seed);

}  // namespace pad
