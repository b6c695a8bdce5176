#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pad/core.hpp"

namespace pad {

/// Projective map, stored normalized so that h(2,2) == 1.
struct Homography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();

  static Homography identity() { return {}; }
  static Homography from_matrix(const Eigen::Matrix3d& m);

  Point2 apply(Point2 p) const;
  Homography inverse() const;
  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend Homography operator*(const Homography& a, const Homography& b) { return from_matrix(a.h * b.h); }
};

/// Rotation by `angle` (radians) about `pivot`, followed by a shift.
/// apply(p) = pivot + shift + R(angle) * (p - pivot).
struct RigidTransform {
  double angle = 0.0;
  Point2 shift{};
  Point2 pivot{};

  Point2 apply(Point2 p) const;
  RigidTransform inverse() const;
  bool is_identity() const { return angle == 0.0 && shift.x == 0.0 && shift.y == 0.0; }
};

enum class FiducialKind { Finder, CornerMark, Wax };

struct FiducialDetection {
  Point2 center{};
  FiducialKind kind = FiducialKind::Finder;
  double score = 0.0;        // [0, 1]
  double module_size = 0.0;  // estimated width of one 1:1:3:1:1 module, pixels
};

struct PointPair {
  Point2 src{};
  Point2 dst{};
};

/// Optional outlier rejection hook for estimate_homography: given the pairs
/// and a first fit, return a keep-mask. Left empty, all pairs are used.
using OutlierFilter = std::function<std::vector<bool>(std::span<const PointPair>, const Homography&)>;

struct HomographyFit {
  Homography h;
  std::vector<double> residuals;  // |h(src) - dst| per used pair
  double mean_residual = 0.0;
  double max_residual = 0.0;
};

/// Normalized DLT: builds the 2n x 9 system, takes its null vector from the
/// SVD, and denormalizes. With more than four pairs this is the algebraic
/// least-squares fit. Throws Error(DegenerateFiducials) on rank deficiency.
HomographyFit fit_homography(std::span<const PointPair> pairs, const OutlierFilter& filter = {});
inline Homography estimate_homography(std::span<const PointPair> pairs, const OutlierFilter& filter = {}) {
  return fit_homography(pairs, filter).h;
}

/// Finds 1:1:3:1:1 finder-style marks. Returns at most six detections,
/// best score first; throws Error(NotEnoughFiducials) below four.
std::vector<FiducialDetection> detect_finder_patterns(const Raster& image);

/// Labels detections against the layout (three largest are the finders,
/// the rest corner marks) and returns canonical -> image correspondences.
std::vector<PointPair> match_fiducials(std::vector<FiducialDetection>& detections, const CardLayout& layout);

/// Inverse-mapped bilinear warp into the canonical frame. `card_to_image`
/// maps canonical card coordinates to source image coordinates.
Raster warp_to_canonical(const Raster& image, const Homography& card_to_image, const CardLayout& layout);

struct LaneAlignment {
  Raster image;                  // corrected (or unchanged) canonical raster
  bool wax_found = false;        // false: WaxMarkNotFound, image is the input
  bool applied = false;          // false when the correction was negligible
  RigidTransform correction;     // maps canonical lane-frame points to where they were found
  std::array<Point2, 2> found{};
  std::array<double, 2> scores{};
};

/// Template-matches the two wax marks within +-15 px of their expected
/// positions (NCC), and resamples the image to undo the measured rigid
/// offset of the wax layer. Marks scoring below 0.5 leave the image as is.
LaneAlignment refine_lane_alignment(const Raster& rectified, const CardLayout& layout);

inline constexpr int kWaxSearchRadius = 15;
inline constexpr double kWaxMinScore = 0.5;

/// Exact 636 x 490 copy of the layout's crop window.
Raster crop_salient(const Raster& rectified, const CardLayout& layout);

struct RectifyResult {
  Raster crop;
  Raster rectified;
  Homography card_to_image;
  std::vector<FiducialDetection> detections;
  std::vector<PointPair> correspondences;
  double mean_reprojection_error = 0.0;
  bool wax_found = false;
  RigidTransform lane_correction;
};

/// detect -> match -> estimate -> warp -> refine -> crop.
RectifyResult rectify_pipeline(const Raster& image, const CardLayout& layout);

}  // namespace pad
