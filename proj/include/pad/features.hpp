#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pad/core.hpp"

namespace pad {

enum class FeatureKind { Lab90, Gist512, ColorBank420, DenseSift5376, Combined5796 };

std::size_t feature_length(FeatureKind kind);
std::string to_string(FeatureKind kind);
/// Accepts "lab", "lab90", "gist", "colorbank", "dsift", "combined", ...
FeatureKind parse_feature_kind(std::string_view name);
bool needs_dictionary(FeatureKind kind);

struct FeatureVector {
  FeatureKind kind = FeatureKind::Lab90;
  std::vector<double> values;

  FeatureVector() = default;
  /// Throws InvalidArgument unless the length matches the kind and all
  /// values are finite.
  FeatureVector(FeatureKind kind, std::vector<double> values);
};

/// Concatenation, color bank first.
FeatureVector combine(const FeatureVector& color_bank, const FeatureVector& dense_sift);

// --- global descriptors ----------------------------------------------------

inline constexpr int kLabBins = 30;

FeatureVector lab_histogram(const Raster& crop);

/// Gray image resampled by area averaging.
Eigen::MatrixXd resize_gray(const Raster& img, int width, int height);

inline constexpr int kGistSize = 256;
inline constexpr int kGistScales = 4;
inline constexpr int kGistOrientations = 8;
inline constexpr int kGistGrid = 4;

/// Raw (unnormalized) grid energies, ordered scale, orientation, cell.
std::vector<double> gist_responses(const Raster& img);
FeatureVector gist(const Raster& crop);

// --- local descriptors -----------------------------------------------------

inline constexpr int kColorNames = 11;

enum class ColorName : std::uint8_t { Black, Blue, Brown, Grey, Green, Orange, Pink, Purple, Red, White, Yellow };

const std::array<Rgb, kColorNames>& color_name_prototypes();
std::string_view to_string(ColorName name);
ColorName nearest_color_name(Rgb rgb);

struct NameMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> names;  // row-major ColorName indices
  ColorName at(int x, int y) const { return static_cast<ColorName>(names[static_cast<std::size_t>(y) * width + x]); }
};

NameMap color_name_map(const Raster& crop);

using DescriptorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LocalDescriptorSet {
  DescriptorMatrix descriptors;  // n x d
  std::vector<Point2> positions;  // patch centers, crop coordinates
  std::vector<int> patch_sizes;
  int image_width = 0;
  int image_height = 0;

  Eigen::Index size() const { return descriptors.rows(); }
};

inline const std::vector<int> kColorPatchSizes{8, 16, 24};

/// Dense grid of patches per size with stride size/2.
std::size_t patch_grid_count(int width, int height, int size, int stride);

LocalDescriptorSet extract_patch_histograms(const NameMap& names, const std::vector<int>& sizes = kColorPatchSizes);

struct DsiftOptions {
  int stride = 8;
  std::vector<int> patch_sizes{16, 24, 32};
  /// Descriptors whose raw L2 norm is below this (per pixel of the patch
  /// area) are set to zero instead of normalized.
  double min_contrast = 0.0;
};

LocalDescriptorSet dense_sift_descriptors(const Raster& crop, const DsiftOptions& options = {});

// --- encoding --------------------------------------------------------------

struct Dictionary {
  FeatureKind kind = FeatureKind::ColorBank420;
  Eigen::MatrixXd words;  // k x d
  std::string training_digest;
  std::vector<double> objective_history;

  int k() const { return static_cast<int>(words.rows()); }
  int dim() const { return static_cast<int>(words.cols()); }
  std::string digest() const;

  std::string to_json() const;
  static Dictionary from_json(const std::string& text);
};

struct KMeansOptions {
  int max_iterations = 300;
  double tolerance = 1e-6;  // largest centroid movement
};

/// k-means++ seeding followed by Lloyd iterations. Throws InvalidArgument if
/// there are fewer distinct rows than k.
Dictionary kmeans(const DescriptorMatrix& data, int k, std::uint64_t seed, const KMeansOptions& options = {});

/// Uniform seeded sample of at most max_rows rows.
DescriptorMatrix sample_rows(const std::vector<const DescriptorMatrix*>& sets, std::size_t max_rows, std::uint64_t seed);

inline constexpr int kLlcNeighbors = 5;
inline constexpr double kLlcLambda = 1e-4;

struct SparseCode {
  std::vector<int> index;
  std::vector<double> weight;
};

SparseCode llc_encode(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::MatrixXd& words, int kappa = kLlcNeighbors,
                      double lambda = kLlcLambda);
std::vector<SparseCode> llc_encode_all(const DescriptorMatrix& x, const Eigen::MatrixXd& words, int kappa = kLlcNeighbors,
                                       double lambda = kLlcLambda);

inline constexpr int kPyramidCells = 21;  // 1 + 4 + 16

/// Max of the dense codes per pyramid cell and word; empty cells are zero.
std::vector<double> spatial_pyramid_max_pool(const std::vector<SparseCode>& codes, const std::vector<Point2>& positions, int k,
                                             int width, int height);

/// Pyramid cell indices (level-major, row-major within level) containing p.
std::array<int, 3> pyramid_cells(Point2 p, int width, int height);

FeatureVector color_bank(const Raster& crop, const Dictionary& dictionary);
FeatureVector color_bank(const LocalDescriptorSet& histograms, const Dictionary& dictionary);
FeatureVector dense_sift_feature(const Raster& crop, const Dictionary& dictionary, const DsiftOptions& options = {});
FeatureVector dense_sift_feature(const LocalDescriptorSet& descriptors, const Dictionary& dictionary);

/// Binary (CBOR) feature cache record {"kind":..., "values":[...]}.
std::vector<std::uint8_t> encode_feature(const FeatureVector& f);
FeatureVector decode_feature(std::span<const std::uint8_t> bytes);

}  // namespace pad
