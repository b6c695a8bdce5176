#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pad/features.hpp"
#include "pad/learn.hpp"
#include "pad/reagentsel.hpp"
#include "pad/rectify.hpp"
#include "pad/synth.hpp"

namespace pad {

struct FeatureSettings {
  int colorbank_k = 20;
  int dsift_k = 256;
  std::size_t colorbank_samples = 100'000;
  std::size_t dsift_samples = 100'000;
  KMeansOptions kmeans;
  DsiftOptions dsift;

  std::string digest() const;
};

struct DictionaryPair {
  std::optional<Dictionary> colorbank;
  std::optional<Dictionary> dsift;
};

/// Feature of one crop; dictionary kinds need the matching dictionary.
FeatureVector compute_feature(const Raster& crop, FeatureKind kind, const DictionaryPair& dicts,
                              const FeatureSettings& settings = {});

/// Key of a cached feature: (image digest, kind, dictionary digest).
std::string feature_cache_key(const Raster& crop, FeatureKind kind, const DictionaryPair& dicts);
std::string image_digest(const Raster& img);

/// Directory of CBOR feature records named by cache key.
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path dir);
  std::optional<FeatureVector> get(const std::string& key) const;
  void put(const std::string& key, const FeatureVector& f) const;
  std::optional<Dictionary> get_dictionary(const std::string& key) const;
  void put_dictionary(const std::string& key, const Dictionary& d) const;

 private:
  std::filesystem::path dir_;
};

/// Learns the dictionaries needed by `kinds` from training crops only.
DictionaryPair train_dictionaries(const std::vector<const Raster*>& train, const std::vector<FeatureKind>& kinds,
                                  const FeatureSettings& settings, std::uint64_t seed, int jobs,
                                  const FeatureCache* cache = nullptr);

enum class Perturbation { None, LanePermutation };
std::string to_string(Perturbation p);
Perturbation parse_perturbation(std::string_view name);

struct CropSet {
  std::vector<Raster> crops;
  std::vector<int> labels;
  std::vector<int> folds;  // fold in which each crop is tested
  std::vector<std::string> ids;
  std::vector<std::string> class_names;
  int lane_count = 12;
  std::vector<std::string> dropped;  // ids that failed rectification
};

struct ExperimentSettings {
  std::vector<FeatureKind> features{FeatureKind::Combined5796};
  std::vector<ClassifierKind> classifiers{ClassifierKind::Svm};
  std::vector<Perturbation> perturbations{Perturbation::None};
  int folds = 3;
  std::uint64_t seed = 0;
  bool tune_svm = true;
  double svm_c = 1.0;
  double svm_gamma = 1.0 / 1024;
  HyperGrid grid = HyperGrid::standard();
  FeatureSettings feature;
  int jobs = 1;

  std::string digest() const;
};

struct CellResult {
  FeatureKind feature = FeatureKind::Lab90;
  ClassifierKind classifier = ClassifierKind::Knn;
  Perturbation perturbation = Perturbation::None;
  std::vector<EvalResult> folds;
  std::vector<std::pair<double, double>> hyperparams;  // (C, gamma) per fold, SVM only
  double mean_accuracy = 0.0;
  double mean_correct = 0.0;
  double mean_total = 0.0;
  EvalResult pooled;  // counts summed over folds, confidence averaged
};

struct ExperimentReport {
  std::string config_digest;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> dropped;
  std::vector<CellResult> cells;

  const CellResult* find(FeatureKind f, ClassifierKind c, Perturbation p) const;
  std::string to_json() const;
  std::string to_table() const;
};

/// k-fold protocol over in-memory crops. Training crops keep canonical lane
/// order; with LanePermutation each test crop is rearranged by a per-fold
/// seeded derangement.
ExperimentReport run_experiment(const CropSet& data, const ExperimentSettings& settings,
                                const FeatureCache* cache = nullptr);

struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> cache_dir;
  ExperimentSettings settings;

  static ExperimentConfig from_json(const std::string& text, const std::filesystem::path& base = {});
  std::string to_json() const;
};

/// Loads and rectifies every manifest image (failures are recorded, not fatal).
CropSet load_crops(const DatasetManifest& manifest, int jobs);

/// Renders and rectifies a whole synthetic dataset without touching disk.
CropSet synthesize_crops(const DatasetConfig& config, std::uint64_t seed, int jobs);

/// Runs the protocol and writes report.json and report.txt.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Trains a complete crop-to-label model on the given crops.
TrainedModel train_model(const CropSet& data, const std::vector<std::size_t>& rows, FeatureKind feature,
                         const TrainOptions& options, const FeatureSettings& settings, const FeatureCache* cache = nullptr,
                         TrainReport* report = nullptr);

struct PipelineResult {
  Prediction prediction;
  std::string label_name;
  bool rectified = false;  // false when the input was already a crop
  std::optional<RectifyResult> rectify;
  Raster crop;
  Fingerprint fingerprint;
  FeatureVector feature;
};

/// Raw photo or salient crop (detected by size) to a prediction.
PipelineResult pipeline_predict(const Raster& image, const TrainedModel& model);

/// Single-reagent cards (9 lanes, triplicate by default) for every drug and
/// reagent, pushed through alignment refinement and blob extraction.
FingerprintDatabase build_fingerprint_database(const ReactionColorModel& model, int replicates, std::uint64_t seed,
                                               const DistortionParams& distortion, int jobs);

}  // namespace pad
