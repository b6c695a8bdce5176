#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pad/dataset.hpp"
#include "pad/features.hpp"

namespace pad {

struct LabeledSet {
  std::vector<FeatureVector> vectors;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return vectors.size(); }
  FeatureKind kind() const;
  /// Throws InvalidArgument on length mismatch or mixed kinds.
  void validate() const;
  Eigen::MatrixXd matrix() const;
};

/// Per-dimension z-scoring with training statistics; constant dimensions
/// get unit scale.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x);
  static Standardizer identity(Eigen::Index dim);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

struct Prediction {
  int label = -1;
  std::vector<double> confidence;  // per class, sums to 1
};

/// Squared Euclidean distances between the rows of a and the rows of b.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// --- nearest neighbor ------------------------------------------------------

struct KnnModel {
  Eigen::MatrixXd exemplars;
  std::vector<int> labels;
  int class_count = 0;
};

KnnModel knn_fit(const Eigen::MatrixXd& x, std::span<const int> labels, int class_count);
/// 1-NN: the lowest-index exemplar at minimum distance; one-hot confidence.
Prediction knn_predict(const KnnModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& query);
std::vector<Prediction> knn_predict_all(const KnnModel& model, const Eigen::MatrixXd& queries);

// --- support vector machine ------------------------------------------------

double rbf_kernel(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::Ref<const Eigen::RowVectorXd>& y, double gamma);

struct SmoResult {
  std::vector<double> alpha;
  double bias = 0.0;
  long iterations = 0;
  bool converged = false;
  double violation = 0.0;  // max violating-pair gap at exit
};

/// Binary soft-margin dual on a precomputed kernel matrix, y in {-1, +1}.
/// The first index is the maximal KKT violator; the second is drawn (seeded)
/// among the indices that violate jointly with it by more than tol.
SmoResult smo_solve(const Eigen::MatrixXd& kernel, std::span<const int> y, double c, double tol, std::uint64_t seed,
                    long max_iterations = 10'000'000);

/// Max over I_up of -y G minus min over I_low of -y G.
double kkt_gap(const Eigen::MatrixXd& kernel, std::span<const int> y, std::span<const double> alpha, double c);

struct PairSvm {
  int class_a = 0;  // +1 side
  int class_b = 0;  // -1 side
  std::vector<int> support;   // rows of SvmModel::vectors
  std::vector<double> coef;   // alpha * y
  double bias = 0.0;
};

struct SvmModel {
  double c = 1.0;
  double gamma = 1.0;
  int class_count = 0;
  Eigen::MatrixXd vectors;  // unique support vectors over all pairs
  std::vector<PairSvm> pairs;
};

struct SvmOptions {
  double c = 1.0;
  double gamma = 1.0;
  double tol = 1e-3;
  long max_iterations = 10'000'000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

/// One-vs-one training over every class pair.
SvmModel svm_train(const Eigen::MatrixXd& x, std::span<const int> labels, int class_count, const SvmOptions& options);
/// Decision value per pair, in model.pairs order.
std::vector<double> svm_decision_values(const SvmModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& query);
/// Majority vote; ties go to the larger summed decision value, then the
/// lower class. Confidence is the vote share.
Prediction svm_predict(const SvmModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& query);
Prediction vote(int class_count, const std::vector<PairSvm>& pairs, std::span<const double> decisions);

struct HyperGrid {
  std::vector<double> c;
  std::vector<double> gamma;
  static HyperGrid standard();  // C = 2^-2..2^10 step x4, gamma = 2^-12..2^0 step x8
};

struct CvResult {
  double c = 1.0;
  double gamma = 1.0;
  std::vector<double> accuracy;  // grid scores, c-major
  double best_accuracy = 0.0;
};

/// Stratified inner k-fold search on the training data only. Ties go to the
/// smaller C, then the smaller gamma.
CvResult cross_validate_hyperparams(const Eigen::MatrixXd& x, std::span<const int> labels, int class_count,
                                    const HyperGrid& grid, int folds, std::uint64_t seed, int jobs = 1, double tol = 1e-3);

// --- protocol --------------------------------------------------------------

struct FoldPlan {
  std::vector<int> fold;  // per item: the fold in which it is tested
  int folds = 3;
  std::vector<std::size_t> train(int f) const;
  std::vector<std::size_t> test(int f) const;
};

FoldPlan kfold_split(const DatasetManifest& manifest, int folds, std::uint64_t seed);
FoldPlan kfold_split(std::span<const int> labels, int folds, std::uint64_t seed);

struct EvalResult {
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  std::vector<std::vector<int>> counts;          // [true][predicted]
  std::vector<std::vector<double>> confidence;   // mean confidence per true class
};

EvalResult evaluate(std::span<const Prediction> predictions, std::span<const int> truth, int class_count);

enum class ClassifierKind { Knn, Svm };
std::string to_string(ClassifierKind kind);
ClassifierKind parse_classifier_kind(std::string_view name);

/// A classifier together with everything needed to go from a crop to a label.
struct TrainedModel {
  ClassifierKind classifier = ClassifierKind::Knn;
  FeatureKind feature = FeatureKind::Lab90;
  std::vector<std::string> class_names;
  int lane_count = 12;
  Standardizer standardizer;
  KnnModel knn;
  SvmModel svm;
  std::optional<Dictionary> colorbank_dictionary;
  std::optional<Dictionary> dsift_dictionary;
  std::string training_digest;
  std::uint64_t seed = 0;

  int class_count() const { return static_cast<int>(class_names.size()); }
  Prediction predict(const FeatureVector& f) const;
  std::vector<Prediction> predict_all(const std::vector<FeatureVector>& fs) const;
};

struct TrainOptions {
  ClassifierKind classifier = ClassifierKind::Svm;
  bool tune = true;         // cross-validate C and gamma
  double c = 1.0;           // used when tune is false
  double gamma = 1.0 / 1024;
  HyperGrid grid = HyperGrid::standard();
  int cv_folds = 3;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct TrainReport {
  std::optional<CvResult> cv;
};

/// Standardizes, then fits the classifier (with optional hyperparameter search).
TrainedModel train_classifier(const LabeledSet& train, int class_count, const TrainOptions& options,
                              TrainReport* report = nullptr);

std::vector<std::uint8_t> serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace pad
