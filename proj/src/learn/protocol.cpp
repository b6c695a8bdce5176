#include <algorithm>

#include "pad/learn.hpp"

namespace pad {

std::vector<std::size_t> FoldPlan::train(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] != f) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::test(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(i);
  return out;
}

FoldPlan kfold_split(std::span<const int> labels, int folds, std::uint64_t seed) {
  require(folds >= 2, "k-fold needs at least two folds");
  return {stratified_folds(labels, folds, seed), folds};
}

FoldPlan kfold_split(const DatasetManifest& manifest, int folds, std::uint64_t seed) {
  const std::vector<int> labels = manifest.labels();
  return kfold_split(labels, folds, seed);
}

EvalResult evaluate(std::span<const Prediction> predictions, std::span<const int> truth, int class_count) {
  require(predictions.size() == truth.size(), "one prediction per test item required");
  EvalResult r;
  r.total = static_cast<int>(truth.size());
  r.counts.assign(static_cast<std::size_t>(class_count), std::vector<int>(static_cast<std::size_t>(class_count), 0));
  r.confidence.assign(static_cast<std::size_t>(class_count), std::vector<double>(static_cast<std::size_t>(class_count), 0.0));
  std::vector<int> per_class(static_cast<std::size_t>(class_count), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const Prediction& p = predictions[i];
    require(t >= 0 && t < class_count && p.label >= 0 && p.label < class_count, "label out of range");
    ++r.counts[t][p.label];
    r.correct += p.label == t;
    ++per_class[t];
    require(p.confidence.size() == static_cast<std::size_t>(class_count), "confidence length mismatch");
    for (int k = 0; k < class_count; ++k) r.confidence[t][k] += p.confidence[k];
  }
  for (int t = 0; t < class_count; ++t)
    if (per_class[t] > 0)
      for (double& v : r.confidence[t]) v /= per_class[t];
  r.accuracy = r.total ? static_cast<double>(r.correct) / r.total : 0.0;
  return r;
}

std::string to_string(ClassifierKind kind) { return kind == ClassifierKind::Knn ? "knn" : "svm"; }

ClassifierKind parse_classifier_kind(std::string_view name) {
  if (name == "knn" || name == "1nn") return ClassifierKind::Knn;
  if (name == "svm") return ClassifierKind::Svm;
  fail(ErrorCode::Config, "unknown classifier '" + std::string(name) + "'");
}

Prediction TrainedModel::predict(const FeatureVector& f) const {
  if (f.kind != feature) fail(ErrorCode::InvalidArgument, "model expects " + to_string(feature) + " features, got " + to_string(f.kind));
  const Eigen::MatrixXd x = standardizer.apply(Eigen::Map<const Eigen::RowVectorXd>(f.values.data(), static_cast<Eigen::Index>(f.values.size())));
  return classifier == ClassifierKind::Knn ? knn_predict(knn, x.row(0)) : svm_predict(svm, x.row(0));
}

std::vector<Prediction> TrainedModel::predict_all(const std::vector<FeatureVector>& fs) const {
  std::vector<Prediction> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(predict(f));
  return out;
}

TrainedModel train_classifier(const LabeledSet& train, int class_count, const TrainOptions& options, TrainReport* report) {
  train.validate();
  require(train.size() >= 1, "empty training set");
  TrainedModel model;
  model.classifier = options.classifier;
  model.feature = train.kind();
  model.seed = options.seed;
  const Eigen::MatrixXd raw = train.matrix();
  model.standardizer = Standardizer::fit(raw);
  const Eigen::MatrixXd x = model.standardizer.apply(raw);
  if (options.classifier == ClassifierKind::Knn) {
    model.knn = knn_fit(x, train.labels, class_count);
    return model;
  }
  SvmOptions svm;
  svm.c = options.c;
  svm.gamma = options.gamma;
  svm.seed = options.seed;
  svm.jobs = options.jobs;
  if (options.tune) {
    const CvResult cv = cross_validate_hyperparams(x, train.labels, class_count, options.grid, options.cv_folds, options.seed,
                                                   options.jobs);
    svm.c = cv.c;
    svm.gamma = cv.gamma;
    if (report) report->cv = cv;
  }
  model.svm = svm_train(x, train.labels, class_count, svm);
  return model;
}

}  // namespace pad
