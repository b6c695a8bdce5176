#include <cmath>
#include <limits>

#include "pad/learn.hpp"

namespace pad {

FeatureKind LabeledSet::kind() const {
  require(!vectors.empty(), "empty labeled set");
  return vectors.front().kind;
}

void LabeledSet::validate() const {
  require(vectors.size() == labels.size(), "labels and vectors differ in count");
  require(ids.empty() || ids.size() == vectors.size(), "ids and vectors differ in count");
  for (const auto& v : vectors) require(v.kind == vectors.front().kind, "labeled set mixes feature kinds");
}

Eigen::MatrixXd LabeledSet::matrix() const {
  validate();
  if (vectors.empty()) return {};
  Eigen::MatrixXd x(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(vectors[0].values.size()));
  for (std::size_t i = 0; i < vectors.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(vectors[i].values.data(), x.cols());
  return x;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  require(x.rows() >= 1, "cannot standardize an empty set");
  Standardizer s;
  s.mean = x.colwise().mean();
  s.scale = ((x.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(Eigen::Index dim) {
  return {Eigen::RowVectorXd::Zero(dim), Eigen::RowVectorXd::Ones(dim)};
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  require(x.cols() == mean.size(), "feature dimension does not match the standardizer");
  return (x.rowwise() - mean).array().rowwise() / scale.array();
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.cols() == b.cols(), "dimension mismatch");
  Eigen::MatrixXd d = -2.0 * (a * b.transpose());
  d.colwise() += a.rowwise().squaredNorm();
  d.rowwise() += b.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

KnnModel knn_fit(const Eigen::MatrixXd& x, std::span<const int> labels, int class_count) {
  require(x.rows() >= 1, "1-NN needs at least one exemplar");
  require(static_cast<std::size_t>(x.rows()) == labels.size(), "labels and exemplars differ in count");
  for (int l : labels) require(l >= 0 && l < class_count, "label out of range");
  return {x, std::vector<int>(labels.begin(), labels.end()), class_count};
}

Prediction knn_predict(const KnnModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& query) {
  require(query.size() == model.exemplars.cols(), "query dimension does not match the model");
  const Eigen::VectorXd dist = (model.exemplars.rowwise() - query).rowwise().squaredNorm();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < dist.size(); ++i) {
    if (dist(i) < dist(best)) best = i;
  }
  Prediction p;
  p.label = model.labels[static_cast<std::size_t>(best)];
  p.confidence.assign(static_cast<std::size_t>(model.class_count), 0.0);
  p.confidence[static_cast<std::size_t>(p.label)] = 1.0;
  return p;
}

std::vector<Prediction> knn_predict_all(const KnnModel& model, const Eigen::MatrixXd& queries) {
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index i = 0; i < queries.rows(); ++i) out.push_back(knn_predict(model, queries.row(i)));
  return out;
}

}  // namespace pad
