#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "pad/learn.hpp"

namespace pad {

double rbf_kernel(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::Ref<const Eigen::RowVectorXd>& y, double gamma) {
  require(x.size() == y.size(), "dimension mismatch");
  return std::exp(-gamma * (x - y).squaredNorm());
}

namespace {

bool in_up(int y, double a, double c) { return (y > 0 && a < c) || (y < 0 && a > 0); }
bool in_low(int y, double a, double c) { return (y < 0 && a < c) || (y > 0 && a > 0); }

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return Digest().update(seed).update(a).update(b).value();
}

}  // namespace

double kkt_gap(const Eigen::MatrixXd& kernel, std::span<const int> y, std::span<const double> alpha, double c) {
  const std::size_t n = y.size();
  double up = -std::numeric_limits<double>::infinity();
  double low = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    double g = -1.0;
    for (std::size_t s = 0; s < n; ++s) g += y[t] * y[s] * kernel(t, s) * alpha[s];
    const double v = -y[t] * g;
    if (in_up(y[t], alpha[t], c)) up = std::max(up, v);
    if (in_low(y[t], alpha[t], c)) low = std::min(low, v);
  }
  if (!std::isfinite(up) || !std::isfinite(low)) return 0.0;
  return up - low;
}

SmoResult smo_solve(const Eigen::MatrixXd& kernel, std::span<const int> y, double c, double tol, std::uint64_t seed,
                    long max_iterations) {
  const int n = static_cast<int>(y.size());
  require(kernel.rows() == n && kernel.cols() == n, "kernel matrix size mismatch");
  require(c > 0.0 && tol > 0.0, "C and tol must be positive");
  bool pos = false, neg = false;
  for (int v : y) {
    require(v == 1 || v == -1, "labels must be +1 or -1");
    pos = pos || v > 0;
    neg = neg || v < 0;
  }
  require(pos && neg, "both classes must be present");

  SmoResult r;
  r.alpha.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> grad(static_cast<std::size_t>(n), -1.0);
  std::vector<int> candidates;
  std::mt19937_64 rng(seed);
  double up = 0.0, low = 0.0;
  for (;;) {
    int i = -1;
    up = -std::numeric_limits<double>::infinity();
    low = std::numeric_limits<double>::infinity();
    for (int t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      if (in_up(y[t], r.alpha[t], c) && v > up) {
        up = v;
        i = t;
      }
      if (in_low(y[t], r.alpha[t], c)) low = std::min(low, v);
    }
    if (i < 0 || up - low <= tol) {
      r.converged = true;
      break;
    }
    if (r.iterations >= max_iterations) break;
    candidates.clear();
    for (int t = 0; t < n; ++t) {
      if (in_low(y[t], r.alpha[t], c) && -y[t] * grad[t] < up - tol) candidates.push_back(t);
    }
    const int j = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
    double eta = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
    if (eta <= 0.0) eta = 1e-12;
    const double vi = -y[i] * grad[i];
    const double vj = -y[j] * grad[j];
    double step = (vi - vj) / eta;
    step = std::min(step, y[i] > 0 ? c - r.alpha[i] : r.alpha[i]);
    step = std::min(step, y[j] > 0 ? r.alpha[j] : c - r.alpha[j]);
    r.alpha[i] += y[i] * step;
    r.alpha[j] -= y[j] * step;
    // Snap to the box to keep the active sets exact.
    for (int t : {i, j}) {
      if (r.alpha[t] < 1e-14 * c) r.alpha[t] = 0.0;
      if (r.alpha[t] > c - 1e-14 * c) r.alpha[t] = c;
    }
    for (int t = 0; t < n; ++t) grad[t] += y[t] * step * (kernel(t, i) - kernel(t, j));
    ++r.iterations;
  }
  r.violation = std::isfinite(up) && std::isfinite(low) ? std::max(0.0, up - low) : 0.0;
  if (std::isfinite(up) && std::isfinite(low)) {
    r.bias = 0.5 * (up + low);
  } else {
    r.bias = std::isfinite(up) ? up : (std::isfinite(low) ? low : 0.0);
  }
  return r;
}

namespace {

struct IndexedPair {
  int class_a = 0;
  int class_b = 0;
  std::vector<int> rows;  // training rows with nonzero alpha
  std::vector<double> coef;
  double bias = 0.0;
};

// One-vs-one training on a subset of rows of a squared-distance matrix.
std::vector<IndexedPair> train_pairs(const Eigen::MatrixXd& d2, std::span<const int> labels, std::span<const std::size_t> rows,
                                     int class_count, double c, double gamma, double tol, long max_iterations,
                                     std::uint64_t seed, int jobs) {
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(class_count));
  for (std::size_t r : rows) by_class[static_cast<std::size_t>(labels[r])].push_back(static_cast<int>(r));
  std::vector<std::pair<int, int>> pair_list;
  for (int a = 0; a < class_count; ++a)
    for (int b = a + 1; b < class_count; ++b)
      if (!by_class[a].empty() && !by_class[b].empty()) pair_list.emplace_back(a, b);
  std::vector<IndexedPair> out(pair_list.size());
  parallel_for(pair_list.size(), jobs, [&](std::size_t p) {
    const auto [a, b] = pair_list[p];
    std::vector<int> members = by_class[a];
    members.insert(members.end(), by_class[b].begin(), by_class[b].end());
    std::vector<int> y(members.size());
    for (std::size_t t = 0; t < members.size(); ++t) y[t] = labels[static_cast<std::size_t>(members[t])] == a ? 1 : -1;
    const Eigen::Index m = static_cast<Eigen::Index>(members.size());
    Eigen::MatrixXd k(m, m);
    for (Eigen::Index s = 0; s < m; ++s)
      for (Eigen::Index t = 0; t < m; ++t) k(s, t) = std::exp(-gamma * d2(members[s], members[t]));
    const SmoResult r = smo_solve(k, y, c, tol, mix(seed, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b)),
                                  max_iterations);
    IndexedPair& ip = out[p];
    ip.class_a = a;
    ip.class_b = b;
    ip.bias = r.bias;
    for (std::size_t t = 0; t < members.size(); ++t) {
      if (r.alpha[t] > 0.0) {
        ip.rows.push_back(members[t]);
        ip.coef.push_back(r.alpha[t] * y[t]);
      }
    }
  });
  return out;
}

}  // namespace

Prediction vote(int class_count, const std::vector<PairSvm>& pairs, std::span<const double> decisions) {
  require(pairs.size() == decisions.size(), "one decision value per pair required");
  std::vector<int> votes(static_cast<std::size_t>(class_count), 0);
  std::vector<double> margin(static_cast<std::size_t>(class_count), 0.0);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const double f = decisions[p];
    ++votes[static_cast<std::size_t>(f > 0.0 ? pairs[p].class_a : pairs[p].class_b)];
    margin[static_cast<std::size_t>(pairs[p].class_a)] += f;
    margin[static_cast<std::size_t>(pairs[p].class_b)] -= f;
  }
  Prediction pred;
  pred.label = 0;
  for (int k = 1; k < class_count; ++k) {
    if (votes[k] > votes[pred.label] || (votes[k] == votes[pred.label] && margin[k] > margin[pred.label])) pred.label = k;
  }
  pred.confidence.assign(static_cast<std::size_t>(class_count), 0.0);
  const double total = pairs.empty() ? 1.0 : static_cast<double>(pairs.size());
  for (int k = 0; k < class_count; ++k) pred.confidence[k] = votes[k] / total;
  if (pairs.empty()) pred.confidence[0] = 1.0;
  return pred;
}

SvmModel svm_train(const Eigen::MatrixXd& x, std::span<const int> labels, int class_count, const SvmOptions& options) {
  require(static_cast<std::size_t>(x.rows()) == labels.size(), "labels and vectors differ in count");
  std::vector<int> present;
  for (int l : labels) {
    require(l >= 0 && l < class_count, "label out of range");
    if (std::find(present.begin(), present.end(), l) == present.end()) present.push_back(l);
  }
  if (present.size() < 2) fail(ErrorCode::InvalidArgument, "SVM training needs at least two classes");
  const Eigen::MatrixXd d2 = squared_distances(x, x);
  std::vector<std::size_t> rows(labels.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto pairs = train_pairs(d2, labels, rows, class_count, options.c, options.gamma, options.tol,
                                 options.max_iterations, options.seed, options.jobs);
  SvmModel model;
  model.c = options.c;
  model.gamma = options.gamma;
  model.class_count = class_count;
  std::map<int, int> table;
  for (const auto& p : pairs)
    for (int r : p.rows) table.emplace(r, 0);
  int next = 0;
  for (auto& [row, slot] : table) slot = next++;
  model.vectors.resize(static_cast<Eigen::Index>(table.size()), x.cols());
  for (const auto& [row, slot] : table) model.vectors.row(slot) = x.row(row);
  for (const auto& p : pairs) {
    PairSvm ps;
    ps.class_a = p.class_a;
    ps.class_b = p.class_b;
    ps.bias = p.bias;
    ps.coef = p.coef;
    for (int r : p.rows) ps.support.push_back(table.at(r));
    model.pairs.push_back(std::move(ps));
  }
  return model;
}

std::vector<double> svm_decision_values(const SvmModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& query) {
  require(query.size() == model.vectors.cols() || model.vectors.rows() == 0, "query dimension does not match the model");
  Eigen::VectorXd k(model.vectors.rows());
  if (model.vectors.rows() > 0) {
    k = (-(model.gamma) * (model.vectors.rowwise() - query).rowwise().squaredNorm()).array().exp();
  }
  std::vector<double> out;
  out.reserve(model.pairs.size());
  for (const auto& p : model.pairs) {
    double f = p.bias;
    for (std::size_t t = 0; t < p.support.size(); ++t) f += p.coef[t] * k(p.support[t]);
    out.push_back(f);
  }
  return out;
}

Prediction svm_predict(const SvmModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& query) {
  const auto d = svm_decision_values(model, query);
  return vote(model.class_count, model.pairs, d);
}

HyperGrid HyperGrid::standard() {
  HyperGrid g;
  for (int e = -2; e <= 10; e += 2) g.c.push_back(std::ldexp(1.0, e));
  for (int e = -12; e <= 2; e += 3) g.gamma.push_back(std::ldexp(1.0, e));
  return g;
}

CvResult cross_validate_hyperparams(const Eigen::MatrixXd& x, std::span<const int> labels, int class_count,
                                    const HyperGrid& grid, int folds, std::uint64_t seed, int jobs, double tol) {
  require(!grid.c.empty() && !grid.gamma.empty(), "empty hyperparameter grid");
  require(static_cast<std::size_t>(x.rows()) == labels.size(), "labels and vectors differ in count");
  std::vector<int> per_class(static_cast<std::size_t>(class_count), 0);
  for (int l : labels) ++per_class[static_cast<std::size_t>(l)];
  for (int n : per_class) {
    if (n > 0 && n < folds) fail(ErrorCode::InvalidArgument, "a class has fewer examples than CV folds");
  }
  const FoldPlan plan = kfold_split(labels, folds, seed);
  const Eigen::MatrixXd d2 = squared_distances(x, x);
  const std::size_t points = grid.c.size() * grid.gamma.size();
  CvResult result;
  result.accuracy.assign(points, 0.0);
  parallel_for(points, jobs, [&](std::size_t g) {
    const double c = grid.c[g / grid.gamma.size()];
    const double gamma = grid.gamma[g % grid.gamma.size()];
    int correct = 0;
    int total = 0;
    for (int f = 0; f < folds; ++f) {
      const auto train = plan.train(f);
      const auto test = plan.test(f);
      const auto pairs = train_pairs(d2, labels, train, class_count, c, gamma, tol, 10'000'000,
                                     mix(seed, g, static_cast<std::uint64_t>(f)), 1);
      std::vector<PairSvm> shells(pairs.size());
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        shells[p].class_a = pairs[p].class_a;
        shells[p].class_b = pairs[p].class_b;
      }
      for (std::size_t q : test) {
        std::vector<double> dec(pairs.size());
        for (std::size_t p = 0; p < pairs.size(); ++p) {
          double v = pairs[p].bias;
          for (std::size_t t = 0; t < pairs[p].rows.size(); ++t) {
            v += pairs[p].coef[t] * std::exp(-gamma * d2(static_cast<Eigen::Index>(q), pairs[p].rows[t]));
          }
          dec[p] = v;
        }
        correct += vote(class_count, shells, dec).label == labels[q];
        ++total;
      }
    }
    result.accuracy[g] = total ? static_cast<double>(correct) / total : 0.0;
  });
  auto c_of = [&](std::size_t g) { return grid.c[g / grid.gamma.size()]; };
  auto gamma_of = [&](std::size_t g) { return grid.gamma[g % grid.gamma.size()]; };
  std::size_t best = 0;
  for (std::size_t g = 1; g < points; ++g) {
    const double a = result.accuracy[g];
    const double b = result.accuracy[best];
    if (a > b || (a == b && (c_of(g) < c_of(best) || (c_of(g) == c_of(best) && gamma_of(g) < gamma_of(best))))) best = g;
  }
  result.c = grid.c[best / grid.gamma.size()];
  result.gamma = grid.gamma[best % grid.gamma.size()];
  result.best_accuracy = result.accuracy[best];
  return result;
}

}  // namespace pad
