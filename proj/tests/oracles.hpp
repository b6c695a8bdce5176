#pragma once
// Slow, obviously-correct reference implementations used as test oracles.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Right singular vectors of m by power iteration on m^T m with deflation.
// Returns one column per requested vector, plus the matching singular values.
inline void power_svd(const Eigen::MatrixXd& m, int count, Eigen::MatrixXd& vectors, Eigen::VectorXd& values,
                      unsigned seed = 1) {
  Eigen::MatrixXd a = m.transpose() * m;
  const Eigen::Index k = a.rows();
  vectors.resize(k, count);
  values.resize(count);
  std::mt19937 rng(seed);
  std::normal_distribution<double> normal;
  for (int c = 0; c < count; ++c) {
    Eigen::VectorXd v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = normal(rng);
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
      Eigen::VectorXd w = a * v;
      const double norm = w.norm();
      if (norm == 0.0) break;
      w /= norm;
      const double change = std::min((w - v).norm(), (w + v).norm());
      v = w;
      lambda = norm;
      if (change < 1e-15) break;
    }
    vectors.col(c) = v;
    values[c] = std::sqrt(std::max(0.0, lambda));
    a -= lambda * v * v.transpose();
  }
}

// Index of the nearest row of `rows` to q by a plain loop, first index on ties.
inline int brute_force_nearest(const Eigen::MatrixXd& rows, const Eigen::RowVectorXd& q) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      const double t = rows(i, j) - q[j];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// Plain ellipse membership.
inline bool in_ellipse(double x, double y, double cx, double cy, double ax, double ay) {
  const double u = (x - cx) / ax;
  const double v = (y - cy) / ay;
  return u * u + v * v <= 1.0;
}

}  // namespace oracle
