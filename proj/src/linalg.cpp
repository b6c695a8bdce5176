#include "pad/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "pad/error.hpp"

namespace pad {

Eigen::MatrixXd Svd::reconstruct() const {
  const Eigen::Index r = s.size();
  return u.leftCols(r) * s.asDiagonal() * v.leftCols(r).transpose();
}

void complete_orthonormal_basis(Eigen::MatrixXd& q, std::vector<bool> have) {
  const Eigen::Index n = q.rows();
  for (Eigen::Index col = 0; col < q.cols(); ++col) {
    if (have[col]) continue;
    Eigen::VectorXd best;
    double best_norm = -1.0;
    for (Eigen::Index e = 0; e < n; ++e) {
      Eigen::VectorXd cand = Eigen::VectorXd::Unit(n, e);
      // Two rounds of modified Gram-Schmidt keep the result orthogonal to
      // working precision even when the candidate is nearly in the span.
      for (int round = 0; round < 2; ++round) {
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
          if (have[j]) cand -= q.col(j).dot(cand) * q.col(j);
        }
      }
      const double norm = cand.norm();
      if (norm > best_norm + 1e-12) {
        best_norm = norm;
        best = cand;
      }
    }
    q.col(col) = best / best_norm;
    have[col] = true;
  }
}

namespace {

// Decomposition of a tall (rows >= cols) matrix.
Svd jacobi_tall(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  const Eigen::Index k = m.cols();
  Eigen::MatrixXd a = m;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(k, k);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr int kMaxSweeps = 80;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < k; ++p) {
      for (Eigen::Index q = p + 1; q < k; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double ap = a(i, p);
          const double aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (Eigen::Index i = 0; i < k; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  Eigen::VectorXd sigma(k);
  for (Eigen::Index j = 0; j < k; ++j) sigma(j) = a.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return sigma(x) > sigma(y); });

  Svd out;
  out.s.resize(k);
  out.v.resize(k, k);
  out.u = Eigen::MatrixXd::Zero(n, n);
  const double smax = k > 0 ? sigma(order[0]) : 0.0;
  const double zero_tol = static_cast<double>(std::max(n, k)) * eps * smax;
  std::vector<bool> have(static_cast<std::size_t>(n), false);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    out.s(j) = sigma(src);
    out.v.col(j) = v.col(src);
    if (sigma(src) > zero_tol && sigma(src) > 0.0) {
      out.u.col(j) = a.col(src) / sigma(src);
      have[static_cast<std::size_t>(j)] = true;
    }
  }
  complete_orthonormal_basis(out.u, have);
  return out;
}

void apply_sign_convention(Svd& r) {
  for (Eigen::Index j = 0; j < r.v.cols(); ++j) {
    Eigen::Index arg = 0;
    r.v.col(j).cwiseAbs().maxCoeff(&arg);
    if (r.v(arg, j) < 0.0) {
      r.v.col(j) *= -1.0;
      if (j < r.s.size()) r.u.col(j) *= -1.0;
    }
  }
}

}  // namespace

Svd jacobi_svd(const Eigen::MatrixXd& m) {
  require(m.rows() > 0 && m.cols() > 0, "svd of an empty matrix");
  require(m.allFinite(), "svd input must be finite");
  Svd r;
  if (m.rows() >= m.cols()) {
    r = jacobi_tall(m);
  } else {
    Svd t = jacobi_tall(m.transpose());
    r.u = std::move(t.v);
    r.s = std::move(t.s);
    r.v = std::move(t.u);
  }
  apply_sign_convention(r);
  return r;
}

}  // namespace pad
