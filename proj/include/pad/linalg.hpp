#pragma once

#include <Eigen/Dense>

namespace pad {

/// Full singular value decomposition M = U * diag(S) * V^T.
///
/// U is n x n and V is k x k, both orthogonal; S holds min(n, k) values in
/// descending order. Each right singular vector is signed so that its
/// largest-magnitude component is nonnegative (the matching left vector is
/// flipped with it), which makes the factorization reproducible.
struct Svd {
  Eigen::MatrixXd u;
  Eigen::VectorXd s;
  Eigen::MatrixXd v;

  Eigen::MatrixXd reconstruct() const;
};

/// One-sided (Hestenes) Jacobi SVD. Works on the taller orientation of the
/// input and completes the orthogonal factors with Gram-Schmidt.
Svd jacobi_svd(const Eigen::MatrixXd& m);

/// Extends the columns flagged in `have` (assumed orthonormal) to a full
/// orthonormal basis, overwriting the unflagged columns.
void complete_orthonormal_basis(Eigen::MatrixXd& q, std::vector<bool> have);

}  // namespace pad
