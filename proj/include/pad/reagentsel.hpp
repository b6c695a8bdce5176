#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pad/blobs.hpp"
#include "pad/linalg.hpp"

namespace pad {

/// Single-reagent card fingerprints keyed by (drug, reagent).
struct FingerprintDatabase {
  std::vector<std::string> drugs;
  std::vector<std::string> reagents;
  std::map<std::pair<int, int>, std::vector<Fingerprint>> records;

  /// Throws Error(Config) if any pair is missing or a record is not 9 lanes.
  void validate() const;
  std::string to_json() const;
  static FingerprintDatabase from_json(const std::string& text);
};

enum class MatrixEntryMode {
  DistanceFromWhite,  // reaction strength against a white background
  DistanceFromBlank,  // distance from the blank drug's color under the same reagent
};

struct DistanceMatrixOptions {
  MatrixEntryMode mode = MatrixEntryMode::DistanceFromWhite;
  int blank_drug = -1;  // required for DistanceFromBlank
};

struct DistanceMatrix {
  Eigen::MatrixXd m;  // drugs x reagents
  int drugs() const { return static_cast<int>(m.rows()); }
  int reagents() const { return static_cast<int>(m.cols()); }
};

DistanceMatrix build_distance_matrix(const FingerprintDatabase& db, const DistanceMatrixOptions& options = {});

Svd svd(const DistanceMatrix& m);

/// s(i, j) = sum_k sigma_k |U(i,k) V(j,k)| for every reagent j.
std::vector<double> reagent_scores(const Svd& s, int drug);

/// Reagents ordered by descending score, ties to the lower index.
std::vector<int> rank_reagents_for_drug(const DistanceMatrix& m, const Svd& s, int drug);

/// Slot 0 holds the timer marker (-1). Each drug's best reagent is taken in
/// drug order, then `forced` reagents, then the best remaining reagents by
/// score summed over drugs.
std::vector<int> select_panel(const DistanceMatrix& m, const Svd& s, int panel_size, std::span<const int> forced = {});

struct PairMargin {
  int p = 0;
  int q = 0;
  double inter = 0.0;      // distance between the class means
  double threshold = 0.0;  // max(std_p, std_q)
  double margin() const { return inter - threshold; }
};

struct UniquenessReport {
  bool pass = false;
  PairMargin worst;
  std::vector<PairMargin> margins;  // every pair, p < q
  std::vector<PairMargin> failing;
  std::vector<double> stds;         // per drug

  std::string to_json(const std::vector<std::string>& names) const;
};

/// replicates[d] holds the descriptors measured for drug d. The spread of a
/// drug is sqrt(sum ||x_r - mean||^2 / (n - 1)).
UniquenessReport verify_uniqueness(const std::vector<std::vector<std::vector<double>>>& replicates);

/// Per drug, the concatenation of the panel reagents' replicate descriptors.
/// The timer marker in the panel is skipped.
std::vector<std::vector<std::vector<double>>> panel_replicates(const FingerprintDatabase& db, std::span<const int> panel);

}  // namespace pad
