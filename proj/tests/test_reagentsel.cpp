#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "pad/reagentsel.hpp"

using namespace pad;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(0.0, 200.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

// Tiny database with deterministic fingerprints.
FingerprintDatabase toy_db(int drugs, int reagents, int reps, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 255.0);
  std::normal_distribution<double> n(0.0, 2.0);
  FingerprintDatabase db;
  for (int i = 0; i < drugs; ++i) db.drugs.push_back("d" + std::to_string(i));
  for (int j = 0; j < reagents; ++j) db.reagents.push_back("r" + std::to_string(j));
  for (int i = 0; i < drugs; ++i)
    for (int j = 0; j < reagents; ++j) {
      const RgbF c{u(rng), u(rng), u(rng)};
      for (int r = 0; r < reps; ++r) {
        Fingerprint fp;
        fp.drug = i;
        for (int l = 0; l < 9; ++l) fp.lane_colors.push_back({c[0] + n(rng), c[1] + n(rng), c[2] + n(rng)});
        db.records[{i, j}].push_back(fp);
      }
    }
  return db;
}

}  // namespace

TEST_CASE("SVD reconstructs, is orthogonal and matches power iteration") {
  std::mt19937 rng(17);
  for (int t = 0; t < 20; ++t) {
    const int rows = 2 + static_cast<int>(rng() % 25);
    const int cols = 2 + static_cast<int>(rng() % 23);
    const Eigen::MatrixXd m = random_matrix(rng, rows, cols);
    const Svd s = jacobi_svd(m);
    CHECK((s.reconstruct() - m).norm() <= 1e-8 * m.norm());
    CHECK((s.u.transpose() * s.u - Eigen::MatrixXd::Identity(rows, rows)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((s.v.transpose() * s.v - Eigen::MatrixXd::Identity(cols, cols)).cwiseAbs().maxCoeff() < 1e-8);
    for (Eigen::Index i = 1; i < s.s.size(); ++i) CHECK(s.s[i - 1] >= s.s[i]);

    const int keep = std::min(3, static_cast<int>(s.s.size()));
    Eigen::MatrixXd vecs;
    Eigen::VectorXd vals;
    oracle::power_svd(m, keep, vecs, vals);
    for (int k = 0; k < keep; ++k) {
      // Only well-separated singular values have a well-defined vector.
      const double gap = k + 1 < s.s.size() ? s.s[k] - s.s[k + 1] : s.s[k];
      if (gap < 1e-3 * s.s[0]) continue;
      CHECK(s.s[k] == doctest::Approx(vals[k]).epsilon(1e-6));
      CHECK(std::abs(s.v.col(k).dot(vecs.col(k))) >= 1.0 - 1e-6);
    }
  }
}

TEST_CASE("singular values are transpose and scale invariant") {
  std::mt19937 rng(5);
  const Eigen::MatrixXd m = random_matrix(rng, 26, 24);
  const Svd a = jacobi_svd(m);
  const Svd b = jacobi_svd(m.transpose());
  REQUIRE(a.s.size() == b.s.size());
  for (Eigen::Index i = 0; i < a.s.size(); ++i) CHECK(std::abs(a.s[i] - b.s[i]) < 1e-9 * a.s[0]);
  const Svd c = jacobi_svd(3.5 * m);
  for (Eigen::Index i = 0; i < a.s.size(); ++i) CHECK(c.s[i] == doctest::Approx(3.5 * a.s[i]).epsilon(1e-10));
  CHECK(jacobi_svd(m).v == a.v);  // deterministic signs
}

TEST_CASE("reagent scores follow the weighted singular-vector formula") {
  std::mt19937 rng(8);
  DistanceMatrix dm{random_matrix(rng, 26, 24)};
  const Svd s = svd(dm);
  for (int drug : {0, 13, 25}) {
    const auto scores = reagent_scores(s, drug);
    REQUIRE(scores.size() == 24);
    for (int j = 0; j < 24; ++j) {
      double expect = 0.0;
      for (Eigen::Index k = 0; k < s.s.size(); ++k) expect += s.s[k] * std::abs(s.u(drug, k) * s.v(j, k));
      CHECK(scores[j] == doctest::Approx(expect).epsilon(1e-12));
    }
    const auto rank = rank_reagents_for_drug(dm, s, drug);
    std::vector<int> sorted = rank;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> id(24);
    std::iota(id.begin(), id.end(), 0);
    CHECK(sorted == id);
    for (std::size_t i = 1; i < rank.size(); ++i) CHECK(scores[rank[i - 1]] >= scores[rank[i]]);

    DistanceMatrix scaled{dm.m * 7.0};
    CHECK(rank_reagents_for_drug(scaled, svd(scaled), drug) == rank);
  }
}

TEST_CASE("panel selection") {
  // Six dominant reagents shared among the drugs, on top of a noisy floor.
  std::mt19937 rng(2);
  DistanceMatrix dm{random_matrix(rng, 26, 24) * 0.2};
  for (int d = 0; d < 26; ++d) dm.m(d, (d % 6) * 3) += 400.0;
  const Svd s = svd(dm);
  std::set<int> tops;
  for (int d = 0; d < 26; ++d) tops.insert(rank_reagents_for_drug(dm, s, d)[0]);
  REQUIRE(tops.size() <= 11);

  const auto panel = select_panel(dm, s, 12);
  REQUIRE(panel.size() == 12);
  CHECK(panel[0] == -1);
  std::set<int> distinct(panel.begin() + 1, panel.end());
  CHECK(distinct.size() == 11);
  for (int t : tops) CHECK(distinct.count(t) == 1);
  CHECK(select_panel(dm, s, 12) == panel);

  const std::vector<int> forced{3, 21};
  const auto with_forced = select_panel(dm, s, 12, forced);
  CHECK(std::count(with_forced.begin(), with_forced.end(), 3) == 1);
  CHECK(std::count(with_forced.begin(), with_forced.end(), 21) == 1);
  CHECK(std::set<int>(with_forced.begin(), with_forced.end()).size() == 12);
}

TEST_CASE("panel selection rejects too many distinct favourites") {
  // Each drug prefers its own reagent: 24 favourites cannot fit in 11 slots.
  DistanceMatrix dm{Eigen::MatrixXd::Constant(24, 24, 1.0) + 100.0 * Eigen::MatrixXd::Identity(24, 24)};
  for (int d = 0; d < 24; ++d) dm.m(d, d) += d;
  CHECK_THROWS_AS(select_panel(dm, svd(dm), 12), Error);
  CHECK(select_panel(dm, svd(dm), 25).size() == 25);
}

TEST_CASE("distance matrix entries") {
  const FingerprintDatabase db = toy_db(3, 4, 3, 1);
  const DistanceMatrix white = build_distance_matrix(db);
  CHECK(white.drugs() == 3);
  CHECK(white.reagents() == 4);
  // Direct oracle for one cell: mean lane distance to white.
  double total = 0;
  for (const auto& fp : db.records.at({1, 2}))
    for (const auto& c : fp.lane_colors)
      total += std::sqrt((c[0] - 255) * (c[0] - 255) + (c[1] - 255) * (c[1] - 255) + (c[2] - 255) * (c[2] - 255));
  CHECK(white.m(1, 2) == doctest::Approx(total / 27.0));

  DistanceMatrixOptions opt;
  opt.mode = MatrixEntryMode::DistanceFromBlank;
  opt.blank_drug = 0;
  const DistanceMatrix blank = build_distance_matrix(db, opt);
  // The blank drug sits at its own replicate mean: only replicate spread is left.
  for (int j = 0; j < 4; ++j) CHECK(blank.m(0, j) < 6.0);
  CHECK(blank.m(1, 0) > 0.0);
  opt.blank_drug = 7;
  CHECK_THROWS_AS(build_distance_matrix(db, opt), Error);
}

TEST_CASE("database json and validation") {
  FingerprintDatabase db = toy_db(2, 2, 2, 4);
  const std::string text = db.to_json();
  const FingerprintDatabase back = FingerprintDatabase::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.drugs == db.drugs);
  CHECK(text.find("\"d1|r0\"") != std::string::npos);

  db.records.erase({1, 1});
  try {
    db.validate();
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}

TEST_CASE("uniqueness against a hand-computed example") {
  // Drug 0 replicates at x = 0 and 2 (std sqrt(2)), drug 1 at 10 and 10
  // (std 0), drug 2 at 1 and 1. Distances between means: 9, 0, 9.
  const std::vector<std::vector<std::vector<double>>> reps{{{0.0}, {2.0}}, {{10.0}, {10.0}}, {{1.0}, {1.0}}};
  const UniquenessReport r = verify_uniqueness(reps);
  CHECK(r.stds[0] == doctest::Approx(std::sqrt(2.0)));
  CHECK(r.stds[1] == doctest::Approx(0.0));
  CHECK_FALSE(r.pass);
  REQUIRE(r.failing.size() == 1);
  CHECK(r.failing[0].p == 0);
  CHECK(r.failing[0].q == 2);
  CHECK(r.worst.margin() == doctest::Approx(-std::sqrt(2.0)));
  CHECK(r.margins.size() == 3);

  const std::vector<std::vector<std::vector<double>>> ok{{{0.0}, {2.0}}, {{10.0}, {10.0}}, {{5.0}, {5.5}}};
  CHECK(verify_uniqueness(ok).pass);
  CHECK_THROWS_AS(verify_uniqueness({{{1.0}}, {{2.0}, {3.0}}}), Error);
}

TEST_CASE("panel replicates concatenate the panel reagents") {
  const FingerprintDatabase db = toy_db(3, 5, 3, 9);
  const std::vector<int> panel{-1, 4, 1};
  const auto reps = panel_replicates(db, panel);
  REQUIRE(reps.size() == 3);
  REQUIRE(reps[2].size() == 3);
  REQUIRE(reps[2][1].size() == 54);
  CHECK(reps[2][1][0] == db.records.at({2, 4})[1].lane_colors[0][0]);
  CHECK(reps[2][1][27] == db.records.at({2, 1})[1].lane_colors[0][0]);
}
