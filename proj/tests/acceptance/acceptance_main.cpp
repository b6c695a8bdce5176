// End-to-end acceptance gates. One line per criterion; exit status is the
// number of failing criteria.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>

#include "../oracles.hpp"
#include "pad/experiment.hpp"
#include "pad/image_io.hpp"

using namespace pad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Polygon = std::vector<Point2>;

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

double area(const Polygon& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point2 a = p[i], b = p[(i + 1) % p.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return std::abs(s) / 2.0;
}

Polygon counter_clockwise(Polygon p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i].x * p[(i + 1) % p.size()].y - p[(i + 1) % p.size()].x * p[i].y;
  if (s < 0) std::reverse(p.begin(), p.end());
  return p;
}

// Sutherland-Hodgman; both polygons convex.
Polygon clip(const Polygon& subject, const Polygon& window) {
  Polygon out = counter_clockwise(subject);
  const Polygon w = counter_clockwise(window);
  for (std::size_t e = 0; e < w.size() && !out.empty(); ++e) {
    const Point2 a = w[e], b = w[(e + 1) % w.size()];
    const Polygon in = out;
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point2 p = in[i], q = in[(i + 1) % in.size()];
      const double dp = cross(a, b, p), dq = cross(a, b, q);
      if (dp >= 0) out.push_back(p);
      if ((dp >= 0) != (dq >= 0)) {
        const double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

double iou(const Polygon& a, const Polygon& b) {
  const double inter = area(clip(a, b));
  return inter / (area(a) + area(b) - inter);
}

Polygon corners(const Rect& r) {
  return {{double(r.x), double(r.y)}, {double(r.right()), double(r.y)}, {double(r.right()), double(r.bottom())},
          {double(r.x), double(r.bottom())}};
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const ReactionColorModel& default_model() {
  static const ReactionColorModel m = make_color_model(DatasetConfig{});
  return m;
}

const std::vector<int>& default_panel() {
  static const std::vector<int> p = resolve_panel(DatasetConfig{}, default_model());
  return p;
}

// --- 1 ---------------------------------------------------------------------
Outcome dimensionality() {
  const CardLayout layout = canonical_layout(12);
  const auto card = render_card(CardSpec::panel(0, default_panel()), layout, default_model(), DistortionParams{}, 1);
  const Raster crop = rectify_pipeline(card.image, layout).crop;
  const auto hist = extract_patch_histograms(color_name_map(crop));
  const auto sift = dense_sift_descriptors(crop);
  const DictionaryPair dicts{kmeans(sample_rows({&hist.descriptors}, 20000, 1), 20, 1),
                             kmeans(sample_rows({&sift.descriptors}, 20000, 2), 256, 2, KMeansOptions{20, 1e-6})};
  bool ok = true;
  std::string got;
  const std::pair<FeatureKind, std::size_t> expect[] = {{FeatureKind::Lab90, 90},
                                                         {FeatureKind::Gist512, 512},
                                                         {FeatureKind::ColorBank420, 20 * 21},
                                                         {FeatureKind::DenseSift5376, 256 * 21},
                                                         {FeatureKind::Combined5796, 5796}};
  for (const auto& [kind, len] : expect) {
    const FeatureVector f = compute_feature(crop, kind, dicts);
    ok = ok && f.values.size() == len && f.kind == kind && feature_length(kind) == len;
    got += fmt("%s=%zu ", to_string(kind).c_str(), f.values.size());
  }
  // Construction rejects a wrong length.
  bool rejects = false;
  try {
    FeatureVector bad(FeatureKind::ColorBank420, std::vector<double>(421));
  } catch (const Error&) {
    rejects = true;
  }
  return {ok && rejects, got + (rejects ? "(wrong lengths rejected)" : "(wrong length accepted)")};
}

// --- 2 ---------------------------------------------------------------------
Outcome rectification() {
  const CardLayout layout = canonical_layout(12);
  const DistortionParams d;
  const int cards = 200;
  int ok = 0;
  double err = 0.0, worst_iou = 1.0;
  for (int i = 0; i < cards; ++i) {
    const auto card =
        render_card(CardSpec::panel(i % kDrugCount, default_panel()), layout, default_model(), d, image_seed(2024, i));
    try {
      const RectifyResult r = rectify_pipeline(card.image, layout);
      ++ok;
      err += r.mean_reprojection_error;
      Polygon est, truth;
      for (const Point2& p : corners(layout.crop_window)) {
        est.push_back(r.card_to_image.apply(r.lane_correction.apply(p)));
        truth.push_back(card.truth.card_to_image.apply(card.truth.wax.apply(p)));
      }
      worst_iou = std::min(worst_iou, iou(est, truth));
    } catch (const Error&) {
    }
  }
  const double rate = static_cast<double>(ok) / cards;
  const double mean_err = ok ? err / ok : 1e9;
  return {rate >= 0.99 && mean_err <= 2.0 && worst_iou >= 0.98,
          fmt("%d/%d rectified, mean reprojection %.3f px, min crop IoU %.4f", ok, cards, mean_err, worst_iou)};
}

// --- 3 ---------------------------------------------------------------------
Outcome blob_selection() {
  const CardLayout layout = canonical_layout(12);
  int lanes = 0, correct = 0;
  for (std::uint64_t seed = 0; lanes < 1000 && seed < 2000; ++seed) {
    const auto card = render_card(CardSpec::panel(static_cast<int>(seed % kDrugCount), default_panel()), layout,
                                  default_model(), DistortionParams{}, image_seed(77, seed));
    const Raster crop = rectify_pipeline(card.image, layout).crop;
    for (const auto& lane : card.truth.lanes) {
      if (lane.residuals.empty() || lanes >= 1000) continue;
      ++lanes;
      const ReactionBlob b = analyze_lane(crop, layout, lane.lane).blob;
      correct += lane.reaction.contains(b.bbox.x + b.bbox.w / 2.0, b.bbox.y + b.bbox.h / 2.0);
    }
  }
  return {lanes == 1000 && correct == lanes, fmt("%d/%d lanes with residuals select the reaction blob", correct, lanes)};
}

// --- 4 ---------------------------------------------------------------------
Outcome svd_oracle() {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 255.0);
  double worst_rec = 0, worst_orth = 0, worst_dot = 1;
  for (int t = 0; t < 50; ++t) {
    const int rows = 2 + static_cast<int>(rng() % 25), cols = 2 + static_cast<int>(rng() % 23);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    const Svd s = jacobi_svd(m);
    worst_rec = std::max(worst_rec, (s.reconstruct() - m).norm() / m.norm());
    worst_orth = std::max({worst_orth, (s.u.transpose() * s.u - Eigen::MatrixXd::Identity(rows, rows)).cwiseAbs().maxCoeff(),
                           (s.v.transpose() * s.v - Eigen::MatrixXd::Identity(cols, cols)).cwiseAbs().maxCoeff()});
    // Retain the leading vectors whose singular values are well separated.
    const int keep = std::min(3, static_cast<int>(s.s.size()));
    Eigen::MatrixXd vecs;
    Eigen::VectorXd vals;
    oracle::power_svd(m, keep, vecs, vals);
    for (int k = 0; k < keep; ++k) {
      const double gap = k + 1 < s.s.size() ? s.s[k] - s.s[k + 1] : s.s[k];
      if (gap < 1e-3 * s.s[0]) break;
      worst_dot = std::min(worst_dot, std::abs(s.v.col(k).dot(vecs.col(k))));
    }
  }
  return {worst_rec <= 1e-8 && worst_orth <= 1e-8 && worst_dot >= 1 - 1e-6,
          fmt("max rel. reconstruction %.2e, max orthogonality error %.2e, min |dot| %.9f", worst_rec, worst_orth, worst_dot)};
}

// --- 5 ---------------------------------------------------------------------
Outcome uniqueness() {
  const FingerprintDatabase db = build_fingerprint_database(default_model(), 3, 5, DistortionParams{}, default_jobs());
  const DistanceMatrix m = build_distance_matrix(db);
  const Svd s = svd(m);
  const auto panel = select_panel(m, s, 12);
  const auto reps = panel_replicates(db, panel);
  const UniquenessReport r = verify_uniqueness(reps);

  // Recompute the worst margin from the raw replicates. The spread is the
  // root mean square distance to the class mean with n - 1 in the denominator.
  std::vector<Eigen::VectorXd> mean;
  std::vector<double> sd;
  for (const auto& d : reps) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d[0].size()));
    for (const auto& v : d) mu += Eigen::Map<const Eigen::VectorXd>(v.data(), mu.size());
    mu /= static_cast<double>(d.size());
    double ss = 0;
    for (const auto& v : d) ss += (Eigen::Map<const Eigen::VectorXd>(v.data(), mu.size()) - mu).squaredNorm();
    mean.push_back(mu);
    sd.push_back(std::sqrt(ss / static_cast<double>(d.size() - 1)));
  }
  double worst = 1e18;
  for (std::size_t p = 0; p < mean.size(); ++p)
    for (std::size_t q = p + 1; q < mean.size(); ++q) worst = std::min(worst, (mean[p] - mean[q]).norm() - std::max(sd[p], sd[q]));
  const bool agree = std::abs(worst - r.worst.margin()) <= 1e-6 * std::max(1.0, std::abs(worst));
  return {r.pass && worst > 0 && agree,
          fmt("panel of %zu, worst inter-class margin %.2f (recomputed %.2f), %zu failing pairs", panel.size(),
              r.worst.margin(), worst, r.failing.size())};
}

// --- 6, 7 ------------------------------------------------------------------
ExperimentReport protocol_report() {
  const CropSet crops = synthesize_crops(DatasetConfig{}, 1, default_jobs());
  ExperimentSettings s;
  s.features = {FeatureKind::Combined5796, FeatureKind::Lab90};
  s.classifiers = {ClassifierKind::Svm, ClassifierKind::Knn};
  s.perturbations = {Perturbation::None, Perturbation::LanePermutation};
  s.seed = 1;
  s.jobs = default_jobs();
  const FeatureCache cache("acceptance-cache");
  ExperimentReport r = run_experiment(crops, s, &cache);
  write_text("acceptance-report.txt", r.to_table());
  write_text("acceptance-report.json", r.to_json());
  return r;
}

Outcome end_to_end(const ExperimentReport& r) {
  const CellResult* best = r.find(FeatureKind::Combined5796, ClassifierKind::Svm, Perturbation::None);
  const CellResult* base = r.find(FeatureKind::Lab90, ClassifierKind::Knn, Perturbation::None);
  if (!best || !base) return {false, "missing report cells"};
  bool shape = r.dropped.empty();
  for (const auto& f : best->folds) shape = shape && f.total == 260;
  return {shape && best->mean_accuracy >= 0.85 && best->mean_accuracy > base->mean_accuracy,
          fmt("combined+SVM %.2f%%, Lab+kNN %.2f%%, %zu dropped, 260 test per fold: %s", 100 * best->mean_accuracy,
              100 * base->mean_accuracy, r.dropped.size(), shape ? "yes" : "no")};
}

Outcome permutation(const ExperimentReport& r) {
  const CellResult* canon = r.find(FeatureKind::Combined5796, ClassifierKind::Svm, Perturbation::None);
  const CellResult* moved = r.find(FeatureKind::Combined5796, ClassifierKind::Svm, Perturbation::LanePermutation);
  if (!canon || !moved) return {false, "missing report cells"};
  return {moved->mean_accuracy <= 0.5 * canon->mean_accuracy,
          fmt("canonical %.2f%%, permuted lanes %.2f%%", 100 * canon->mean_accuracy, 100 * moved->mean_accuracy)};
}

// --- 8 ---------------------------------------------------------------------
Outcome classifier_gates() {
  std::mt19937 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::string detail;

  Eigen::MatrixXd train(150, 6);
  std::vector<int> labels(150);
  for (int i = 0; i < 150; ++i) {
    labels[i] = i % 3;
    for (int j = 0; j < 6; ++j) train(i, j) = n(rng) + 2.0 * labels[i] * (j == labels[i]);
  }
  const KnnModel knn = knn_fit(train, labels, 3);
  int agree = 0;
  for (int q = 0; q < 1000; ++q) {
    Eigen::RowVectorXd x(6);
    for (int j = 0; j < 6; ++j) x[j] = 2.0 * n(rng);
    agree += knn_predict(knn, x).label == labels[oracle::brute_force_nearest(train, x)];
  }
  detail += fmt("1-NN %d/1000; ", agree);

  int kkt_ok = 0;
  for (int p = 0; p < 20; ++p) {
    const int size = 20 + 2 * p;
    Eigen::MatrixXd x(size, 3);
    std::vector<int> y(size);
    for (int i = 0; i < size; ++i) {
      y[i] = i % 2 ? 1 : -1;
      for (int j = 0; j < 3; ++j) x(i, j) = n(rng) + 0.7 * y[i];
    }
    const Eigen::MatrixXd k = (-0.5 * squared_distances(x, x)).array().exp();
    const double c = std::ldexp(1.0, p % 6 - 1);
    const SmoResult r = smo_solve(k, y, c, 1e-3, static_cast<std::uint64_t>(p));
    kkt_ok += r.converged && kkt_gap(k, y, r.alpha, c) <= 1e-3;
  }
  detail += fmt("SMO KKT %d/20; ", kkt_ok);

  Eigen::MatrixXd sep(80, 2);
  std::vector<int> sy(80);
  for (int i = 0; i < 80; ++i) {
    sy[i] = i % 2;
    sep(i, 0) = (sy[i] ? 3.0 : -3.0) + n(rng) * 0.5;
    sep(i, 1) = n(rng);
  }
  SvmOptions opt;
  opt.c = 100.0;
  opt.gamma = 0.5;
  const SvmModel svm = svm_train(sep, sy, 2, opt);
  int fit = 0;
  for (int i = 0; i < 80; ++i) fit += svm_predict(svm, sep.row(i)).label == sy[i];
  detail += fmt("separable %d/80; ", fit);

  std::vector<int> truth;
  std::vector<Prediction> constant;
  for (int d = 0; d < 26; ++d)
    for (int k = 0; k < 10; ++k) {
      truth.push_back(d);
      Prediction p;
      p.label = 0;
      p.confidence.assign(26, 0.0);
      p.confidence[0] = 1.0;
      constant.push_back(p);
    }
  const EvalResult chance = evaluate(constant, truth, 26);
  detail += fmt("constant predictor %d/%d", chance.correct, chance.total);
  return {agree == 1000 && kkt_ok == 20 && fit == 80 && chance.correct * 26 == chance.total && chance.accuracy == 1.0 / 26,
          detail};
}

// --- 9 ---------------------------------------------------------------------
std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("pad-acceptance-" + std::to_string(::getpid()));
  DatasetConfig cfg;
  cfg.images_per_drug = 3;
  std::vector<std::string> artifacts[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / std::to_string(run);
    fs::remove_all(dir);
    const DatasetManifest m = generate_dataset(cfg, 9, dir, default_jobs());
    auto& out = artifacts[run];
    out.push_back(bytes_of(dir / "manifest.json"));
    for (const auto& e : m.entries) out.push_back(bytes_of(dir / e.image_path));

    const CropSet crops = load_crops(DatasetManifest::load(dir / "manifest.json"), default_jobs());
    std::vector<std::size_t> rows(crops.crops.size());
    std::iota(rows.begin(), rows.end(), 0);
    TrainOptions topt;
    topt.tune = false;
    topt.c = 8.0;
    topt.seed = 9;
    FeatureSettings fs_small;
    fs_small.colorbank_samples = 4000;
    fs_small.dsift_samples = 8000;
    fs_small.kmeans.max_iterations = 10;
    const auto model = serialize_model(train_model(crops, rows, FeatureKind::Combined5796, topt, fs_small));
    out.emplace_back(model.begin(), model.end());

    ExperimentSettings s;
    s.features = {FeatureKind::Lab90, FeatureKind::Gist512};
    s.classifiers = {ClassifierKind::Knn, ClassifierKind::Svm};
    s.perturbations = {Perturbation::None, Perturbation::LanePermutation};
    s.seed = 9;
    s.jobs = default_jobs();
    // Two training images per class are too few for inner cross-validation.
    s.tune_svm = false;
    s.svm_c = 8.0;
    const ExperimentReport r = run_experiment(crops, s);
    out.push_back(r.to_json());
    out.push_back(r.to_table());
  }
  fs::remove_all(root);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < artifacts[0].size(); ++i) differing += artifacts[0][i] != artifacts[1][i];
  const bool same = artifacts[0].size() == artifacts[1].size() && differing == 0;
  return {same, fmt("%zu artifacts compared (manifest, images, model, report), %zu differ", artifacts[0].size(), differing)};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments pick a subset of criteria, e.g. "pad_acceptance 2 3".
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  auto gate = [&](int id, const char* name, const std::function<Outcome()>& body) {
    if (!only.empty() && !only.count(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %-26s %s  %s  [%.1fs]\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  };
  gate(1, "dimensionality", dimensionality);
  gate(2, "rectification", rectification);
  gate(3, "blob selection", blob_selection);
  gate(4, "SVD oracle", svd_oracle);
  gate(5, "uniqueness", uniqueness);
  std::optional<ExperimentReport> report;
  gate(6, "end-to-end protocol", [&] {
    report = protocol_report();
    return end_to_end(*report);
  });
  gate(7, "lane permutation", [&] { return report ? permutation(*report) : Outcome{false, "protocol run failed"}; });
  gate(8, "classifier gates", classifier_gates);
  gate(9, "determinism", determinism);
  std::printf("%d of %zu criteria failed\n", failures, only.empty() ? std::size_t{9} : only.size());
  return failures;
}
