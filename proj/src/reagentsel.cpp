#include "pad/reagentsel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace pad {

using nlohmann::json;

namespace {

std::string record_key(const std::string& drug, const std::string& reagent) { return drug + "|" + reagent; }

double distance3(const RgbF& a, const RgbF& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

void FingerprintDatabase::validate() const {
  for (int i = 0; i < static_cast<int>(drugs.size()); ++i)
    for (int j = 0; j < static_cast<int>(reagents.size()); ++j) {
      auto it = records.find({i, j});
      if (it == records.end() || it->second.empty()) {
        fail(ErrorCode::Config, "fingerprint database lacks " + record_key(drugs[i], reagents[j]));
      }
      for (const auto& fp : it->second) {
        if (fp.lane_count() != 9) fail(ErrorCode::Config, "single-reagent fingerprints must have 9 lanes");
      }
    }
}

std::string FingerprintDatabase::to_json() const {
  json j;
  j["version"] = 1;
  j["drugs"] = drugs;
  j["reagents"] = reagents;
  json rec = json::object();
  for (const auto& [key, fps] : records) {
    json arr = json::array();
    for (const auto& fp : fps) {
      json v = json::array();
      for (double x : fp.flattened()) v.push_back(std::round(x * 1000.0) / 1000.0);
      arr.push_back(std::move(v));
    }
    rec[record_key(drugs.at(key.first), reagents.at(key.second))] = std::move(arr);
  }
  j["records"] = std::move(rec);
  return j.dump();
}

FingerprintDatabase FingerprintDatabase::from_json(const std::string& text) {
  FingerprintDatabase db;
  try {
    const json j = json::parse(text);
    if (j.at("version").get<int>() != 1) fail(ErrorCode::Config, "unsupported fingerprint database version");
    db.drugs = j.at("drugs").get<std::vector<std::string>>();
    db.reagents = j.at("reagents").get<std::vector<std::string>>();
    std::map<std::string, int> drug_index, reagent_index;
    for (int i = 0; i < static_cast<int>(db.drugs.size()); ++i) drug_index[db.drugs[i]] = i;
    for (int i = 0; i < static_cast<int>(db.reagents.size()); ++i) reagent_index[db.reagents[i]] = i;
    for (const auto& [key, arr] : j.at("records").items()) {
      const auto bar = key.find('|');
      if (bar == std::string::npos) fail(ErrorCode::Config, "bad record key " + key);
      const auto d = drug_index.find(key.substr(0, bar));
      const auto r = reagent_index.find(key.substr(bar + 1));
      if (d == drug_index.end() || r == reagent_index.end()) fail(ErrorCode::Config, "record key names unknown entries: " + key);
      auto& list = db.records[{d->second, r->second}];
      for (const auto& v : arr) {
        const auto values = v.get<std::vector<double>>();
        if (values.size() % 3 != 0) fail(ErrorCode::Config, "descriptor length must be a multiple of 3");
        Fingerprint fp;
        fp.drug = d->second;
        for (std::size_t k = 0; k < values.size(); k += 3) fp.lane_colors.push_back({values[k], values[k + 1], values[k + 2]});
        list.push_back(std::move(fp));
      }
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::Config, std::string("malformed fingerprint database: ") + ex.what());
  }
  return db;
}

DistanceMatrix build_distance_matrix(const FingerprintDatabase& db, const DistanceMatrixOptions& options) {
  db.validate();
  const int nd = static_cast<int>(db.drugs.size());
  const int nr = static_cast<int>(db.reagents.size());
  const bool blank = options.mode == MatrixEntryMode::DistanceFromBlank;
  if (blank && (options.blank_drug < 0 || options.blank_drug >= nd)) {
    fail(ErrorCode::Config, "distance-from-blank mode needs a valid blank drug");
  }
  auto mean_lanes = [&](int i, int j) {
    // Per-lane mean over replicates.
    const auto& fps = db.records.at({i, j});
    std::vector<RgbF> mean(9, RgbF{0, 0, 0});
    for (const auto& fp : fps)
      for (int l = 0; l < 9; ++l)
        for (int c = 0; c < 3; ++c) mean[l][c] += fp.lane_colors[l][c] / static_cast<double>(fps.size());
    return mean;
  };
  DistanceMatrix out{Eigen::MatrixXd::Zero(nd, nr)};
  for (int j = 0; j < nr; ++j) {
    std::vector<RgbF> reference(9, RgbF{255, 255, 255});
    if (blank) reference = mean_lanes(options.blank_drug, j);
    for (int i = 0; i < nd; ++i) {
      const auto& fps = db.records.at({i, j});
      double total = 0.0;
      for (const auto& fp : fps)
        for (int l = 0; l < 9; ++l) total += distance3(fp.lane_colors[l], reference[l]);
      out.m(i, j) = total / (9.0 * static_cast<double>(fps.size()));
    }
  }
  return out;
}

Svd svd(const DistanceMatrix& m) {
  if (!m.m.allFinite()) fail(ErrorCode::InvalidArgument, "distance matrix has non-finite entries");
  return jacobi_svd(m.m);
}

std::vector<double> reagent_scores(const Svd& s, int drug) {
  require(drug >= 0 && drug < s.u.rows(), "drug index out of range");
  const Eigen::Index n = s.v.rows();
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < s.s.size(); ++k) out[j] += s.s(k) * std::abs(s.u(drug, k) * s.v(j, k));
  return out;
}

std::vector<int> rank_reagents_for_drug(const DistanceMatrix& m, const Svd& s, int drug) {
  require(drug >= 0 && drug < m.drugs(), "drug index out of range");
  const std::vector<double> score = reagent_scores(s, drug);
  std::vector<int> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] > score[b]; });
  return order;
}

std::vector<int> select_panel(const DistanceMatrix& m, const Svd& s, int panel_size, std::span<const int> forced) {
  require(panel_size >= 1 && panel_size - 1 <= m.reagents(), "panel size exceeds the reagent catalog");
  std::vector<int> chosen;
  auto take = [&](int r) {
    if (std::find(chosen.begin(), chosen.end(), r) == chosen.end()) chosen.push_back(r);
  };
  for (int i = 0; i < m.drugs(); ++i) take(rank_reagents_for_drug(m, s, i).front());
  for (int r : forced) {
    require(r >= 0 && r < m.reagents(), "forced reagent out of range");
    take(r);
  }
  if (static_cast<int>(chosen.size()) > panel_size - 1) {
    fail(ErrorCode::InvalidArgument, "panel size " + std::to_string(panel_size) + " cannot hold " +
                                         std::to_string(chosen.size()) + " distinct reagents plus the timer");
  }
  std::vector<double> global(static_cast<std::size_t>(m.reagents()), 0.0);
  for (int i = 0; i < m.drugs(); ++i) {
    const auto sc = reagent_scores(s, i);
    for (std::size_t j = 0; j < sc.size(); ++j) global[j] += sc[j];
  }
  std::vector<int> order(global.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return global[a] > global[b]; });
  for (int r : order) {
    if (static_cast<int>(chosen.size()) >= panel_size - 1) break;
    take(r);
  }
  std::vector<int> panel{-1};
  panel.insert(panel.end(), chosen.begin(), chosen.end());
  return panel;
}

UniquenessReport verify_uniqueness(const std::vector<std::vector<std::vector<double>>>& replicates) {
  const std::size_t nd = replicates.size();
  std::vector<Eigen::VectorXd> means;
  UniquenessReport report;
  for (std::size_t d = 0; d < nd; ++d) {
    const auto& reps = replicates[d];
    if (reps.size() < 2) fail(ErrorCode::InvalidArgument, "every drug needs at least two replicates");
    const Eigen::Index dim = static_cast<Eigen::Index>(reps[0].size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& r : reps) {
      require(static_cast<Eigen::Index>(r.size()) == dim, "replicate descriptors differ in length");
      mean += Eigen::Map<const Eigen::VectorXd>(r.data(), dim);
    }
    mean /= static_cast<double>(reps.size());
    double ss = 0.0;
    for (const auto& r : reps) ss += (Eigen::Map<const Eigen::VectorXd>(r.data(), dim) - mean).squaredNorm();
    report.stds.push_back(std::sqrt(ss / static_cast<double>(reps.size() - 1)));
    means.push_back(std::move(mean));
  }
  report.pass = true;
  bool first = true;
  for (std::size_t p = 0; p < nd; ++p)
    for (std::size_t q = p + 1; q < nd; ++q) {
      require(means[p].size() == means[q].size(), "drug descriptors differ in length");
      PairMargin pm{static_cast<int>(p), static_cast<int>(q), (means[p] - means[q]).norm(), std::max(report.stds[p], report.stds[q])};
      if (!(pm.inter > pm.threshold)) {
        report.pass = false;
        report.failing.push_back(pm);
      }
      if (first || pm.margin() < report.worst.margin()) report.worst = pm;
      first = false;
      report.margins.push_back(pm);
    }
  return report;
}

std::string UniquenessReport::to_json(const std::vector<std::string>& names) const {
  auto name = [&](int i) { return i < static_cast<int>(names.size()) ? names[i] : std::to_string(i); };
  auto pair_json = [&](const PairMargin& m) {
    return json{{"a", name(m.p)}, {"b", name(m.q)}, {"inter", m.inter}, {"threshold", m.threshold}, {"margin", m.margin()}};
  };
  json j;
  j["version"] = 1;
  j["pass"] = pass;
  if (!margins.empty()) j["worst_pair"] = pair_json(worst);
  j["stds"] = stds;
  json fails = json::array();
  for (const auto& m : failing) fails.push_back(pair_json(m));
  j["failing"] = std::move(fails);
  json all = json::array();
  for (const auto& m : margins) all.push_back(pair_json(m));
  j["margins"] = std::move(all);
  return j.dump(1);
}

std::vector<std::vector<std::vector<double>>> panel_replicates(const FingerprintDatabase& db, std::span<const int> panel) {
  db.validate();
  std::vector<std::vector<std::vector<double>>> out(db.drugs.size());
  for (int d = 0; d < static_cast<int>(db.drugs.size()); ++d) {
    std::size_t reps = SIZE_MAX;
    for (int r : panel) {
      if (r >= 0) reps = std::min(reps, db.records.at({d, r}).size());
    }
    if (reps == SIZE_MAX) reps = 0;
    for (std::size_t k = 0; k < reps; ++k) {
      std::vector<double> v;
      for (int r : panel) {
        if (r < 0) continue;
        const auto f = db.records.at({d, r})[k].flattened();
        v.insert(v.end(), f.begin(), f.end());
      }
      out[d].push_back(std::move(v));
    }
  }
  return out;
}

}  // namespace pad
