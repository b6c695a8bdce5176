#include "pad/dataset.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include <json.hpp>

#include "pad/error.hpp"
#include "pad/image_io.hpp"

namespace pad {

using nlohmann::json;

std::vector<int> DatasetManifest::labels() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.drug_index);
  return out;
}

void DatasetManifest::validate() const {
  if (folds < 1) fail(ErrorCode::Config, "manifest folds must be >= 1");
  std::map<int, std::vector<int>> per_drug_fold_counts;
  for (const auto& e : entries) {
    if (e.drug_index < 0 || e.drug_index >= static_cast<int>(drugs.size())) {
      fail(ErrorCode::Config, "manifest entry " + e.id + " has drug index out of range");
    }
    if (drugs[e.drug_index] != e.drug_label) fail(ErrorCode::Config, "manifest entry " + e.id + " label mismatch");
    if (e.fold < 0 || e.fold >= folds) fail(ErrorCode::Config, "manifest entry " + e.id + " has fold out of range");
    if (e.split != "train" && e.split != "test") fail(ErrorCode::Config, "manifest entry " + e.id + " has bad split");
    if ((e.split == "test") != (e.fold == 0)) fail(ErrorCode::Config, "manifest entry " + e.id + " split/fold mismatch");
    auto& counts = per_drug_fold_counts[e.drug_index];
    counts.resize(static_cast<std::size_t>(folds), 0);
    ++counts[static_cast<std::size_t>(e.fold)];
  }
  for (const auto& [drug, counts] : per_drug_fold_counts) {
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    if (*hi - *lo > 1) fail(ErrorCode::Config, "drug " + drugs[drug] + " is not stratified across folds");
  }
}

std::string DatasetManifest::to_json() const {
  json j;
  j["version"] = 1;
  j["lane_count"] = lane_count;
  j["folds"] = folds;
  j["seed"] = seed;
  j["generator_digest"] = generator_digest;
  j["drugs"] = drugs;
  j["panel"] = panel;
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"id", e.id},
                   {"image_path", e.image_path},
                   {"drug_label", e.drug_label},
                   {"drug_index", e.drug_index},
                   {"split", e.split},
                   {"fold", e.fold},
                   {"seed", e.seed}});
  }
  j["entries"] = std::move(arr);
  return j.dump(1);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    if (j.at("version").get<int>() != 1) fail(ErrorCode::Config, "unsupported manifest version");
    m.lane_count = j.value("lane_count", 12);
    m.folds = j.value("folds", 3);
    m.seed = j.value("seed", std::uint64_t{0});
    m.generator_digest = j.value("generator_digest", std::string{});
    m.drugs = j.at("drugs").get<std::vector<std::string>>();
    m.panel = j.value("panel", std::vector<int>{});
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.image_path = e.at("image_path").get<std::string>();
      entry.drug_label = e.at("drug_label").get<std::string>();
      entry.drug_index = e.at("drug_index").get<int>();
      entry.split = e.at("split").get<std::string>();
      entry.fold = e.at("fold").get<int>();
      entry.seed = e.value("seed", std::uint64_t{0});
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::Config, std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const { write_text(path, to_json()); }

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  DatasetManifest m = from_json(std::string(bytes.begin(), bytes.end()));
  m.base_dir = path.parent_path();
  return m;
}

std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  require(folds >= 1, "folds must be >= 1");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  std::vector<int> out(labels.size(), 0);
  std::mt19937_64 rng(seed);
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = idx.size();
    for (std::size_t r = 0; r < n; ++r) out[idx[r]] = static_cast<int>(r * static_cast<std::size_t>(folds) / n);
  }
  return out;
}

}  // namespace pad
