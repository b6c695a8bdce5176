#include "pad/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "pad/image_io.hpp"

namespace pad {

using nlohmann::json;

namespace {

template <typename... Ts>
std::uint64_t seed_of(std::uint64_t seed, Ts... parts) {
  Digest d;
  d.update(seed);
  (d.update(static_cast<std::uint64_t>(parts)), ...);
  return d.value();
}

bool uses_colorbank(FeatureKind k) { return k == FeatureKind::ColorBank420 || k == FeatureKind::Combined5796; }
bool uses_dsift(FeatureKind k) { return k == FeatureKind::DenseSift5376 || k == FeatureKind::Combined5796; }

std::string display_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Lab90: return "Lab histogram";
    case FeatureKind::Gist512: return "GIST";
    case FeatureKind::ColorBank420: return "Color bank";
    case FeatureKind::DenseSift5376: return "Dense SIFT";
    case FeatureKind::Combined5796: return "Color bank + dense SIFT";
  }
  return "?";
}

}  // namespace

std::string FeatureSettings::digest() const {
  Digest d;
  d.update(static_cast<std::uint64_t>(colorbank_k)).update(static_cast<std::uint64_t>(dsift_k));
  d.update(static_cast<std::uint64_t>(colorbank_samples)).update(static_cast<std::uint64_t>(dsift_samples));
  d.update(static_cast<std::uint64_t>(kmeans.max_iterations)).update(kmeans.tolerance);
  d.update(static_cast<std::uint64_t>(dsift.stride)).update(dsift.min_contrast);
  for (int s : dsift.patch_sizes) d.update(static_cast<std::uint64_t>(s));
  return d.hex();
}

std::string image_digest(const Raster& img) {
  Digest d;
  d.update(static_cast<std::uint64_t>(img.width())).update(static_cast<std::uint64_t>(img.height()));
  d.update(img.data());
  return d.hex();
}

std::string feature_cache_key(const Raster& crop, FeatureKind kind, const DictionaryPair& dicts) {
  Digest d;
  d.update(image_digest(crop)).update(to_string(kind));
  if (uses_colorbank(kind) && dicts.colorbank) d.update(dicts.colorbank->digest());
  if (uses_dsift(kind) && dicts.dsift) d.update(dicts.dsift->digest());
  return d.hex();
}

FeatureVector compute_feature(const Raster& crop, FeatureKind kind, const DictionaryPair& dicts,
                              const FeatureSettings& settings) {
  auto need = [](const std::optional<Dictionary>& d, const char* what) -> const Dictionary& {
    if (!d) fail(ErrorCode::Config, std::string("feature needs a ") + what + " dictionary");
    return *d;
  };
  switch (kind) {
    case FeatureKind::Lab90: return lab_histogram(crop);
    case FeatureKind::Gist512: return gist(crop);
    case FeatureKind::ColorBank420: return color_bank(crop, need(dicts.colorbank, "color bank"));
    case FeatureKind::DenseSift5376: return dense_sift_feature(crop, need(dicts.dsift, "dense SIFT"), settings.dsift);
    case FeatureKind::Combined5796:
      return combine(color_bank(crop, need(dicts.colorbank, "color bank")),
                     dense_sift_feature(crop, need(dicts.dsift, "dense SIFT"), settings.dsift));
  }
  fail(ErrorCode::InvalidArgument, "unknown feature kind");
}

// ---------------------------------------------------------------------------

FeatureCache::FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(ErrorCode::Io, "cannot create cache directory " + dir_.string());
}

std::optional<FeatureVector> FeatureCache::get(const std::string& key) const {
  const auto path = dir_ / (key + ".bin");
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    return decode_feature(read_file(path));
  } catch (const Error&) {
    return std::nullopt;  // stale or truncated record: recompute
  }
}

namespace {

void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter++);
  write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::Io, "cannot write " + path.string());
}

}  // namespace

void FeatureCache::put(const std::string& key, const FeatureVector& f) const {
  write_atomic(dir_ / (key + ".bin"), encode_feature(f));
}

std::optional<Dictionary> FeatureCache::get_dictionary(const std::string& key) const {
  const auto path = dir_ / ("dict-" + key + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto bytes = read_file(path);
  try {
    return Dictionary::from_json(std::string(bytes.begin(), bytes.end()));
  } catch (const Error&) {
    return std::nullopt;
  }
}

void FeatureCache::put_dictionary(const std::string& key, const Dictionary& d) const {
  const std::string text = d.to_json();
  write_atomic(dir_ / ("dict-" + key + ".json"), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------

namespace {

struct ImageSamples {
  DescriptorMatrix colorbank;
  DescriptorMatrix dsift;
};

ImageSamples sample_image(const Raster& crop, bool cb, bool ds, std::size_t per_cb, std::size_t per_ds,
                          const FeatureSettings& settings, std::uint64_t seed) {
  ImageSamples s;
  const std::uint64_t img = Digest().update(image_digest(crop)).value();
  if (cb) {
    const LocalDescriptorSet h = extract_patch_histograms(color_name_map(crop));
    s.colorbank = sample_rows({&h.descriptors}, per_cb, seed_of(seed, img, 1));
  }
  if (ds) {
    const LocalDescriptorSet d = dense_sift_descriptors(crop, settings.dsift);
    s.dsift = sample_rows({&d.descriptors}, per_ds, seed_of(seed, img, 2));
  }
  return s;
}

Dictionary fit_dictionary(const std::vector<const DescriptorMatrix*>& samples, FeatureKind kind, int k, std::size_t cap,
                          const KMeansOptions& options, std::uint64_t seed, const std::string& training_digest) {
  const DescriptorMatrix data = sample_rows(samples, cap, seed_of(seed, 3));
  Dictionary d = kmeans(data, k, seed_of(seed, 4), options);
  d.kind = kind;
  d.training_digest = training_digest;
  return d;
}

std::string dictionary_key(const std::vector<std::string>& image_digests, FeatureKind kind, const FeatureSettings& settings,
                           std::uint64_t seed) {
  Digest d;
  for (const auto& s : image_digests) d.update(s);
  d.update(to_string(kind)).update(settings.digest()).update(seed);
  return d.hex();
}

std::size_t div_ceil(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

DictionaryPair train_dictionaries(const std::vector<const Raster*>& train, const std::vector<FeatureKind>& kinds,
                                  const FeatureSettings& settings, std::uint64_t seed, int jobs, const FeatureCache* cache) {
  require(!train.empty(), "no training images for the dictionaries");
  bool cb = false, ds = false;
  for (FeatureKind k : kinds) {
    cb = cb || uses_colorbank(k);
    ds = ds || uses_dsift(k);
  }
  DictionaryPair out;
  if (!cb && !ds) return out;
  std::vector<std::string> digests(train.size());
  parallel_for(train.size(), jobs, [&](std::size_t i) { digests[i] = image_digest(*train[i]); });
  const std::string cb_key = dictionary_key(digests, FeatureKind::ColorBank420, settings, seed);
  const std::string ds_key = dictionary_key(digests, FeatureKind::DenseSift5376, settings, seed);
  if (cache) {
    if (cb) out.colorbank = cache->get_dictionary(cb_key);
    if (ds) out.dsift = cache->get_dictionary(ds_key);
  }
  const bool need_cb = cb && !out.colorbank;
  const bool need_ds = ds && !out.dsift;
  if (!need_cb && !need_ds) return out;

  const std::size_t per_cb = div_ceil(settings.colorbank_samples, train.size());
  const std::size_t per_ds = div_ceil(settings.dsift_samples, train.size());
  std::vector<ImageSamples> samples(train.size());
  parallel_for(train.size(), jobs, [&](std::size_t i) {
    samples[i] = sample_image(*train[i], need_cb, need_ds, per_cb, per_ds, settings, seed);
  });
  std::vector<const DescriptorMatrix*> cb_sets, ds_sets;
  for (const auto& s : samples) {
    cb_sets.push_back(&s.colorbank);
    ds_sets.push_back(&s.dsift);
  }
  std::vector<std::function<void()>> tasks;
  if (need_cb) {
    tasks.emplace_back([&] {
      out.colorbank = fit_dictionary(cb_sets, FeatureKind::ColorBank420, settings.colorbank_k, settings.colorbank_samples,
                                     settings.kmeans, seed_of(seed, 10), cb_key);
    });
  }
  if (need_ds) {
    tasks.emplace_back([&] {
      out.dsift = fit_dictionary(ds_sets, FeatureKind::DenseSift5376, settings.dsift_k, settings.dsift_samples,
                                 settings.kmeans, seed_of(seed, 11), ds_key);
    });
  }
  parallel_for(tasks.size(), jobs, [&](std::size_t t) { tasks[t](); });
  if (cache) {
    if (need_cb) cache->put_dictionary(cb_key, *out.colorbank);
    if (need_ds) cache->put_dictionary(ds_key, *out.dsift);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(Perturbation p) { return p == Perturbation::None ? "none" : "lane_permutation"; }

Perturbation parse_perturbation(std::string_view name) {
  if (name == "none") return Perturbation::None;
  if (name == "lane_permutation" || name == "lane-permutation") return Perturbation::LanePermutation;
  fail(ErrorCode::Config, "unknown perturbation '" + std::string(name) + "'");
}

namespace {

json settings_json(const ExperimentSettings& s) {
  json j;
  std::vector<std::string> features, classifiers, perturbations;
  for (auto f : s.features) features.push_back(to_string(f));
  for (auto c : s.classifiers) classifiers.push_back(to_string(c));
  for (auto p : s.perturbations) perturbations.push_back(to_string(p));
  j["features"] = features;
  j["classifiers"] = classifiers;
  j["perturbations"] = perturbations;
  j["folds"] = s.folds;
  j["seed"] = s.seed;
  j["tune_svm"] = s.tune_svm;
  j["svm_c"] = s.svm_c;
  j["svm_gamma"] = s.svm_gamma;
  j["grid_c"] = s.grid.c;
  j["grid_gamma"] = s.grid.gamma;
  j["colorbank_k"] = s.feature.colorbank_k;
  j["dsift_k"] = s.feature.dsift_k;
  j["colorbank_samples"] = s.feature.colorbank_samples;
  j["dsift_samples"] = s.feature.dsift_samples;
  j["kmeans_iterations"] = s.feature.kmeans.max_iterations;
  j["kmeans_tolerance"] = s.feature.kmeans.tolerance;
  j["dsift_stride"] = s.feature.dsift.stride;
  j["dsift_sizes"] = s.feature.dsift.patch_sizes;
  j["dsift_min_contrast"] = s.feature.dsift.min_contrast;
  return j;
}

void settings_from(const json& j, ExperimentSettings& s) {
  if (j.contains("features")) {
    s.features.clear();
    for (const auto& f : j["features"]) s.features.push_back(parse_feature_kind(f.get<std::string>()));
  }
  if (j.contains("classifiers")) {
    s.classifiers.clear();
    for (const auto& c : j["classifiers"]) s.classifiers.push_back(parse_classifier_kind(c.get<std::string>()));
  }
  if (j.contains("perturbation")) s.perturbations = {parse_perturbation(j["perturbation"].get<std::string>())};
  if (j.contains("perturbations")) {
    s.perturbations.clear();
    for (const auto& p : j["perturbations"]) s.perturbations.push_back(parse_perturbation(p.get<std::string>()));
  }
  s.folds = j.value("folds", s.folds);
  s.seed = j.value("seed", s.seed);
  s.tune_svm = j.value("tune_svm", s.tune_svm);
  s.svm_c = j.value("svm_c", s.svm_c);
  s.svm_gamma = j.value("svm_gamma", s.svm_gamma);
  s.grid.c = j.value("grid_c", s.grid.c);
  s.grid.gamma = j.value("grid_gamma", s.grid.gamma);
  s.feature.colorbank_k = j.value("colorbank_k", s.feature.colorbank_k);
  s.feature.dsift_k = j.value("dsift_k", s.feature.dsift_k);
  s.feature.colorbank_samples = j.value("colorbank_samples", s.feature.colorbank_samples);
  s.feature.dsift_samples = j.value("dsift_samples", s.feature.dsift_samples);
  s.feature.kmeans.max_iterations = j.value("kmeans_iterations", s.feature.kmeans.max_iterations);
  s.feature.kmeans.tolerance = j.value("kmeans_tolerance", s.feature.kmeans.tolerance);
  s.feature.dsift.stride = j.value("dsift_stride", s.feature.dsift.stride);
  s.feature.dsift.patch_sizes = j.value("dsift_sizes", s.feature.dsift.patch_sizes);
  s.feature.dsift.min_contrast = j.value("dsift_min_contrast", s.feature.dsift.min_contrast);
  s.jobs = j.value("jobs", s.jobs);
  if (s.features.empty() || s.classifiers.empty() || s.perturbations.empty()) {
    fail(ErrorCode::Config, "experiment needs at least one feature, classifier and perturbation");
  }
  if (s.folds < 2) fail(ErrorCode::Config, "experiment needs at least two folds");
}

}  // namespace

std::string ExperimentSettings::digest() const { return Digest().update(settings_json(*this).dump()).hex(); }

// ---------------------------------------------------------------------------

const CellResult* ExperimentReport::find(FeatureKind f, ClassifierKind c, Perturbation p) const {
  for (const auto& cell : cells)
    if (cell.feature == f && cell.classifier == c && cell.perturbation == p) return &cell;
  return nullptr;
}

std::string ExperimentReport::to_json() const {
  json j;
  j["version"] = 1;
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  j["classes"] = class_names;
  j["dropped"] = dropped;
  json cells_json = json::array();
  for (const auto& c : cells) {
    json cj;
    cj["feature"] = to_string(c.feature);
    cj["classifier"] = to_string(c.classifier);
    cj["perturbation"] = to_string(c.perturbation);
    std::vector<double> acc;
    std::vector<int> correct, total;
    for (const auto& f : c.folds) {
      acc.push_back(f.accuracy);
      correct.push_back(f.correct);
      total.push_back(f.total);
    }
    cj["fold_accuracy"] = acc;
    cj["fold_correct"] = correct;
    cj["fold_total"] = total;
    if (!c.hyperparams.empty()) {
      json hp = json::array();
      for (const auto& [cc, g] : c.hyperparams) hp.push_back({{"C", cc}, {"gamma", g}});
      cj["hyperparams"] = std::move(hp);
    }
    cj["mean_accuracy"] = c.mean_accuracy;
    cj["mean_correct"] = c.mean_correct;
    cj["confusion"] = c.pooled.counts;
    cj["confidence"] = c.pooled.confidence;
    cells_json.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells_json);
  return j.dump(1) + "\n";
}

std::string ExperimentReport::to_table() const {
  std::string out = "Average top-1 accuracy over folds (seed " + std::to_string(seed) + ", config " + config_digest + ")\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-26s %-10s %-17s %s\n", "Features", "Classifier", "Lane order", "Accuracy");
  out += line;
  out += std::string(76, '-') + "\n";
  for (const auto& c : cells) {
    char acc[64];
    std::snprintf(acc, sizeof acc, "%.0f/%.0f (%.2f%%)", c.mean_correct, c.mean_total, 100.0 * c.mean_accuracy);
    std::snprintf(line, sizeof line, "%-26s %-10s %-17s %s\n", display_name(c.feature).c_str(),
                  c.classifier == ClassifierKind::Knn ? "kNN" : "SVM",
                  c.perturbation == Perturbation::None ? "canonical" : "random lane order", acc);
    out += line;
  }
  if (!dropped.empty()) out += "\n" + std::to_string(dropped.size()) + " image(s) failed rectification and were left out.\n";
  return out;
}

// ---------------------------------------------------------------------------

ExperimentReport run_experiment(const CropSet& data, const ExperimentSettings& settings, const FeatureCache* cache) {
  const std::size_t n = data.crops.size();
  require(n > 0 && data.labels.size() == n && data.folds.size() == n, "crop set is inconsistent");
  const int classes = static_cast<int>(data.class_names.size());
  const int folds = settings.folds;
  for (int f : data.folds) require(f >= 0 && f < folds, "fold index out of range");
  const int jobs = settings.jobs;
  const CardLayout layout = canonical_layout(data.lane_count);

  bool want_perm = false, need_lab = false, need_gist = false, need_cb = false, need_ds = false;
  for (auto p : settings.perturbations) want_perm = want_perm || p == Perturbation::LanePermutation;
  for (auto k : settings.features) {
    need_lab = need_lab || k == FeatureKind::Lab90;
    need_gist = need_gist || k == FeatureKind::Gist512;
    need_cb = need_cb || uses_colorbank(k);
    need_ds = need_ds || uses_dsift(k);
  }
  std::vector<std::vector<int>> perms(static_cast<std::size_t>(folds));
  for (int f = 0; f < folds; ++f) perms[f] = random_derangement(layout.lane_count, seed_of(settings.seed, 0x9e12, f));
  auto permuted = [&](std::size_t i) { return permute_lanes(data.crops[i], layout, perms[data.folds[i]]); };

  // Features that do not depend on a dictionary; [0] canonical, [1] permuted.
  std::array<std::vector<FeatureVector>, 2> lab, gst;
  for (int v = 0; v < (want_perm ? 2 : 1); ++v) {
    if (need_lab) lab[v].resize(n);
    if (need_gist) gst[v].resize(n);
  }
  parallel_for(n, jobs, [&](std::size_t i) {
    for (int v = 0; v < (want_perm ? 2 : 1); ++v) {
      const Raster crop = v == 0 ? data.crops[i] : permuted(i);
      if (need_lab) lab[v][i] = lab_histogram(crop);
      if (need_gist) gst[v][i] = gist(crop);
    }
  });

  // Per-fold dictionaries from training crops only.
  std::vector<DictionaryPair> dicts(static_cast<std::size_t>(folds));
  if (need_cb || need_ds) {
    std::vector<std::string> digests(n);
    parallel_for(n, jobs, [&](std::size_t i) { digests[i] = image_digest(data.crops[i]); });
    std::vector<std::vector<std::string>> train_digests(static_cast<std::size_t>(folds));
    std::size_t min_train = n;
    for (int f = 0; f < folds; ++f) {
      for (std::size_t i = 0; i < n; ++i)
        if (data.folds[i] != f) train_digests[f].push_back(digests[i]);
      require(!train_digests[f].empty(), "a fold has no training images");
      min_train = std::min(min_train, train_digests[f].size());
    }
    bool missing = false;
    for (int f = 0; f < folds; ++f) {
      const std::uint64_t fs = seed_of(settings.seed, 0xd1c7, f);
      if (cache && need_cb)
        dicts[f].colorbank = cache->get_dictionary(dictionary_key(train_digests[f], FeatureKind::ColorBank420, settings.feature, fs));
      if (cache && need_ds)
        dicts[f].dsift = cache->get_dictionary(dictionary_key(train_digests[f], FeatureKind::DenseSift5376, settings.feature, fs));
      missing = missing || (need_cb && !dicts[f].colorbank) || (need_ds && !dicts[f].dsift);
    }
    if (missing) {
      // Each image contributes the same number of samples, so the union is a
      // uniform sample of every fold's training descriptors.
      const std::size_t per_cb = div_ceil(settings.feature.colorbank_samples, min_train);
      const std::size_t per_ds = div_ceil(settings.feature.dsift_samples, min_train);
      std::vector<ImageSamples> samples(n);
      parallel_for(n, jobs, [&](std::size_t i) {
        samples[i] = sample_image(data.crops[i], need_cb, need_ds, per_cb, per_ds, settings.feature, settings.seed);
      });
      std::vector<std::function<void()>> tasks;
      for (int f = 0; f < folds; ++f) {
        const std::uint64_t fs = seed_of(settings.seed, 0xd1c7, f);
        std::vector<const DescriptorMatrix*> cb_sets, ds_sets;
        for (std::size_t i = 0; i < n; ++i) {
          if (data.folds[i] == f) continue;
          cb_sets.push_back(&samples[i].colorbank);
          ds_sets.push_back(&samples[i].dsift);
        }
        if (need_cb && !dicts[f].colorbank) {
          tasks.emplace_back([&, f, fs, cb_sets] {
            const std::string key = dictionary_key(train_digests[f], FeatureKind::ColorBank420, settings.feature, fs);
            dicts[f].colorbank = fit_dictionary(cb_sets, FeatureKind::ColorBank420, settings.feature.colorbank_k,
                                                settings.feature.colorbank_samples, settings.feature.kmeans, seed_of(fs, 10), key);
            if (cache) cache->put_dictionary(key, *dicts[f].colorbank);
          });
        }
        if (need_ds && !dicts[f].dsift) {
          tasks.emplace_back([&, f, fs, ds_sets] {
            const std::string key = dictionary_key(train_digests[f], FeatureKind::DenseSift5376, settings.feature, fs);
            dicts[f].dsift = fit_dictionary(ds_sets, FeatureKind::DenseSift5376, settings.feature.dsift_k,
                                            settings.feature.dsift_samples, settings.feature.kmeans, seed_of(fs, 11), key);
            if (cache) cache->put_dictionary(key, *dicts[f].dsift);
          });
        }
      }
      parallel_for(tasks.size(), jobs, [&](std::size_t t) { tasks[t](); });
    }
  }

  // Dictionary features: [variant][fold][image].
  using Table = std::vector<std::vector<FeatureVector>>;
  std::array<Table, 2> cbf, dsf;
  for (int v = 0; v < 2; ++v) {
    cbf[v].assign(static_cast<std::size_t>(folds), std::vector<FeatureVector>(need_cb ? n : 0));
    dsf[v].assign(static_cast<std::size_t>(folds), std::vector<FeatureVector>(need_ds ? n : 0));
  }
  if (need_cb || need_ds) {
    parallel_for(n, jobs, [&](std::size_t i) {
      for (int v = 0; v < (want_perm ? 2 : 1); ++v) {
        const Raster crop = v == 0 ? data.crops[i] : permuted(i);
        std::optional<LocalDescriptorSet> hist, sift;
        for (int f = 0; f < folds; ++f) {
          if (v == 1 && f != data.folds[i]) continue;  // permuted crops are test-only
          if (need_cb) {
            const std::string key = feature_cache_key(crop, FeatureKind::ColorBank420, dicts[f]);
            std::optional<FeatureVector> hit = cache ? cache->get(key) : std::nullopt;
            if (!hit) {
              if (!hist) hist = extract_patch_histograms(color_name_map(crop));
              hit = color_bank(*hist, *dicts[f].colorbank);
              if (cache) cache->put(key, *hit);
            }
            cbf[v][f][i] = std::move(*hit);
          }
          if (need_ds) {
            const std::string key = feature_cache_key(crop, FeatureKind::DenseSift5376, dicts[f]);
            std::optional<FeatureVector> hit = cache ? cache->get(key) : std::nullopt;
            if (!hit) {
              if (!sift) sift = dense_sift_descriptors(crop, settings.feature.dsift);
              hit = dense_sift_feature(*sift, *dicts[f].dsift);
              if (cache) cache->put(key, *hit);
            }
            dsf[v][f][i] = std::move(*hit);
          }
        }
      }
    });
  }

  auto feature_of = [&](FeatureKind k, int v, int f, std::size_t i) -> FeatureVector {
    switch (k) {
      case FeatureKind::Lab90: return lab[v][i];
      case FeatureKind::Gist512: return gst[v][i];
      case FeatureKind::ColorBank420: return cbf[v][f][i];
      case FeatureKind::DenseSift5376: return dsf[v][f][i];
      case FeatureKind::Combined5796: return combine(cbf[v][f][i], dsf[v][f][i]);
    }
    fail(ErrorCode::InvalidArgument, "unknown feature kind");
  };

  ExperimentReport report;
  report.config_digest = settings.digest();
  report.seed = settings.seed;
  report.class_names = data.class_names;
  report.dropped = data.dropped;
  struct Accumulator {
    CellResult cell;
    std::vector<Prediction> predictions;
    std::vector<int> truth;
  };
  std::vector<Accumulator> acc;
  for (auto k : settings.features)
    for (auto c : settings.classifiers)
      for (auto p : settings.perturbations) {
        Accumulator a;
        a.cell.feature = k;
        a.cell.classifier = c;
        a.cell.perturbation = p;
        acc.push_back(std::move(a));
      }
  auto find_acc = [&](FeatureKind k, ClassifierKind c, Perturbation p) -> Accumulator& {
    for (auto& a : acc)
      if (a.cell.feature == k && a.cell.classifier == c && a.cell.perturbation == p) return a;
    fail(ErrorCode::InvalidArgument, "missing report cell");
  };

  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < n; ++i) (data.folds[i] == f ? test_rows : train_rows).push_back(i);
    for (auto k : settings.features) {
      LabeledSet train;
      for (std::size_t i : train_rows) {
        train.vectors.push_back(feature_of(k, 0, f, i));
        train.labels.push_back(data.labels[i]);
      }
      for (auto c : settings.classifiers) {
        TrainOptions opt;
        opt.classifier = c;
        opt.tune = settings.tune_svm;
        opt.c = settings.svm_c;
        opt.gamma = settings.svm_gamma;
        opt.grid = settings.grid;
        opt.seed = seed_of(settings.seed, 0x5e1, f);
        opt.jobs = jobs;
        TrainReport tr;
        const TrainedModel model = train_classifier(train, classes, opt, &tr);
        for (auto p : settings.perturbations) {
          const int v = p == Perturbation::None ? 0 : 1;
          std::vector<FeatureVector> test;
          std::vector<int> truth;
          for (std::size_t i : test_rows) {
            test.push_back(feature_of(k, v, f, i));
            truth.push_back(data.labels[i]);
          }
          const auto preds = model.predict_all(test);
          Accumulator& a = find_acc(k, c, p);
          a.cell.folds.push_back(evaluate(preds, truth, classes));
          if (c == ClassifierKind::Svm) a.cell.hyperparams.emplace_back(model.svm.c, model.svm.gamma);
          a.predictions.insert(a.predictions.end(), preds.begin(), preds.end());
          a.truth.insert(a.truth.end(), truth.begin(), truth.end());
        }
      }
    }
  }
  for (auto& a : acc) {
    CellResult& c = a.cell;
    for (const auto& f : c.folds) {
      c.mean_accuracy += f.accuracy / folds;
      c.mean_correct += static_cast<double>(f.correct) / folds;
      c.mean_total += static_cast<double>(f.total) / folds;
    }
    c.pooled = evaluate(a.predictions, a.truth, classes);
    report.cells.push_back(std::move(c));
  }
  return report;
}

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::filesystem::path& base) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base.empty() ? path : base / path;
    };
    c.manifest = resolve(j.at("manifest").get<std::string>());
    c.output_dir = resolve(j.value("output_dir", std::string("experiment-out")));
    if (j.contains("cache_dir")) c.cache_dir = resolve(j["cache_dir"].get<std::string>());
    settings_from(j, c.settings);
  } catch (const json::exception& ex) {
    fail(ErrorCode::Config, std::string("malformed experiment config: ") + ex.what());
  }
  return c;
}

std::string ExperimentConfig::to_json() const {
  json j = settings_json(settings);
  j["manifest"] = manifest.string();
  j["output_dir"] = output_dir.string();
  if (cache_dir) j["cache_dir"] = cache_dir->string();
  return j.dump(1);
}

CropSet load_crops(const DatasetManifest& manifest, int jobs) {
  const CardLayout layout = canonical_layout(manifest.lane_count);
  const std::size_t n = manifest.entries.size();
  std::vector<std::optional<Raster>> crops(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const Raster raw = read_png(manifest.image_file(manifest.entries[i]));
    try {
      crops[i] = rectify_pipeline(raw, layout).crop;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotEnoughFiducials && e.code() != ErrorCode::DegenerateFiducials) throw;
    }
  });
  CropSet set;
  set.class_names = manifest.drugs;
  set.lane_count = manifest.lane_count;
  for (std::size_t i = 0; i < n; ++i) {
    const ManifestEntry& e = manifest.entries[i];
    if (!crops[i]) {
      set.dropped.push_back(e.id);
      continue;
    }
    set.crops.push_back(std::move(*crops[i]));
    set.labels.push_back(e.drug_index);
    set.folds.push_back(e.fold);
    set.ids.push_back(e.id);
  }
  return set;
}

CropSet synthesize_crops(const DatasetConfig& config, std::uint64_t seed, int jobs) {
  const DatasetManifest manifest = plan_dataset(config, seed);
  const ReactionColorModel model = make_color_model(config);
  const std::vector<int> panel = resolve_panel(config, model);
  const CardLayout layout = canonical_layout(config.lane_count);
  const std::size_t n = manifest.entries.size();
  std::vector<std::optional<Raster>> crops(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    const RenderedCard card = render_card(CardSpec::panel(e.drug_index, panel), layout, model, config.distortion, e.seed);
    try {
      crops[i] = rectify_pipeline(card.image, layout).crop;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NotEnoughFiducials && err.code() != ErrorCode::DegenerateFiducials) throw;
    }
  });
  CropSet set;
  set.class_names = manifest.drugs;
  set.lane_count = config.lane_count;
  for (std::size_t i = 0; i < n; ++i) {
    const ManifestEntry& e = manifest.entries[i];
    if (!crops[i]) {
      set.dropped.push_back(e.id);
      continue;
    }
    set.crops.push_back(std::move(*crops[i]));
    set.labels.push_back(e.drug_index);
    set.folds.push_back(e.fold);
    set.ids.push_back(e.id);
  }
  return set;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  if (!std::filesystem::exists(config.manifest)) fail(ErrorCode::Config, "manifest not found: " + config.manifest.string());
  DatasetManifest manifest = DatasetManifest::load(config.manifest);
  manifest.validate();
  if (manifest.folds != config.settings.folds) {
    const FoldPlan plan = kfold_split(manifest, config.settings.folds, config.settings.seed);
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
      manifest.entries[i].fold = plan.fold[i];
      manifest.entries[i].split = plan.fold[i] == 0 ? "test" : "train";
    }
    manifest.folds = config.settings.folds;
  }
  const CropSet crops = load_crops(manifest, config.settings.jobs);
  std::optional<FeatureCache> cache;
  if (config.cache_dir) cache.emplace(*config.cache_dir);
  ExperimentReport report = run_experiment(crops, config.settings, cache ? &*cache : nullptr);
  write_text(config.output_dir / "report.json", report.to_json());
  write_text(config.output_dir / "report.txt", report.to_table());
  return report;
}

TrainedModel train_model(const CropSet& data, const std::vector<std::size_t>& rows, FeatureKind feature,
                         const TrainOptions& options, const FeatureSettings& settings, const FeatureCache* cache,
                         TrainReport* report) {
  require(!rows.empty(), "no training images");
  std::vector<const Raster*> train;
  for (std::size_t r : rows) train.push_back(&data.crops.at(r));
  const DictionaryPair dicts = train_dictionaries(train, {feature}, settings, options.seed, options.jobs, cache);
  LabeledSet set;
  set.vectors.resize(rows.size());
  parallel_for(rows.size(), options.jobs, [&](std::size_t i) {
    const Raster& crop = *train[i];
    const std::string key = feature_cache_key(crop, feature, dicts);
    if (cache) {
      if (auto hit = cache->get(key)) {
        set.vectors[i] = std::move(*hit);
        return;
      }
    }
    set.vectors[i] = compute_feature(crop, feature, dicts, settings);
    if (cache) cache->put(key, set.vectors[i]);
  });
  Digest digest;
  for (std::size_t r : rows) {
    set.labels.push_back(data.labels[r]);
    set.ids.push_back(r < data.ids.size() ? data.ids[r] : std::to_string(r));
    digest.update(image_digest(data.crops[r])).update(static_cast<std::uint64_t>(data.labels[r]));
  }
  TrainedModel model = train_classifier(set, static_cast<int>(data.class_names.size()), options, report);
  model.class_names = data.class_names;
  model.lane_count = data.lane_count;
  model.colorbank_dictionary = dicts.colorbank;
  model.dsift_dictionary = dicts.dsift;
  model.training_digest = digest.update(settings.digest()).hex();
  return model;
}

PipelineResult pipeline_predict(const Raster& image, const TrainedModel& model) {
  const CardLayout layout = canonical_layout(model.lane_count);
  PipelineResult out;
  if (image.width() == layout.crop_window.w && image.height() == layout.crop_window.h) {
    out.crop = image;
  } else {
    out.rectify = rectify_pipeline(image, layout);
    out.rectified = true;
    out.crop = out.rectify->crop;
  }
  out.fingerprint = extract_fingerprint(out.crop, layout);
  out.feature = compute_feature(out.crop, model.feature, {model.colorbank_dictionary, model.dsift_dictionary});
  out.prediction = model.predict(out.feature);
  out.label_name = out.prediction.label < model.class_count() ? model.class_names[out.prediction.label] : "?";
  return out;
}

FingerprintDatabase build_fingerprint_database(const ReactionColorModel& model, int replicates, std::uint64_t seed,
                                               const DistortionParams& distortion, int jobs) {
  require(replicates >= 1, "at least one replicate per pair");
  const CardLayout layout = canonical_layout(9);
  const int nd = model.drug_count();
  const int nr = model.reagent_count();
  FingerprintDatabase db;
  for (int i = 0; i < nd; ++i) db.drugs.push_back(i < kDrugCount ? drug_names()[i] : "drug-" + std::to_string(i));
  for (int j = 0; j < nr; ++j) db.reagents.push_back(j < kReagentCount ? reagent_names()[j] : "reagent-" + std::to_string(j));
  const std::size_t total = static_cast<std::size_t>(nd) * nr * replicates;
  std::vector<Fingerprint> fps(total);
  parallel_for(total, jobs, [&](std::size_t t) {
    const int rep = static_cast<int>(t % replicates);
    const int j = static_cast<int>((t / replicates) % nr);
    const int i = static_cast<int>(t / replicates / nr);
    const std::uint64_t s = seed_of(seed, i, j, rep);
    const RenderedCard card = render_canonical(CardSpec::single_reagent(i, j), layout, model, distortion, s);
    const LaneAlignment aligned = refine_lane_alignment(card.image, layout);
    Raster crop = crop_salient(aligned.image, layout);
    add_pixel_noise(crop, distortion.noise_sigma, seed_of(s, 0x0153));
    fps[t] = extract_fingerprint(crop, layout);
    fps[t].drug = i;
  });
  for (std::size_t t = 0; t < total; ++t) {
    const int j = static_cast<int>((t / replicates) % nr);
    const int i = static_cast<int>(t / replicates / nr);
    db.records[{i, j}].push_back(std::move(fps[t]));
  }
  return db;
}

}  // namespace pad
