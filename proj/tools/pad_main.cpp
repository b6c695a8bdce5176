// pad: synthetic PAD card generation, rectification and classification.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pad/experiment.hpp"
#include "pad/image_io.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitFiducial = 2;
constexpr int kExitDecode = 3;
constexpr int kExitConfig = 4;

int exit_code(pad::ErrorCode code) {
  switch (code) {
    case pad::ErrorCode::NotEnoughFiducials:
    case pad::ErrorCode::DegenerateFiducials: return kExitFiducial;
    case pad::ErrorCode::DecodeError: return kExitDecode;
    case pad::ErrorCode::Config: return kExitConfig;
    default: return kExitFailure;
  }
}

struct Globals {
  std::uint64_t seed = 0;
  int jobs = 0;
  int layout = 12;
};

std::string slurp(const fs::path& p) {
  const auto bytes = pad::read_file(p);
  return {bytes.begin(), bytes.end()};
}

void write_json(const fs::path& p, const json& j) { pad::write_text(p, j.dump(1) + "\n"); }

pad::CardLayout layout_of(int lanes) {
  if (lanes != 9 && lanes != 12) pad::fail(pad::ErrorCode::Config, "--layout must be 9 or 12");
  return pad::canonical_layout(lanes);
}

bool is_crop(const pad::Raster& img, const pad::CardLayout& layout) {
  return img.width() == layout.crop_window.w && img.height() == layout.crop_window.h;
}

pad::Raster crop_of(const pad::Raster& img, const pad::CardLayout& layout) {
  return is_crop(img, layout) ? img : pad::rectify_pipeline(img, layout).crop;
}

json prediction_json(const pad::Prediction& p, const std::vector<std::string>& names) {
  return {{"label", names.at(static_cast<std::size_t>(p.label))}, {"label_index", p.label}, {"confidence", p.confidence}};
}

json eval_json(const pad::EvalResult& r) {
  return {{"accuracy", r.accuracy}, {"correct", r.correct}, {"total", r.total}, {"confusion", r.counts},
          {"confidence", r.confidence}};
}

// Manifest restricted to one split ("all" keeps everything).
pad::DatasetManifest select_split(pad::DatasetManifest m, const std::string& split) {
  if (split == "all") return m;
  if (split != "train" && split != "test") pad::fail(pad::ErrorCode::Config, "--split must be train, test or all");
  std::vector<pad::ManifestEntry> kept;
  for (auto& e : m.entries)
    if (e.split == split) kept.push_back(std::move(e));
  m.entries = std::move(kept);
  if (m.entries.empty()) pad::fail(pad::ErrorCode::Config, "no manifest entries in split '" + split + "'");
  return m;
}

pad::DatasetManifest load_manifest(const fs::path& p) {
  if (!fs::exists(p)) pad::fail(pad::ErrorCode::Config, "manifest not found: " + p.string());
  pad::DatasetManifest m = pad::DatasetManifest::load(p);
  m.validate();
  return m;
}

void warn_dropped(const pad::CropSet& set) {
  for (const auto& id : set.dropped) std::cerr << "warning: " << id << " failed rectification and was skipped\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic PAD card pipeline: generation, rectification, reagent selection and classification"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads (0 = logical cores)")->capture_default_str();
  app.add_option("--layout", g.layout, "Lane layout: 12 (panel cards) or 9 (single-reagent cards)")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset of card photos");
  fs::path synth_out, synth_config, synth_fpdb;
  int synth_per_drug = -1, fpdb_replicates = 3;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--config", synth_config, "Generator config JSON")->check(CLI::ExistingFile);
  synth->add_option("--images-per-drug", synth_per_drug, "Override images per drug");
  synth->add_option("--fpdb", synth_fpdb, "Also write the single-reagent fingerprint database here");
  synth->add_option("--replicates", fpdb_replicates, "Replicates per (drug, reagent) in the database")->capture_default_str();

  // rectify
  auto* rectify = app.add_subcommand("rectify", "Rectify a card photo and write the salient crop");
  fs::path rect_in, rect_out, rect_full, rect_report;
  rectify->add_option("--in", rect_in, "Raw card photo (PNG)")->required();
  rectify->add_option("--out", rect_out, "Crop output (PNG)")->required();
  rectify->add_option("--save-rectified", rect_full, "Also write the full rectified card");
  rectify->add_option("--report", rect_report, "Write detections and reprojection error as JSON");

  // fingerprint
  auto* fingerprint = app.add_subcommand("fingerprint", "Per-lane reaction colors of a crop or photo");
  fs::path fp_in, fp_out;
  double fp_tau = pad::kDefaultGrowTau;
  bool fp_no_timer = false;
  fingerprint->add_option("--in", fp_in, "Crop or raw photo (PNG)")->required();
  fingerprint->add_option("--out", fp_out, "Fingerprint JSON (stdout when absent)");
  fingerprint->add_option("--tau", fp_tau, "Region growing threshold")->capture_default_str();
  fingerprint->add_flag("--no-timer", fp_no_timer, "Leave the timer lane out");

  // select-reagents
  auto* select = app.add_subcommand("select-reagents", "Rank reagents by SVD and pick a panel");
  fs::path sel_db, sel_out, sel_report;
  int sel_size = 12;
  std::string sel_mode = "white", sel_blank = "DI water";
  std::vector<int> sel_forced;
  select->add_option("--db", sel_db, "Fingerprint database JSON")->required();
  select->add_option("--out", sel_out, "Panel JSON")->required();
  select->add_option("--report", sel_report, "Uniqueness report JSON");
  select->add_option("--panel-size", sel_size, "Lanes on the card, timer included")->capture_default_str();
  select->add_option("--mode", sel_mode, "Matrix entries: white or blank")->capture_default_str();
  select->add_option("--blank-drug", sel_blank, "Blank drug for --mode blank")->capture_default_str();
  select->add_option("--force", sel_forced, "Reagent indices that must be on the panel");

  // features
  auto* features = app.add_subcommand("features", "Extract feature vectors for every manifest image");
  fs::path feat_manifest, feat_dict, feat_out;
  std::string feat_kind;
  features->add_option("--manifest", feat_manifest, "Dataset manifest")->required();
  features->add_option("--kind", feat_kind, "lab, gist, colorbank, dsift or combined")->required();
  features->add_option("--dict", feat_dict, "Dictionary JSON (learned from the train split when missing)");
  features->add_option("--out-dir", feat_out, "Feature cache directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a classifier on a manifest split");
  fs::path train_manifest, train_out, train_cache;
  std::string train_feature = "combined", train_classifier = "svm", train_split = "train";
  bool train_no_tune = false;
  double train_c = 1.0, train_gamma = 1.0 / 1024;
  train->add_option("--manifest", train_manifest, "Dataset manifest")->required();
  train->add_option("--feature", train_feature, "Feature kind")->capture_default_str();
  train->add_option("--classifier", train_classifier, "knn or svm")->capture_default_str();
  train->add_option("--out", train_out, "Model file")->required();
  train->add_option("--split", train_split, "train, test or all")->capture_default_str();
  train->add_option("--cache", train_cache, "Feature cache directory");
  train->add_flag("--no-tune", train_no_tune, "Use --c and --gamma instead of cross-validation");
  train->add_option("--c", train_c, "SVM C without tuning")->capture_default_str();
  train->add_option("--gamma", train_gamma, "RBF gamma without tuning")->capture_default_str();

  // predict
  auto* predict = app.add_subcommand("predict", "Classify a card photo or crop");
  fs::path pred_model, pred_in, pred_rectified, pred_fp, pred_feature;
  predict->add_option("--model", pred_model, "Model file")->required();
  predict->add_option("--in", pred_in, "Raw photo or salient crop (PNG)")->required();
  predict->add_option("--dump-rectified", pred_rectified, "Write the rectified card");
  predict->add_option("--dump-fingerprint", pred_fp, "Write the fingerprint JSON");
  predict->add_option("--dump-feature", pred_feature, "Write the feature vector JSON");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a manifest split");
  fs::path eval_manifest, eval_model, eval_report;
  std::string eval_split = "test";
  eval->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  eval->add_option("--model", eval_model, "Model file")->required();
  eval->add_option("--report", eval_report, "Report JSON (stdout when absent)");
  eval->add_option("--split", eval_split, "train, test or all")->capture_default_str();

  // experiment
  auto* experiment = app.add_subcommand("experiment", "k-fold protocol over feature and classifier grids");
  fs::path exp_config, exp_manifest, exp_out, exp_cache;
  std::vector<std::string> exp_features, exp_classifiers;
  std::string exp_perturbation;
  int exp_folds = 0;
  experiment->add_option("--config", exp_config, "Experiment config JSON")->check(CLI::ExistingFile);
  experiment->add_option("--manifest", exp_manifest, "Dataset manifest (overrides the config)");
  experiment->add_option("--features", exp_features, "Feature kinds");
  experiment->add_option("--classifiers", exp_classifiers, "Classifiers");
  experiment->add_option("--perturbation", exp_perturbation, "none, lane_permutation or both");
  experiment->add_option("--folds", exp_folds, "Number of folds");
  experiment->add_option("--out", exp_out, "Output directory (overrides the config)");
  experiment->add_option("--cache", exp_cache, "Feature cache directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    const int jobs = g.jobs > 0 ? g.jobs : pad::default_jobs();

    if (*synth) {
      pad::DatasetConfig cfg;
      if (!synth_config.empty()) cfg = pad::DatasetConfig::from_json(slurp(synth_config));
      if (synth_per_drug > 0) cfg.images_per_drug = synth_per_drug;
      const auto manifest = pad::generate_dataset(cfg, g.seed, synth_out, jobs);
      std::cout << "wrote " << manifest.entries.size() << " images to " << synth_out.string() << "\n";
      if (!synth_fpdb.empty()) {
        const auto model = pad::make_color_model(cfg);
        const auto db = pad::build_fingerprint_database(model, fpdb_replicates, g.seed, cfg.distortion, jobs);
        pad::write_text(synth_fpdb, db.to_json());
        std::cout << "wrote fingerprint database to " << synth_fpdb.string() << "\n";
      }
      return kExitOk;
    }

    if (*rectify) {
      const auto layout = layout_of(g.layout);
      const auto r = pad::rectify_pipeline(pad::read_png(rect_in), layout);
      pad::write_png(rect_out, r.crop);
      if (!rect_full.empty()) pad::write_png(rect_full, r.rectified);
      if (!rect_report.empty()) {
        json det = json::array();
        for (const auto& d : r.detections) det.push_back({{"x", d.center.x}, {"y", d.center.y}, {"score", d.score}});
        write_json(rect_report, {{"detections", det},
                                 {"mean_reprojection_error", r.mean_reprojection_error},
                                 {"wax_found", r.wax_found},
                                 {"lane_correction", {{"angle", r.lane_correction.angle},
                                                      {"dx", r.lane_correction.shift.x},
                                                      {"dy", r.lane_correction.shift.y}}}});
      }
      if (!r.wax_found) std::cerr << "warning: wax marks not found, lane alignment left uncorrected\n";
      return kExitOk;
    }

    if (*fingerprint) {
      const auto layout = layout_of(g.layout);
      const auto fp = pad::extract_fingerprint(crop_of(pad::read_png(fp_in), layout), layout, fp_tau, !fp_no_timer);
      if (fp_out.empty()) std::cout << fp.to_json() << "\n";
      else pad::write_text(fp_out, fp.to_json());
      return kExitOk;
    }

    if (*select) {
      const auto db = pad::FingerprintDatabase::from_json(slurp(sel_db));
      db.validate();
      pad::DistanceMatrixOptions opt;
      if (sel_mode == "blank") {
        opt.mode = pad::MatrixEntryMode::DistanceFromBlank;
        const auto it = std::find(db.drugs.begin(), db.drugs.end(), sel_blank);
        if (it == db.drugs.end()) pad::fail(pad::ErrorCode::Config, "blank drug '" + sel_blank + "' not in the database");
        opt.blank_drug = static_cast<int>(it - db.drugs.begin());
      } else if (sel_mode != "white") {
        pad::fail(pad::ErrorCode::Config, "--mode must be white or blank");
      }
      const auto m = pad::build_distance_matrix(db, opt);
      const auto s = pad::svd(m);
      const auto panel = pad::select_panel(m, s, sel_size, sel_forced);
      std::vector<std::string> names;
      for (int r : panel) names.push_back(r < 0 ? "timer" : db.reagents[static_cast<std::size_t>(r)]);
      write_json(sel_out, {{"version", 1}, {"panel", panel}, {"reagents", names}, {"singular_values", s.s}});
      const auto report = pad::verify_uniqueness(pad::panel_replicates(db, panel));
      if (!sel_report.empty()) pad::write_text(sel_report, report.to_json(db.drugs));
      std::cout << (report.pass ? "uniqueness: pass" : "uniqueness: FAIL") << " (worst margin " << report.worst.margin()
                << " between " << db.drugs[report.worst.p] << " and " << db.drugs[report.worst.q] << ")\n";
      return kExitOk;
    }

    if (*features) {
      const auto kind = pad::parse_feature_kind(feat_kind);
      const auto manifest = load_manifest(feat_manifest);
      const auto crops = pad::load_crops(manifest, jobs);
      warn_dropped(crops);
      pad::FeatureSettings settings;
      pad::DictionaryPair dicts;
      if (pad::needs_dictionary(kind)) {
        if (!feat_dict.empty() && fs::exists(feat_dict)) {
          auto d = pad::Dictionary::from_json(slurp(feat_dict));
          (d.kind == pad::FeatureKind::ColorBank420 ? dicts.colorbank : dicts.dsift) = std::move(d);
        }
        const bool need_cb = kind != pad::FeatureKind::DenseSift5376 && !dicts.colorbank;
        const bool need_ds = kind != pad::FeatureKind::ColorBank420 && !dicts.dsift;
        if (need_cb || need_ds) {
          std::vector<const pad::Raster*> train;
          for (std::size_t i = 0; i < crops.crops.size(); ++i)
            if (crops.folds[i] != 0) train.push_back(&crops.crops[i]);
          std::vector<pad::FeatureKind> kinds;
          if (need_cb) kinds.push_back(pad::FeatureKind::ColorBank420);
          if (need_ds) kinds.push_back(pad::FeatureKind::DenseSift5376);
          auto learned = pad::train_dictionaries(train, kinds, settings, g.seed, jobs);
          if (need_cb) dicts.colorbank = std::move(learned.colorbank);
          if (need_ds) dicts.dsift = std::move(learned.dsift);
          if (!feat_dict.empty() && kind != pad::FeatureKind::Combined5796) {
            pad::write_text(feat_dict, (need_cb ? *dicts.colorbank : *dicts.dsift).to_json());
          }
        }
      }
      fs::create_directories(feat_out);
      pad::parallel_for(crops.crops.size(), jobs, [&](std::size_t i) {
        const auto f = pad::compute_feature(crops.crops[i], kind, dicts, settings);
        pad::write_file(feat_out / (crops.ids[i] + "." + pad::to_string(kind) + ".bin"), pad::encode_feature(f));
      });
      std::cout << "wrote " << crops.crops.size() << " " << pad::to_string(kind) << " records to " << feat_out.string() << "\n";
      return kExitOk;
    }

    if (*train) {
      const auto manifest = select_split(load_manifest(train_manifest), train_split);
      const auto crops = pad::load_crops(manifest, jobs);
      warn_dropped(crops);
      pad::TrainOptions opt;
      opt.classifier = pad::parse_classifier_kind(train_classifier);
      opt.tune = !train_no_tune;
      opt.c = train_c;
      opt.gamma = train_gamma;
      opt.seed = g.seed;
      opt.jobs = jobs;
      std::optional<pad::FeatureCache> cache;
      if (!train_cache.empty()) cache.emplace(train_cache);
      std::vector<std::size_t> rows(crops.crops.size());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      pad::TrainReport report;
      const auto model = pad::train_model(crops, rows, pad::parse_feature_kind(train_feature), opt, pad::FeatureSettings{},
                                          cache ? &*cache : nullptr, &report);
      pad::save_model(train_out, model);
      std::cout << "trained " << pad::to_string(model.classifier) << " on " << rows.size() << " " << pad::to_string(model.feature)
                << " vectors";
      if (report.cv) std::cout << " (C=" << report.cv->c << ", gamma=" << report.cv->gamma << ")";
      std::cout << "\n";
      return kExitOk;
    }

    if (*predict) {
      const auto model = pad::load_model(pred_model);
      const auto r = pad::pipeline_predict(pad::read_png(pred_in), model);
      if (!pred_rectified.empty()) {
        if (!r.rectify) pad::fail(pad::ErrorCode::Config, "--dump-rectified needs a raw photo, not a crop");
        pad::write_png(pred_rectified, r.rectify->rectified);
      }
      if (!pred_fp.empty()) pad::write_text(pred_fp, r.fingerprint.to_json());
      if (!pred_feature.empty()) write_json(pred_feature, {{"kind", pad::to_string(r.feature.kind)}, {"values", r.feature.values}});
      std::cout << prediction_json(r.prediction, model.class_names).dump() << "\n";
      return kExitOk;
    }

    if (*eval) {
      const auto model = pad::load_model(eval_model);
      const auto manifest = select_split(load_manifest(eval_manifest), eval_split);
      if (manifest.drugs != model.class_names) pad::fail(pad::ErrorCode::Config, "model and manifest classes differ");
      const auto crops = pad::load_crops(manifest, jobs);
      warn_dropped(crops);
      std::vector<pad::Prediction> preds(crops.crops.size());
      const pad::DictionaryPair dicts{model.colorbank_dictionary, model.dsift_dictionary};
      pad::parallel_for(crops.crops.size(), jobs, [&](std::size_t i) {
        preds[i] = model.predict(pad::compute_feature(crops.crops[i], model.feature, dicts));
      });
      const auto r = pad::evaluate(preds, crops.labels, model.class_count());
      json j = eval_json(r);
      j["version"] = 1;
      j["model_digest"] = pad::Digest().update(pad::read_file(eval_model)).hex();
      j["seed"] = model.seed;
      j["classes"] = model.class_names;
      j["fold_accuracy"] = {r.accuracy};
      j["mean_accuracy"] = r.accuracy;
      j["dropped"] = crops.dropped;
      if (eval_report.empty()) std::cout << j.dump(1) << "\n";
      else write_json(eval_report, j);
      std::cerr << r.correct << "/" << r.total << " correct\n";
      return kExitOk;
    }

    if (*experiment) {
      pad::ExperimentConfig cfg;
      if (!exp_config.empty()) {
        cfg = pad::ExperimentConfig::from_json(slurp(exp_config), exp_config.parent_path());
      } else {
        if (exp_manifest.empty()) pad::fail(pad::ErrorCode::Config, "experiment needs --config or --manifest");
        cfg.output_dir = "experiment-out";
        cfg.settings.seed = g.seed;
      }
      if (!exp_manifest.empty()) cfg.manifest = exp_manifest;
      if (!fs::exists(cfg.manifest)) pad::fail(pad::ErrorCode::Config, "manifest not found: " + cfg.manifest.string());
      if (!exp_out.empty()) cfg.output_dir = exp_out;
      if (!exp_cache.empty()) cfg.cache_dir = exp_cache;
      if (!exp_features.empty()) {
        cfg.settings.features.clear();
        for (const auto& f : exp_features) cfg.settings.features.push_back(pad::parse_feature_kind(f));
      }
      if (!exp_classifiers.empty()) {
        cfg.settings.classifiers.clear();
        for (const auto& c : exp_classifiers) cfg.settings.classifiers.push_back(pad::parse_classifier_kind(c));
      }
      if (exp_perturbation == "both") {
        cfg.settings.perturbations = {pad::Perturbation::None, pad::Perturbation::LanePermutation};
      } else if (!exp_perturbation.empty()) {
        cfg.settings.perturbations = {pad::parse_perturbation(exp_perturbation)};
      }
      if (exp_folds > 0) cfg.settings.folds = exp_folds;
      if (cfg.settings.folds < 2) pad::fail(pad::ErrorCode::Config, "experiment needs at least two folds");
      cfg.settings.jobs = jobs;
      fs::create_directories(cfg.output_dir);
      const auto report = pad::run_experiment(cfg);
      std::cout << report.to_table();
      return kExitOk;
    }
  } catch (const pad::Error& e) {
    std::cerr << "error (" << pad::to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
