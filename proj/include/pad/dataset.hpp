#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pad {

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the manifest directory
  std::string drug_label;
  int drug_index = 0;
  std::string split;       // "train" | "test" for the default (fold 0) split
  int fold = 0;            // fold in which this entry is a test image
  std::uint64_t seed = 0;
};

/// Versioned dataset description: {"version":1, "entries":[...], ...}.
struct DatasetManifest {
  int lane_count = 12;
  int folds = 3;
  std::uint64_t seed = 0;
  std::string generator_digest;
  std::vector<std::string> drugs;
  std::vector<int> panel;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // not serialized

  std::filesystem::path image_file(const ManifestEntry& e) const { return base_dir / e.image_path; }
  std::vector<int> labels() const;

  /// Throws Error(Config) unless labels are in range and every drug's
  /// entries are spread evenly over the folds.
  void validate() const;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Stratified fold assignment: each label's items are shuffled (seeded) and
/// dealt into `folds` contiguous blocks of (near) equal size.
std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed);

}  // namespace pad
