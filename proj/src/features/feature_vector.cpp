#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "pad/features.hpp"

namespace pad {

std::size_t feature_length(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Lab90: return 90;
    case FeatureKind::Gist512: return 512;
    case FeatureKind::ColorBank420: return 420;
    case FeatureKind::DenseSift5376: return 5376;
    case FeatureKind::Combined5796: return 5796;
  }
  return 0;
}

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Lab90: return "lab90";
    case FeatureKind::Gist512: return "gist512";
    case FeatureKind::ColorBank420: return "colorbank420";
    case FeatureKind::DenseSift5376: return "dsift5376";
    case FeatureKind::Combined5796: return "combined5796";
  }
  return "?";
}

FeatureKind parse_feature_kind(std::string_view name) {
  if (name == "lab" || name == "lab90") return FeatureKind::Lab90;
  if (name == "gist" || name == "gist512") return FeatureKind::Gist512;
  if (name == "colorbank" || name == "colorbank420") return FeatureKind::ColorBank420;
  if (name == "dsift" || name == "dsift5376") return FeatureKind::DenseSift5376;
  if (name == "combined" || name == "combined5796" || name == "colorbank+dsift") return FeatureKind::Combined5796;
  fail(ErrorCode::Config, "unknown feature kind '" + std::string(name) + "'");
}

bool needs_dictionary(FeatureKind kind) { return kind != FeatureKind::Lab90 && kind != FeatureKind::Gist512; }

FeatureVector::FeatureVector(FeatureKind k, std::vector<double> v) : kind(k), values(std::move(v)) {
  if (values.size() != feature_length(kind)) {
    fail(ErrorCode::InvalidArgument, to_string(kind) + " needs " + std::to_string(feature_length(kind)) + " values, got " +
                                         std::to_string(values.size()));
  }
  if (!std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); })) {
    fail(ErrorCode::InvalidArgument, "feature vector has non-finite values");
  }
}

FeatureVector combine(const FeatureVector& color_bank, const FeatureVector& dense_sift) {
  require(color_bank.kind == FeatureKind::ColorBank420 && dense_sift.kind == FeatureKind::DenseSift5376,
          "combine expects a color bank and a dense SIFT vector");
  std::vector<double> v = color_bank.values;
  v.insert(v.end(), dense_sift.values.begin(), dense_sift.values.end());
  return {FeatureKind::Combined5796, std::move(v)};
}

std::vector<std::uint8_t> encode_feature(const FeatureVector& f) {
  const nlohmann::json j{{"version", 1}, {"kind", to_string(f.kind)}, {"values", f.values}};
  return nlohmann::json::to_cbor(j);
}

FeatureVector decode_feature(std::span<const std::uint8_t> bytes) {
  try {
    const auto j = nlohmann::json::from_cbor(bytes.begin(), bytes.end());
    return {parse_feature_kind(j.at("kind").get<std::string>()), j.at("values").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("corrupt feature record: ") + ex.what());
  }
}

}  // namespace pad
