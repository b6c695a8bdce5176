#include <json.hpp>

#include "pad/image_io.hpp"
#include "pad/learn.hpp"

namespace pad {

using nlohmann::json;

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), m.rows(), m.cols()) = m;
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(flat)}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) fail(ErrorCode::DecodeError, "matrix payload size mismatch");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), rows, cols);
}

std::vector<double> row_vec(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::RowVectorXd row_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json dictionary_json(const Dictionary& d) {
  return {{"kind", to_string(d.kind)}, {"training_digest", d.training_digest}, {"words", matrix_json(d.words)}};
}

Dictionary dictionary_from(const json& j) {
  Dictionary d;
  d.kind = parse_feature_kind(j.at("kind").get<std::string>());
  d.training_digest = j.at("training_digest").get<std::string>();
  d.words = matrix_from(j.at("words"));
  return d;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const TrainedModel& m) {
  json j;
  j["format"] = "pad-model";
  j["version"] = 1;
  j["classifier"] = to_string(m.classifier);
  j["feature"] = to_string(m.feature);
  j["class_names"] = m.class_names;
  j["lane_count"] = m.lane_count;
  j["training_digest"] = m.training_digest;
  j["seed"] = m.seed;
  j["standardizer"] = {{"mean", row_vec(m.standardizer.mean)}, {"scale", row_vec(m.standardizer.scale)}};
  if (m.classifier == ClassifierKind::Knn) {
    j["knn"] = {{"exemplars", matrix_json(m.knn.exemplars)}, {"labels", m.knn.labels}};
  } else {
    json pairs = json::array();
    for (const auto& p : m.svm.pairs) {
      pairs.push_back({{"a", p.class_a}, {"b", p.class_b}, {"support", p.support}, {"coef", p.coef}, {"bias", p.bias}});
    }
    j["svm"] = {{"c", m.svm.c}, {"gamma", m.svm.gamma}, {"vectors", matrix_json(m.svm.vectors)}, {"pairs", std::move(pairs)}};
  }
  if (m.colorbank_dictionary) j["colorbank_dictionary"] = dictionary_json(*m.colorbank_dictionary);
  if (m.dsift_dictionary) j["dsift_dictionary"] = dictionary_json(*m.dsift_dictionary);
  return json::to_cbor(j);
}

TrainedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  TrainedModel m;
  try {
    const json j = json::from_cbor(bytes.begin(), bytes.end());
    if (j.value("format", std::string{}) != "pad-model" || j.at("version").get<int>() != 1) {
      fail(ErrorCode::DecodeError, "not a version 1 model file");
    }
    m.classifier = parse_classifier_kind(j.at("classifier").get<std::string>());
    m.feature = parse_feature_kind(j.at("feature").get<std::string>());
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.lane_count = j.at("lane_count").get<int>();
    m.training_digest = j.at("training_digest").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.standardizer.mean = row_from(j.at("standardizer").at("mean"));
    m.standardizer.scale = row_from(j.at("standardizer").at("scale"));
    const int classes = m.class_count();
    if (m.classifier == ClassifierKind::Knn) {
      m.knn.exemplars = matrix_from(j.at("knn").at("exemplars"));
      m.knn.labels = j.at("knn").at("labels").get<std::vector<int>>();
      m.knn.class_count = classes;
    } else {
      const json& s = j.at("svm");
      m.svm.c = s.at("c").get<double>();
      m.svm.gamma = s.at("gamma").get<double>();
      m.svm.class_count = classes;
      m.svm.vectors = matrix_from(s.at("vectors"));
      for (const auto& p : s.at("pairs")) {
        PairSvm ps;
        ps.class_a = p.at("a").get<int>();
        ps.class_b = p.at("b").get<int>();
        ps.support = p.at("support").get<std::vector<int>>();
        ps.coef = p.at("coef").get<std::vector<double>>();
        ps.bias = p.at("bias").get<double>();
        m.svm.pairs.push_back(std::move(ps));
      }
    }
    if (j.contains("colorbank_dictionary")) m.colorbank_dictionary = dictionary_from(j["colorbank_dictionary"]);
    if (j.contains("dsift_dictionary")) m.dsift_dictionary = dictionary_from(j["dsift_dictionary"]);
  } catch (const json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("corrupt model file: ") + ex.what());
  }
  return m;
}

void save_model(const std::filesystem::path& path, const TrainedModel& model) { write_file(path, serialize_model(model)); }

TrainedModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace pad
