#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "pad/features.hpp"

namespace pad {

using nlohmann::json;

std::string Dictionary::digest() const {
  Digest d;
  d.update(to_string(kind));
  d.update(static_cast<std::uint64_t>(words.rows()));
  d.update(static_cast<std::uint64_t>(words.cols()));
  d.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(words.data()),
                                         static_cast<std::size_t>(words.size()) * sizeof(double)));
  return d.hex();
}

std::string Dictionary::to_json() const {
  json j;
  j["version"] = 1;
  j["kind"] = to_string(kind);
  j["k"] = k();
  j["d"] = dim();
  j["training_digest"] = training_digest;
  j["objective_history"] = objective_history;
  json w = json::array();
  for (Eigen::Index r = 0; r < words.rows(); ++r) {
    std::vector<double> row(words.cols());
    for (Eigen::Index c = 0; c < words.cols(); ++c) row[c] = words(r, c);
    w.push_back(std::move(row));
  }
  j["words"] = std::move(w);
  return j.dump();
}

Dictionary Dictionary::from_json(const std::string& text) {
  Dictionary d;
  try {
    const json j = json::parse(text);
    if (j.at("version").get<int>() != 1) fail(ErrorCode::Config, "unsupported dictionary version");
    d.kind = parse_feature_kind(j.at("kind").get<std::string>());
    d.training_digest = j.value("training_digest", std::string{});
    d.objective_history = j.value("objective_history", std::vector<double>{});
    const int k = j.at("k").get<int>();
    const int dim = j.at("d").get<int>();
    const auto& w = j.at("words");
    if (static_cast<int>(w.size()) != k) fail(ErrorCode::Config, "dictionary word count mismatch");
    d.words.resize(k, dim);
    for (int r = 0; r < k; ++r) {
      const auto row = w[r].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != dim) fail(ErrorCode::Config, "dictionary word length mismatch");
      for (int c = 0; c < dim; ++c) d.words(r, c) = row[c];
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::Config, std::string("malformed dictionary: ") + ex.what());
  }
  return d;
}

namespace {

std::size_t distinct_rows(const DescriptorMatrix& data, std::size_t enough) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  const Eigen::Index d = data.cols();
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    return std::lexicographical_compare(data.row(a).data(), data.row(a).data() + d, data.row(b).data(), data.row(b).data() + d);
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t count = idx.empty() ? 0 : 1;
  for (std::size_t i = 1; i < idx.size() && count < enough; ++i) count += less(idx[i - 1], idx[i]);
  return count;
}

// Squared distances between every row of x and every row of c.
Eigen::MatrixXd pairwise_sq(const DescriptorMatrix& x, const Eigen::MatrixXd& c) {
  Eigen::MatrixXd d = -2.0 * (x * c.transpose());
  d.colwise() += x.rowwise().squaredNorm();
  d.rowwise() += c.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

Dictionary kmeans(const DescriptorMatrix& data, int k, std::uint64_t seed, const KMeansOptions& options) {
  require(k >= 1, "k must be positive");
  const Eigen::Index n = data.rows();
  const Eigen::Index dim = data.cols();
  if (n < k || distinct_rows(data, static_cast<std::size_t>(k)) < static_cast<std::size_t>(k)) {
    fail(ErrorCode::InvalidArgument, "k-means needs at least k distinct samples");
  }
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers(k, dim);

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
  for (int c = 0; c < k; ++c) {
    centers.row(c) = data.row(pick);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (data.row(i) - centers.row(c)).squaredNorm());
      total += d2[i];
    }
    if (c + 1 == k) break;
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      u -= d2[i];
      if (u < 0.0) break;
    }
  }

  Dictionary dict;
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  std::vector<double> cost(static_cast<std::size_t>(n), 0.0);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const Eigen::MatrixXd dist = pairwise_sq(data, centers);
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      dist.row(i).minCoeff(&best);
      assign[i] = static_cast<int>(best);
      cost[i] = (data.row(i) - centers.row(best)).squaredNorm();
      objective += cost[i];
    }
    dict.objective_history.push_back(objective);

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += data.row(i);
      ++counts[assign[i]];
    }
    Eigen::MatrixXd next(k, dim);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        next.row(c) = sums.row(c) / static_cast<double>(counts[c]);
      } else {
        // Empty cluster: move it onto the worst-served point.
        const auto far = std::max_element(cost.begin(), cost.end()) - cost.begin();
        next.row(c) = data.row(far);
        cost[far] = 0.0;
      }
    }
    const double movement = (next - centers).rowwise().norm().maxCoeff();
    centers = std::move(next);
    if (movement < options.tolerance) break;
  }
  dict.words = std::move(centers);
  return dict;
}

DescriptorMatrix sample_rows(const std::vector<const DescriptorMatrix*>& sets, std::size_t max_rows, std::uint64_t seed) {
  std::size_t total = 0;
  Eigen::Index dim = -1;
  for (const auto* s : sets) {
    total += static_cast<std::size_t>(s->rows());
    if (dim < 0) dim = s->cols();
    require(s->cols() == dim, "descriptor sets differ in dimension");
  }
  require(total > 0, "no descriptors to sample");
  std::vector<std::size_t> pick(total);
  std::iota(pick.begin(), pick.end(), 0);
  if (total > max_rows) {
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates, then restore source order.
    for (std::size_t i = 0; i < max_rows; ++i) {
      std::swap(pick[i], pick[std::uniform_int_distribution<std::size_t>(i, total - 1)(rng)]);
    }
    pick.resize(max_rows);
    std::sort(pick.begin(), pick.end());
  }
  DescriptorMatrix out(static_cast<Eigen::Index>(pick.size()), dim);
  std::size_t set = 0, base = 0;
  for (std::size_t r = 0; r < pick.size(); ++r) {
    while (pick[r] >= base + static_cast<std::size_t>(sets[set]->rows())) base += static_cast<std::size_t>(sets[set++]->rows());
    out.row(static_cast<Eigen::Index>(r)) = sets[set]->row(static_cast<Eigen::Index>(pick[r] - base));
  }
  return out;
}

namespace {

SparseCode solve_llc(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::MatrixXd& words, std::vector<int> nn,
                     double lambda) {
  const int kappa = static_cast<int>(nn.size());
  Eigen::MatrixXd z(kappa, words.cols());
  for (int i = 0; i < kappa; ++i) z.row(i) = words.row(nn[i]) - x;
  Eigen::MatrixXd c = z * z.transpose();
  const double tr = c.trace();
  c.diagonal().array() += tr > 1e-12 ? lambda * tr : lambda;
  Eigen::VectorXd w = c.ldlt().solve(Eigen::VectorXd::Ones(kappa));
  w /= w.sum();
  SparseCode code;
  code.index = std::move(nn);
  code.weight.assign(w.data(), w.data() + kappa);
  return code;
}

std::vector<int> nearest_words(const Eigen::Ref<const Eigen::RowVectorXd>& dist, int kappa) {
  std::vector<int> idx(static_cast<std::size_t>(dist.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + kappa, idx.end(),
                    [&](int a, int b) { return dist(a) < dist(b) || (dist(a) == dist(b) && a < b); });
  idx.resize(static_cast<std::size_t>(kappa));
  return idx;
}

}  // namespace

SparseCode llc_encode(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::MatrixXd& words, int kappa, double lambda) {
  require(x.size() == words.cols(), "descriptor dimension does not match the dictionary");
  if (kappa < 1 || kappa > words.rows()) fail(ErrorCode::InvalidArgument, "kappa exceeds the dictionary size");
  const Eigen::RowVectorXd dist = (words.rowwise() - x).rowwise().squaredNorm().transpose();
  return solve_llc(x, words, nearest_words(dist, kappa), lambda);
}

std::vector<SparseCode> llc_encode_all(const DescriptorMatrix& x, const Eigen::MatrixXd& words, int kappa, double lambda) {
  require(x.cols() == words.cols(), "descriptor dimension does not match the dictionary");
  if (kappa < 1 || kappa > words.rows()) fail(ErrorCode::InvalidArgument, "kappa exceeds the dictionary size");
  std::vector<SparseCode> codes(static_cast<std::size_t>(x.rows()));
  constexpr Eigen::Index kBlock = 2048;
  for (Eigen::Index start = 0; start < x.rows(); start += kBlock) {
    const Eigen::Index len = std::min(kBlock, x.rows() - start);
    const DescriptorMatrix block = x.middleRows(start, len);
    const Eigen::MatrixXd dist = pairwise_sq(block, words);
    for (Eigen::Index i = 0; i < len; ++i) {
      codes[start + i] = solve_llc(block.row(i), words, nearest_words(dist.row(i), kappa), lambda);
    }
  }
  return codes;
}

std::array<int, 3> pyramid_cells(Point2 p, int width, int height) {
  std::array<int, 3> out{};
  int offset = 0;
  for (int level = 0; level < 3; ++level) {
    const int g = 1 << level;
    const int col = std::clamp(static_cast<int>(std::floor((p.x + 0.5) * g / width)), 0, g - 1);
    const int row = std::clamp(static_cast<int>(std::floor((p.y + 0.5) * g / height)), 0, g - 1);
    out[level] = offset + row * g + col;
    offset += g * g;
  }
  return out;
}

std::vector<double> spatial_pyramid_max_pool(const std::vector<SparseCode>& codes, const std::vector<Point2>& positions, int k,
                                             int width, int height) {
  require(codes.size() == positions.size(), "one position per code required");
  const std::size_t cells = kPyramidCells;
  std::vector<double> best(cells * k, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> selected(cells * k, 0);
  std::vector<std::size_t> members(cells, 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (int cell : pyramid_cells(positions[i], width, height)) {
      ++members[cell];
      const SparseCode& c = codes[i];
      for (std::size_t t = 0; t < c.index.size(); ++t) {
        const std::size_t slot = static_cast<std::size_t>(cell) * k + c.index[t];
        best[slot] = std::max(best[slot], c.weight[t]);
        ++selected[slot];
      }
    }
  }
  // Unselected words hold an implicit zero in every code.
  std::vector<double> out(cells * k, 0.0);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    if (members[cell] == 0) continue;
    for (int w = 0; w < k; ++w) {
      const std::size_t slot = cell * k + w;
      out[slot] = selected[slot] < members[cell] ? std::max(0.0, best[slot]) : best[slot];
    }
  }
  return out;
}

FeatureVector color_bank(const LocalDescriptorSet& histograms, const Dictionary& dictionary) {
  const auto codes = llc_encode_all(histograms.descriptors, dictionary.words);
  return {FeatureKind::ColorBank420, spatial_pyramid_max_pool(codes, histograms.positions, dictionary.k(),
                                                              histograms.image_width, histograms.image_height)};
}

FeatureVector color_bank(const Raster& crop, const Dictionary& dictionary) {
  return color_bank(extract_patch_histograms(color_name_map(crop)), dictionary);
}

FeatureVector dense_sift_feature(const LocalDescriptorSet& descriptors, const Dictionary& dictionary) {
  const auto codes = llc_encode_all(descriptors.descriptors, dictionary.words);
  return {FeatureKind::DenseSift5376, spatial_pyramid_max_pool(codes, descriptors.positions, dictionary.k(),
                                                               descriptors.image_width, descriptors.image_height)};
}

FeatureVector dense_sift_feature(const Raster& crop, const Dictionary& dictionary, const DsiftOptions& options) {
  return dense_sift_feature(dense_sift_descriptors(crop, options), dictionary);
}

}  // namespace pad
