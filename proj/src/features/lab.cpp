#include <algorithm>
#include <cmath>

#include "pad/features.hpp"

namespace pad {

namespace {

int bin_of(double v, double lo, double hi) {
  const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * kLabBins));
  return std::clamp(b, 0, kLabBins - 1);
}

}  // namespace

FeatureVector lab_histogram(const Raster& crop) {
  require(!crop.empty(), "empty image");
  std::vector<double> h(3 * kLabBins, 0.0);
  for (int y = 0; y < crop.height(); ++y) {
    const std::uint8_t* row = crop.row(y);
    for (int x = 0; x < crop.width(); ++x) {
      const LabColor lab = rgb_to_lab(row[3 * x], row[3 * x + 1], row[3 * x + 2]);
      h[bin_of(lab.L, 0.0, 100.0)] += 1.0;
      h[kLabBins + bin_of(lab.a, -110.0, 110.0)] += 1.0;
      h[2 * kLabBins + bin_of(lab.b, -110.0, 110.0)] += 1.0;
    }
  }
  const double n = static_cast<double>(crop.width()) * crop.height();
  for (double& v : h) v /= n;
  return {FeatureKind::Lab90, std::move(h)};
}

}  // namespace pad
