#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "pad/features.hpp"

namespace pad {

namespace {

constexpr int kPad = 32;
constexpr int kN = kGistSize + 2 * kPad;

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : p(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {}
  ~FftwBuffer() { fftw_free(p); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* p;
};

// Plans are created once; fftw_execute_dft on fresh aligned buffers is thread safe.
struct Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

const Plans& plans() {
  static Plans p;
  static std::once_flag once;
  std::call_once(once, [] {
    FftwBuffer a(kN * kN), b(kN * kN);
    p.forward = fftw_plan_dft_2d(kN, kN, a.p, b.p, FFTW_FORWARD, FFTW_ESTIMATE);
    p.backward = fftw_plan_dft_2d(kN, kN, a.p, b.p, FFTW_BACKWARD, FFTW_ESTIMATE);
  });
  return p;
}

// Transfer functions on the unshifted FFT grid, one per scale/orientation.
const std::vector<std::vector<double>>& gabor_bank() {
  static const std::vector<std::vector<double>> bank = [] {
    std::vector<std::vector<double>> out;
    for (int s = 0; s < kGistScales; ++s) {
      const double f0 = 0.3 / std::pow(1.85, s);
      const double width = 16.0 * kGistOrientations * kGistOrientations / (32.0 * 32.0);
      for (int o = 0; o < kGistOrientations; ++o) {
        const double theta0 = std::numbers::pi * o / kGistOrientations;
        std::vector<double> g(static_cast<std::size_t>(kN) * kN);
        for (int v = 0; v < kN; ++v) {
          const double fy = v < kN / 2 ? v : v - kN;
          for (int u = 0; u < kN; ++u) {
            const double fx = u < kN / 2 ? u : u - kN;
            const double fr = std::hypot(fx, fy);
            double dt = std::atan2(fy, fx) + theta0;
            dt = std::remainder(dt, 2.0 * std::numbers::pi);
            const double radial = fr / kN / f0 - 1.0;
            g[static_cast<std::size_t>(v) * kN + u] =
                std::exp(-10.0 * 0.35 * radial * radial - 2.0 * width * std::numbers::pi * dt * dt);
          }
        }
        g[0] = 0.0;
        out.push_back(std::move(g));
      }
    }
    return out;
  }();
  return bank;
}

int reflect(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - i - 1;
  return i;
}

}  // namespace

Eigen::MatrixXd resize_gray(const Raster& img, int width, int height) {
  require(!img.empty() && width > 0 && height > 0, "bad resize request");
  // Separable area averaging: each output cell integrates its footprint.
  auto weights = [](int in, int out) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out, in);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double a = o * scale;
      const double b = (o + 1) * scale;
      for (int i = static_cast<int>(std::floor(a)); i < std::min(in, static_cast<int>(std::ceil(b))); ++i) {
        w(o, i) = (std::min<double>(b, i + 1) - std::max<double>(a, i)) / scale;
      }
    }
    return w;
  };
  Eigen::MatrixXd gray(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) gray(y, x) = gray_level(img.pixel(x, y));
  return weights(img.height(), height) * gray * weights(img.width(), width).transpose();
}

std::vector<double> gist_responses(const Raster& img) {
  const Eigen::MatrixXd g = resize_gray(img, kGistSize, kGistSize);
  const Plans& p = plans();
  FftwBuffer spatial(kN * kN), spectrum(kN * kN), filtered(kN * kN);
  for (int y = 0; y < kN; ++y)
    for (int x = 0; x < kN; ++x) {
      auto* c = spatial.p[static_cast<std::size_t>(y) * kN + x];
      c[0] = g(reflect(y - kPad, kGistSize), reflect(x - kPad, kGistSize));
      c[1] = 0.0;
    }
  fftw_execute_dft(p.forward, spatial.p, spectrum.p);

  const auto& bank = gabor_bank();
  constexpr int cell = kGistSize / kGistGrid;
  std::vector<double> out;
  out.reserve(bank.size() * kGistGrid * kGistGrid);
  for (const auto& h : bank) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      filtered.p[i][0] = spectrum.p[i][0] * h[i];
      filtered.p[i][1] = spectrum.p[i][1] * h[i];
    }
    fftw_execute_dft(p.backward, filtered.p, spatial.p);
    const double norm = 1.0 / (static_cast<double>(kN) * kN);
    for (int cy = 0; cy < kGistGrid; ++cy)
      for (int cx = 0; cx < kGistGrid; ++cx) {
        double sum = 0.0;
        for (int y = 0; y < cell; ++y)
          for (int x = 0; x < cell; ++x) {
            const auto* c = spatial.p[static_cast<std::size_t>(kPad + cy * cell + y) * kN + (kPad + cx * cell + x)];
            sum += std::hypot(c[0], c[1]) * norm;
          }
        out.push_back(sum / (cell * cell));
      }
  }
  return out;
}

FeatureVector gist(const Raster& crop) {
  std::vector<double> v = gist_responses(crop);
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  for (double& x : v) x = n > 1e-9 ? x / n : 0.0;
  return {FeatureKind::Gist512, std::move(v)};
}

}  // namespace pad
