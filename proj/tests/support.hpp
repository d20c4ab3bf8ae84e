#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls the library code it is checking.

#include <algorithm>
#include <array>
#include <atomic>
#include <filesystem>
#include <cmath>
#include <functional>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "videxp/tensor.hpp"

namespace testing {

using videxp::Index;
using videxp::MaskVolume;
using videxp::VideoTensor;
using videxp::Volume;

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("videxp_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline VideoTensor random_video(VideoTensor::Dims dims, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  VideoTensor x(dims);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

/// Values in [lo, hi] with all pairwise gaps above min_gap, so that small
/// finite-difference steps never reorder a sort.
inline MaskVolume random_tie_free_mask(MaskVolume::Dims dims, std::uint64_t seed, double lo = 0.02, double hi = 0.98,
                                       double min_gap = 1e-3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  MaskVolume m(dims);
  std::vector<double> used;
  for (Index i = 0; i < m.size(); ++i) {
    double v = 0.0;
    bool ok = false;
    while (!ok) {
      v = u(rng);
      ok = std::all_of(used.begin(), used.end(), [&](double w) { return std::abs(w - v) > min_gap; });
    }
    used.push_back(v);
    m.data()[i] = v;
  }
  return m;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Finite-difference gradient of f with respect to every entry of `at`.
template <typename Tensor>
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at, double h = 1e-4) {
  Tensor g(at.dims());
  Tensor probe = at;
  for (Index i = 0; i < at.size(); ++i) {
    const double x0 = at.data()[i];
    probe.data()[i] = x0 + h;
    const double up = f(probe);
    probe.data()[i] = x0 - h;
    const double down = f(probe);
    probe.data()[i] = x0;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest entrywise relative error |a - b| / max(|a|, |b|), with entries
/// whose magnitudes are both below `floor` compared absolutely.
template <typename A, typename B>
double max_relative_error(const A& a, const B& b, double floor = 1e-7) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    const double scale = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / scale);
  }
  return worst;
}

/// Dense 2D Gaussian blur by direct summation over the full (2r+1)^2
/// window, renormalized by the in-bounds weight.
inline VideoTensor dense_blur(const VideoTensor& x, double sigma) {
  const int r = static_cast<int>(std::ceil(2.0 * sigma));
  VideoTensor out(x.dims());
  for (Index t = 0; t < x.dim(0); ++t)
    for (Index i = 0; i < x.dim(1); ++i)
      for (Index j = 0; j < x.dim(2); ++j)
        for (Index c = 0; c < x.dim(3); ++c) {
          double acc = 0.0, norm = 0.0;
          for (int di = -r; di <= r; ++di)
            for (int dj = -r; dj <= r; ++dj) {
              const Index ii = i + di, jj = j + dj;
              if (ii < 0 || jj < 0 || ii >= x.dim(1) || jj >= x.dim(2)) continue;
              const double w = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
              acc += w * x(t, ii, jj, c);
              norm += w;
            }
          out(t, i, j, c) = acc / norm;
        }
  return out;
}

/// Smooth-max upsampling evaluated straight from its definition, visiting
/// every seed cell for every pixel.
inline MaskVolume direct_smooth_max(const Volume<double>& seed, int s, double tau) {
  const Index T = seed.dim(0), h = seed.dim(1), w = seed.dim(2);
  MaskVolume out({T, h * s, w * s});
  const double support = 1.5 * s;
  for (Index t = 0; t < T; ++t)
    for (Index i = 0; i < h * s; ++i)
      for (Index j = 0; j < w * s; ++j) {
        double num = 0.0, den = 0.0;
        for (Index a = 0; a < h; ++a)
          for (Index b = 0; b < w; ++b) {
            const double ci = s * a + (s - 1) / 2.0, cj = s * b + (s - 1) / 2.0;
            const double r = std::hypot(i - ci, j - cj);
            const double wr = std::max(0.0, 1.0 - r / support);
            if (wr <= 0.0) continue;
            const double e = wr * std::exp(seed(t, a, b) / tau);
            num += e * seed(t, a, b);
            den += e;
          }
        out(t, i, j) = num / den;
      }
  return out;
}

/// Count of voxels satisfying the ellipsoid inequality, by enumeration.
inline Index ellipsoid_count(Index tk, Index hk, Index wk) {
  auto term = [](Index q, Index n) {
    if (n == 1) return 0.0;
    const double u = 2.0 * q / (n - 1) - 1.0;
    return u * u;
  };
  Index z = 0;
  for (Index t = 0; t < tk; ++t)
    for (Index i = 0; i < hk; ++i)
      for (Index j = 0; j < wk; ++j)
        if (term(t, tk) + term(i, hk) + term(j, wk) <= 1.0) ++z;
  return z;
}

/// Brute-force L_K: strided valid correlation, explicit sort, MSE against
/// a template of min(n_c, round(v T H W / Z)) ones.
inline double brute_force_lk(const MaskVolume& m, Index tk, Index hk, Index wk, std::array<Index, 3> stride,
                             double v) {
  const Index z = ellipsoid_count(tk, hk, wk);
  auto inside = [&](Index t, Index i, Index j) {
    auto term = [](Index q, Index n) {
      if (n == 1) return 0.0;
      const double u = 2.0 * q / (n - 1) - 1.0;
      return u * u;
    };
    return term(t, tk) + term(i, hk) + term(j, wk) <= 1.0;
  };
  std::vector<double> outputs;
  for (Index ot = 0; ot + tk <= m.dim(0); ot += stride[0])
    for (Index oi = 0; oi + hk <= m.dim(1); oi += stride[1])
      for (Index oj = 0; oj + wk <= m.dim(2); oj += stride[2]) {
        double acc = 0.0;
        for (Index t = 0; t < tk; ++t)
          for (Index i = 0; i < hk; ++i)
            for (Index j = 0; j < wk; ++j)
              if (inside(t, i, j)) acc += m(ot + t, oi + i, oj + j) / static_cast<double>(z);
        outputs.push_back(acc);
      }
  std::sort(outputs.begin(), outputs.end(), std::greater<>());
  const auto n = static_cast<Index>(outputs.size());
  const Index ones = std::min<Index>(n, std::llround(v * m.size() / static_cast<double>(z)));
  double loss = 0.0;
  for (Index k = 0; k < n; ++k) {
    const double d = outputs[static_cast<std::size_t>(k)] - (k < ones ? 1.0 : 0.0);
    loss += d * d;
  }
  return loss / static_cast<double>(n);
}

/// Mean 4-neighbour Laplacian energy recomputed with plain loops.
inline double brute_force_energy(const VideoTensor& x, Index r0, Index r1, Index c0, Index c1, Index t0, Index t1) {
  double acc = 0.0;
  Index count = 0;
  for (Index t = t0; t <= t1; ++t)
    for (Index i = r0 + 1; i <= r1 - 1; ++i)
      for (Index j = c0 + 1; j <= c1 - 1; ++j)
        for (Index c = 0; c < x.dim(3); ++c) {
          const double l =
              4 * x(t, i, j, c) - x(t, i - 1, j, c) - x(t, i + 1, j, c) - x(t, i, j - 1, c) - x(t, i, j + 1, c);
          acc += l * l;
          ++count;
        }
  return count ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace testing
