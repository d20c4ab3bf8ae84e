#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "videxp/tensor.hpp"

namespace videxp {

/// Low-resolution optimization variable. Full resolution is (T, s*h, s*w).
template <typename Scalar>
struct SeedMask {
  Volume<Scalar> values;
  int factor = 7;

  Index frames() const { return values.dim(0); }
  Index height() const { return values.dim(1); }
  Index width() const { return values.dim(2); }
  typename Volume<Scalar>::Dims full_dims() const {
    return {values.dim(0), values.dim(1) * factor, values.dim(2) * factor};
  }
};

inline constexpr double kDefaultSmoothMaxTemperature = 0.2;

/// Smooth-max transposed-convolution upsampler.
///
///   m(u) = sum_v w(u - c_v) s_v exp(s_v / tau) / sum_v w(u - c_v) exp(s_v / tau)
///
/// where c_v is the pixel-space center of seed cell v and
/// w(r) = max(0, 1 - |r| / (1.5 s)). Every pixel has its own cell center
/// within reach, so the denominator never vanishes. The contributor table
/// depends only on the frame geometry and is built once.
template <typename Scalar>
class SmoothMaxUpsampler {
 public:
  SmoothMaxUpsampler(Index seed_height, Index seed_width, int factor,
                     double temperature = kDefaultSmoothMaxTemperature)
      : seed_h_(seed_height), seed_w_(seed_width), factor_(factor), tau_(temperature) {
    if (seed_h_ < 1 || seed_w_ < 1 || factor_ < 1) throw ValidationError("invalid upsampler geometry");
    if (!(tau_ > 0.0)) throw ValidationError("smooth-max temperature must be positive");
    build_table();
  }

  Index full_height() const { return seed_h_ * factor_; }
  Index full_width() const { return seed_w_ * factor_; }
  double temperature() const { return tau_; }
  int factor() const { return factor_; }

  Volume<Scalar> forward(const Volume<Scalar>& seed) const {
    check_seed(seed);
    const Index T = seed.dim(0), pix = full_height() * full_width(), cells = seed_h_ * seed_w_;
    Volume<Scalar> out({T, full_height(), full_width()});
    Eigen::Array<Scalar, Eigen::Dynamic, 1> e(cells);
    for (Index t = 0; t < T; ++t) {
      const Scalar* s = seed.data().data() + t * cells;
      for (Index v = 0; v < cells; ++v) e[v] = std::exp(s[v] / static_cast<Scalar>(tau_));
      Scalar* m = out.data().data() + t * pix;
      for (Index u = 0; u < pix; ++u) {
        Scalar num = 0, den = 0;
        for (Index k = row_start_[u]; k < row_start_[u + 1]; ++k) {
          const Index v = cell_[k];
          const Scalar a = weight_[k] * e[v];
          num += a * s[v];
          den += a;
        }
        m[u] = num / den;
      }
    }
    return out;
  }

  /// Gradient with respect to the seed, d m(u) / d s_v = (a_uv / A_u) (1 + (s_v - m(u)) / tau).
  Volume<Scalar> vjp(const Volume<Scalar>& seed, const Volume<Scalar>& upstream) const {
    check_seed(seed);
    if (upstream.dim(0) != seed.dim(0) || upstream.dim(1) != full_height() || upstream.dim(2) != full_width()) {
      throw ValidationError("upsample upstream dims " + format_dims(upstream.dims()) +
                            " do not match full-resolution mask dims");
    }
    const Index T = seed.dim(0), pix = full_height() * full_width(), cells = seed_h_ * seed_w_;
    const Scalar inv_tau = Scalar(1) / static_cast<Scalar>(tau_);
    Volume<Scalar> grad(seed.dims());
    Eigen::Array<Scalar, Eigen::Dynamic, 1> e(cells);
    for (Index t = 0; t < T; ++t) {
      const Scalar* s = seed.data().data() + t * cells;
      const Scalar* up = upstream.data().data() + t * pix;
      Scalar* g = grad.data().data() + t * cells;
      for (Index v = 0; v < cells; ++v) e[v] = std::exp(s[v] * inv_tau);
      for (Index u = 0; u < pix; ++u) {
        if (up[u] == Scalar(0)) continue;
        Scalar num = 0, den = 0;
        for (Index k = row_start_[u]; k < row_start_[u + 1]; ++k) {
          const Scalar a = weight_[k] * e[cell_[k]];
          num += a * s[cell_[k]];
          den += a;
        }
        const Scalar mu = num / den;
        const Scalar scale = up[u] / den;
        for (Index k = row_start_[u]; k < row_start_[u + 1]; ++k) {
          const Index v = cell_[k];
          g[v] += scale * weight_[k] * e[v] * (Scalar(1) + (s[v] - mu) * inv_tau);
        }
      }
    }
    return grad;
  }

 private:
  void check_seed(const Volume<Scalar>& seed) const {
    if (seed.dim(1) != seed_h_ || seed.dim(2) != seed_w_) {
      throw ValidationError("seed dims " + format_dims(seed.dims()) + " do not match upsampler geometry");
    }
  }

  void build_table() {
    const double s = factor_;
    const double reach = 1.5 * s;
    const double half = (s - 1.0) / 2.0;
    const Index H = full_height(), W = full_width();
    row_start_.reserve(static_cast<std::size_t>(H * W + 1));
    row_start_.push_back(0);
    for (Index i = 0; i < H; ++i) {
      for (Index j = 0; j < W; ++j) {
        const Index ci = i / factor_, cj = j / factor_;
        for (Index vi = std::max<Index>(0, ci - 2); vi <= std::min<Index>(seed_h_ - 1, ci + 2); ++vi) {
          for (Index vj = std::max<Index>(0, cj - 2); vj <= std::min<Index>(seed_w_ - 1, cj + 2); ++vj) {
            const double di = i - (vi * s + half), dj = j - (vj * s + half);
            const double w = 1.0 - std::sqrt(di * di + dj * dj) / reach;
            if (w > 0.0) {
              cell_.push_back(vi * seed_w_ + vj);
              weight_.push_back(static_cast<Scalar>(w));
            }
          }
        }
        row_start_.push_back(static_cast<Index>(cell_.size()));
      }
    }
  }

  Index seed_h_, seed_w_;
  int factor_;
  double tau_;
  std::vector<Index> row_start_;
  std::vector<Index> cell_;
  std::vector<Scalar> weight_;
};

template <typename Scalar>
Volume<Scalar> upsample(const SeedMask<Scalar>& seed, double temperature = kDefaultSmoothMaxTemperature) {
  return SmoothMaxUpsampler<Scalar>(seed.height(), seed.width(), seed.factor, temperature).forward(seed.values);
}

template <typename Scalar>
Volume<Scalar> upsample_vjp(const SeedMask<Scalar>& seed, const Volume<Scalar>& upstream,
                            double temperature = kDefaultSmoothMaxTemperature) {
  return SmoothMaxUpsampler<Scalar>(seed.height(), seed.width(), seed.factor, temperature)
      .vjp(seed.values, upstream);
}

/// Normalized temporal Gaussian, profile k_u = exp(-u^2 / (0.6 sigma)) with sigma = delta_t.
struct TemporalSmoother {
  int delta_t = 0;
  Eigen::ArrayXd weights = Eigen::ArrayXd::Ones(1);

  double tap(int u) const { return weights[u + delta_t]; }
};

inline TemporalSmoother make_temporal_smoother(int delta_t) {
  if (delta_t < 0) throw ValidationError("temporal smoothing radius must be non-negative");
  TemporalSmoother sm;
  sm.delta_t = delta_t;
  sm.weights.resize(2 * delta_t + 1);
  for (int u = -delta_t; u <= delta_t; ++u) {
    sm.weights[u + delta_t] = delta_t == 0 ? 1.0 : std::exp(-(u * u) / (0.6 * delta_t));
  }
  sm.weights /= sm.weights.sum();
  return sm;
}

/// 1D smoothing along t at every spatial location; weights renormalized
/// over the frames that exist near the sequence ends.
template <typename Scalar>
Volume<Scalar> temporal_smooth(const Volume<Scalar>& seed, const TemporalSmoother& sm) {
  const Index T = seed.dim(0), plane_size = seed.dim(1) * seed.dim(2);
  if (T < 1) throw ValidationError("temporal smoothing needs at least one frame");
  Volume<Scalar> out(seed.dims());
  auto in = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      seed.data().data(), T, plane_size);
  auto dst = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      out.data().data(), T, plane_size);
  for (Index t = 0; t < T; ++t) {
    const Index lo = std::max<Index>(0, t - sm.delta_t), hi = std::min<Index>(T - 1, t + sm.delta_t);
    Scalar z = 0;
    for (Index q = lo; q <= hi; ++q) z += static_cast<Scalar>(sm.tap(static_cast<int>(q - t)));
    dst.row(t).setZero();
    for (Index q = lo; q <= hi; ++q) dst.row(t) += static_cast<Scalar>(sm.tap(static_cast<int>(q - t))) / z * in.row(q);
  }
  return out;
}

/// Adjoint of temporal_smooth.
template <typename Scalar>
Volume<Scalar> temporal_smooth_vjp(const TemporalSmoother& sm, const Volume<Scalar>& upstream) {
  const Index T = upstream.dim(0), plane_size = upstream.dim(1) * upstream.dim(2);
  Volume<Scalar> grad(upstream.dims());
  auto up = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      upstream.data().data(), T, plane_size);
  auto g = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      grad.data().data(), T, plane_size);
  for (Index t = 0; t < T; ++t) {
    const Index lo = std::max<Index>(0, t - sm.delta_t), hi = std::min<Index>(T - 1, t + sm.delta_t);
    Scalar z = 0;
    for (Index q = lo; q <= hi; ++q) z += static_cast<Scalar>(sm.tap(static_cast<int>(q - t)));
    for (Index q = lo; q <= hi; ++q) g.row(q) += static_cast<Scalar>(sm.tap(static_cast<int>(q - t))) / z * up.row(t);
  }
  return grad;
}

template <typename Scalar>
void check_same_dims(const Volume<Scalar>& a, const Volume<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(what) + ": dims " + format_dims(a.dims()) + " vs " + format_dims(b.dims()));
  }
}

}  // namespace videxp
