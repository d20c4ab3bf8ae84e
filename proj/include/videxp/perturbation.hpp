#pragma once

#include <algorithm>
#include <cmath>

#include "videxp/tensor.hpp"

namespace videxp {

/// Spatial Gaussian blur used as the deletion operator.
struct BlurSpec {
  double sigma = 1.0;

  /// Taps extend to ceil(2 sigma) on either side.
  int radius() const { return static_cast<int>(std::ceil(2.0 * sigma)); }
};

/// sigma = max(H, W) / 10.
inline BlurSpec default_blur(Index height, Index width) {
  return BlurSpec{static_cast<double>(std::max(height, width)) / 10.0};
}

inline void validate_blur(const BlurSpec& b) {
  if (!(b.sigma > 0.0) || !std::isfinite(b.sigma)) {
    throw ValidationError("blur sigma must be positive and finite");
  }
}

/// Unnormalized 1D taps exp(-k^2 / (2 sigma^2)) for k in [-radius, radius].
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> gaussian_taps(const BlurSpec& b) {
  const int r = b.radius();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> taps(2 * r + 1);
  for (int k = -r; k <= r; ++k) {
    taps[k + r] = static_cast<Scalar>(std::exp(-(k * k) / (2.0 * b.sigma * b.sigma)));
  }
  return taps;
}

namespace detail {

// 1D correlation along one axis of a row-major plane, taps renormalized to
// the in-bounds support. Because the support of a separable kernel clipped
// to a rectangle factorizes, two passes give exact 2D border renormalization.
template <typename Scalar, typename In, typename Out>
void blur_axis(const In& in, Out& out, const Eigen::Array<Scalar, Eigen::Dynamic, 1>& taps, bool along_rows) {
  const Index r = (taps.size() - 1) / 2;
  const Index rows = in.rows(), cols = in.cols();
  const Index len = along_rows ? cols : rows;
  for (Index a = 0; a < rows; ++a) {
    for (Index b = 0; b < cols; ++b) {
      const Index pos = along_rows ? b : a;
      const Index lo = std::max<Index>(0, pos - r), hi = std::min<Index>(len - 1, pos + r);
      Scalar acc = 0, norm = 0;
      for (Index q = lo; q <= hi; ++q) {
        const Scalar w = taps[q - pos + r];
        acc += w * (along_rows ? in(a, q) : in(q, b));
        norm += w;
      }
      out(a, b) = acc / norm;
    }
  }
}

}  // namespace detail

/// Per-frame, per-channel 2D Gaussian blur with border renormalization.
template <typename Scalar>
Video<Scalar> blur(const Video<Scalar>& x, const BlurSpec& b) {
  validate_video(x);
  validate_blur(b);
  const auto taps = gaussian_taps<Scalar>(b);
  Video<Scalar> out(x.dims());
  using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Plane tmp(x.dim(1), x.dim(2));
  for (Index t = 0; t < x.dim(0); ++t) {
    for (Index c = 0; c < x.dim(3); ++c) {
      detail::blur_axis(plane(x, t, c), tmp, taps, true);
      auto dst = plane(out, t, c);
      detail::blur_axis(tmp, dst, taps, false);
    }
  }
  return out;
}

/// m (x) x = m * x + (1 - m) * blur(x), mask broadcast over channels.
///
/// The blurred video is computed once at construction and reused for every
/// mask; an instance belongs to one optimization run.
template <typename Scalar>
class Perturbation {
 public:
  Perturbation(Video<Scalar> x, const BlurSpec& b) : x_(std::move(x)), spec_(b), blurred_(blur(x_, b)) {
    delta_ = x_.data() - blurred_.data();
  }

  const Video<Scalar>& original() const { return x_; }
  const Video<Scalar>& blurred() const { return blurred_; }
  const BlurSpec& spec() const { return spec_; }

  Video<Scalar> apply(const Volume<Scalar>& m) const {
    require_compatible(x_, m);
    const Index ch = x_.dim(3);
    Video<Scalar> out(x_.dims());
    for (Index c = 0; c < ch; ++c) {
      auto mc = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(m.data().data(), m.size());
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<>> o(
          out.data().data() + c, m.size(), Eigen::InnerStride<>(ch));
      Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<>> xs(
          x_.data().data() + c, m.size(), Eigen::InnerStride<>(ch));
      Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<>> bs(
          blurred_.data().data() + c, m.size(), Eigen::InnerStride<>(ch));
      o = mc * xs + (Scalar(1) - mc) * bs;
    }
    return out;
  }

  /// d Phi / d m from d Phi / d x', summed over channels.
  Volume<Scalar> vjp(const Video<Scalar>& upstream) const {
    if (!upstream.same_shape(x_)) {
      throw ValidationError("upstream gradient dims " + format_dims(upstream.dims()) +
                            " do not match video dims " + format_dims(x_.dims()));
    }
    const Index ch = x_.dim(3);
    Volume<Scalar> g({x_.dim(0), x_.dim(1), x_.dim(2)});
    const auto prod = (upstream.data() * delta_).eval();
    g.data() = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>>(prod.data(), ch, g.size())
                   .colwise()
                   .sum()
                   .transpose();
    return g;
  }

 private:
  Video<Scalar> x_;
  BlurSpec spec_;
  Video<Scalar> blurred_;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> delta_;
};

template <typename Scalar>
Video<Scalar> perturb(const Video<Scalar>& x, const Volume<Scalar>& m, const BlurSpec& b) {
  require_compatible(x, m);
  validate_mask(m);
  return Perturbation<Scalar>(x, b).apply(m);
}

template <typename Scalar>
Volume<Scalar> perturb_vjp(const Video<Scalar>& x, const BlurSpec& b, const Video<Scalar>& upstream) {
  return Perturbation<Scalar>(x, b).vjp(upstream);
}

}  // namespace videxp
