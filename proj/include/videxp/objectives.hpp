#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "videxp/errors.hpp"
#include "videxp/tensor.hpp"

namespace videxp {

/// Number of ones in the area template of length n at ratio a: round(a * n).
inline Index template_ones(Index n, double ratio) {
  return std::clamp<Index>(static_cast<Index>(std::llround(ratio * static_cast<double>(n))), 0, n);
}

/// r_a: round(a * n) ones followed by zeros.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> area_template(Index n, double ratio) {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> r = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(n);
  r.head(template_ones(n, ratio)).setOnes();
  return r;
}

template <typename Scalar>
struct SortedValues {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> values;
  std::vector<Index> permutation;  // values[i] == input[permutation[i]]
};

/// Stable descending sort. Equal values keep their input order.
template <typename Derived>
SortedValues<typename Derived::Scalar> vecsort(const Eigen::DenseBase<Derived>& input) {
  using Scalar = typename Derived::Scalar;
  const Index n = input.size();
  SortedValues<Scalar> out;
  out.permutation.resize(static_cast<std::size_t>(n));
  std::iota(out.permutation.begin(), out.permutation.end(), Index{0});
  std::stable_sort(out.permutation.begin(), out.permutation.end(),
                   [&](Index a, Index b) { return input.derived().coeff(a) > input.derived().coeff(b); });
  out.values.resize(n);
  for (Index i = 0; i < n; ++i) out.values[i] = input.derived().coeff(out.permutation[static_cast<std::size_t>(i)]);
  return out;
}

template <typename Tensor>
struct LossAndGradient {
  typename Tensor::Scalar loss = 0;
  Tensor gradient;
};

namespace detail {

// Mean-squared distance of the sorted values to the template, with the
// gradient scattered back through the sort permutation.
template <typename Scalar, typename Out>
Scalar sorted_template_loss(const Scalar* values, Index n, Index ones, Out* grad) {
  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> v(values, n);
  const auto sorted = vecsort(v);
  Scalar loss = 0;
  const Scalar scale = Scalar(2) / static_cast<Scalar>(n);
  for (Index i = 0; i < n; ++i) {
    const Scalar r = i < ones ? Scalar(1) : Scalar(0);
    const Scalar d = sorted.values[i] - r;
    loss += d * d;
    grad[sorted.permutation[static_cast<std::size_t>(i)]] = scale * d;
  }
  return loss / static_cast<Scalar>(n);
}

}  // namespace detail

/// (1/n) ||vecsort(m) - r_a||^2 over all entries of m.
template <typename Scalar, int Rank>
LossAndGradient<DenseTensor<Scalar, Rank>> area_loss(const DenseTensor<Scalar, Rank>& m, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("area ratio must lie in [0,1]");
  LossAndGradient<DenseTensor<Scalar, Rank>> out{Scalar(0), DenseTensor<Scalar, Rank>(m.dims())};
  const Index n = m.size();
  out.loss = detail::sorted_template_loss(m.data().data(), n, template_ones(n, ratio), out.gradient.data().data());
  return out;
}

/// Sum over frames of the per-frame area loss, each frame with its own template.
template <typename Scalar>
LossAndGradient<Volume<Scalar>> area_loss_per_frame(const Volume<Scalar>& m, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("area ratio must lie in [0,1]");
  LossAndGradient<Volume<Scalar>> out{Scalar(0), Volume<Scalar>(m.dims())};
  const Index per_frame = m.dim(1) * m.dim(2);
  const Index ones = template_ones(per_frame, ratio);
  for (Index t = 0; t < m.dim(0); ++t) {
    out.loss += detail::sorted_template_loss(m.data().data() + t * per_frame, per_frame, ones,
                                             out.gradient.data().data() + t * per_frame);
  }
  return out;
}

/// Normalized 0/1 ellipsoid indicator with extents (T_K, H_K, W_K).
struct EllipsoidKernel {
  std::array<Index, 3> extents{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1};
  MaskVolume weights;  // K = k / Z
  Index support = 1;   // Z

  double value(Index t, Index i, Index j) const { return weights(t, i, j); }
};

/// Axis term (2 q / (n - 1) - 1)^2, defined as 0 for a degenerate extent n = 1.
inline double ellipsoid_axis_term(Index q, Index extent) {
  if (extent == 1) return 0.0;
  const double u = 2.0 * static_cast<double>(q) / static_cast<double>(extent - 1) - 1.0;
  return u * u;
}

inline EllipsoidKernel build_ellipsoid_kernel(Index t_extent, Index h_extent, Index w_extent,
                                              std::array<Index, 3> stride = {1, 1, 1}) {
  if (t_extent < 1 || h_extent < 1 || w_extent < 1) throw ValidationError("kernel extents must be >= 1");
  if (stride[0] < 1 || stride[1] < 1 || stride[2] < 1) throw ValidationError("kernel strides must be >= 1");
  EllipsoidKernel k;
  k.extents = {t_extent, h_extent, w_extent};
  k.stride = stride;
  k.weights = MaskVolume({t_extent, h_extent, w_extent});
  Index z = 0;
  for (Index t = 0; t < t_extent; ++t)
    for (Index i = 0; i < h_extent; ++i)
      for (Index j = 0; j < w_extent; ++j) {
        const double r = ellipsoid_axis_term(t, t_extent) + ellipsoid_axis_term(i, h_extent) +
                         ellipsoid_axis_term(j, w_extent);
        if (r <= 1.0) {
          k.weights(t, i, j) = 1.0;
          ++z;
        }
      }
  if (z == 0) throw ValidationError("ellipsoid kernel " + std::to_string(t_extent) + "x" + std::to_string(h_extent) + "x" + std::to_string(w_extent) + " covers no voxel centre; use odd extents");
  k.support = z;
  k.weights.data() /= static_cast<double>(z);
  return k;
}

inline std::array<Index, 3> correlation_output_dims(const std::array<Index, 3>& input, const EllipsoidKernel& k) {
  std::array<Index, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (input[a] < k.extents[a]) {
      throw ValidationError("kernel extent " + std::to_string(k.extents[a]) + " exceeds mask extent " +
                            std::to_string(input[a]) + " on axis " + std::to_string(a));
    }
    out[a] = (input[a] - k.extents[a]) / k.stride[a] + 1;
  }
  return out;
}

/// Strided valid 3D cross-correlation of a mask with the kernel.
template <typename Scalar>
Volume<Scalar> correlate(const Volume<Scalar>& m, const EllipsoidKernel& k) {
  const auto od = correlation_output_dims(m.dims(), k);
  Volume<Scalar> out({od[0], od[1], od[2]});
  for (Index ot = 0; ot < od[0]; ++ot)
    for (Index oi = 0; oi < od[1]; ++oi)
      for (Index oj = 0; oj < od[2]; ++oj) {
        Scalar acc = 0;
        for (Index dt = 0; dt < k.extents[0]; ++dt)
          for (Index di = 0; di < k.extents[1]; ++di) {
            const Scalar* row = &m(ot * k.stride[0] + dt, oi * k.stride[1] + di, oj * k.stride[2]);
            for (Index dj = 0; dj < k.extents[2]; ++dj) acc += static_cast<Scalar>(k.weights(dt, di, dj)) * row[dj];
          }
        out(ot, oi, oj) = acc;
      }
  return out;
}

/// Adjoint of `correlate`: scatters output gradients back onto the mask grid.
template <typename Scalar>
Volume<Scalar> correlate_transpose(const Volume<Scalar>& upstream, const EllipsoidKernel& k,
                                   const typename Volume<Scalar>::Dims& mask_dims) {
  const auto od = correlation_output_dims(mask_dims, k);
  if (upstream.dim(0) != od[0] || upstream.dim(1) != od[1] || upstream.dim(2) != od[2]) {
    throw ValidationError("correlation upstream dims do not match output geometry");
  }
  Volume<Scalar> grad(mask_dims);
  for (Index ot = 0; ot < od[0]; ++ot)
    for (Index oi = 0; oi < od[1]; ++oi)
      for (Index oj = 0; oj < od[2]; ++oj) {
        const Scalar g = upstream(ot, oi, oj);
        if (g == Scalar(0)) continue;
        for (Index dt = 0; dt < k.extents[0]; ++dt)
          for (Index di = 0; di < k.extents[1]; ++di) {
            Scalar* row = &grad(ot * k.stride[0] + dt, oi * k.stride[1] + di, oj * k.stride[2]);
            for (Index dj = 0; dj < k.extents[2]; ++dj) row[dj] += static_cast<Scalar>(k.weights(dt, di, dj)) * g;
          }
      }
  return grad;
}

template <typename Scalar>
struct SmoothnessLoss {
  Scalar loss = 0;
  Volume<Scalar> gradient;
  Index outputs = 0;     // n_c
  Index ones = 0;        // template ones actually used
  bool saturated = false;  // round(v T H W / Z) exceeded n_c
};

/// L_K: mean-squared distance of vecsort(M * K) to a template holding
/// min(n_c, round(v T H W / Z)) ones.
template <typename Scalar>
SmoothnessLoss<Scalar> smoothness_loss(const Volume<Scalar>& m, const EllipsoidKernel& k, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("preservation ratio must lie in [0,1]");
  const Volume<Scalar> conv = correlate(m, k);
  SmoothnessLoss<Scalar> out;
  out.outputs = conv.size();
  const double wanted = ratio * static_cast<double>(m.size()) / static_cast<double>(k.support);
  const auto requested = static_cast<Index>(std::llround(wanted));
  out.saturated = requested > out.outputs;
  out.ones = std::min(requested, out.outputs);
  Volume<Scalar> conv_grad(conv.dims());
  out.loss = detail::sorted_template_loss(conv.data().data(), conv.size(), out.ones, conv_grad.data().data());
  out.gradient = correlate_transpose(conv_grad, k, m.dims());
  return out;
}

}  // namespace videxp
