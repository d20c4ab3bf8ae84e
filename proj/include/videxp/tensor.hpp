#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <type_traits>

#include "videxp/errors.hpp"

namespace videxp {

using Index = Eigen::Index;

/// Dense row-major tensor of fixed rank backed by a flat Eigen array.
///
/// The last dimension varies fastest. For a video that is t -> h -> w -> c,
/// for a mask volume t -> h -> w. The flat storage is exposed through
/// `data()` so elementwise work can be written as Eigen array expressions.
template <typename Scalar_, int Rank_>
class DenseTensor {
 public:
  using Scalar = Scalar_;
  static constexpr int Rank = Rank_;
  using Dims = std::array<Index, Rank>;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  DenseTensor() { dims_.fill(0); }

  explicit DenseTensor(const Dims& dims, Scalar fill = Scalar(0))
      : dims_(dims), data_(Storage::Constant(product(dims), fill)) {}

  DenseTensor(const Dims& dims, Storage data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != product(dims_)) {
      throw ValidationError("tensor payload length " + std::to_string(data_.size()) +
                            " does not match dims product " + std::to_string(product(dims_)));
    }
  }

  const Dims& dims() const { return dims_; }
  Index dim(int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    static_assert(sizeof...(Idx) == Rank, "index count must equal rank");
    return data_[offset(idx...)];
  }

  template <typename... Idx>
  const Scalar& operator()(Idx... idx) const {
    static_assert(sizeof...(Idx) == Rank, "index count must equal rank");
    return data_[offset(idx...)];
  }

  template <typename... Idx>
  Index offset(Idx... idx) const {
    const std::array<Index, Rank> i{static_cast<Index>(idx)...};
    Index off = 0;
    for (int k = 0; k < Rank; ++k) off = off * dims_[k] + i[k];
    return off;
  }

  template <typename Other>
  DenseTensor<Other, Rank> cast() const {
    return DenseTensor<Other, Rank>(dims_, data_.template cast<Other>());
  }

  bool same_shape(const DenseTensor& other) const { return dims_ == other.dims_; }

  bool all_finite() const { return data_.isFinite().all(); }

  friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
    return a.dims_ == b.dims_ && (a.data_ == b.data_).all();
  }

  static Index product(const Dims& dims) {
    Index n = 1;
    for (Index d : dims) n *= d;
    return n;
  }

 private:
  Dims dims_;
  Storage data_;
};

template <typename Scalar>
using Video = DenseTensor<Scalar, 4>;
template <typename Scalar>
using Volume = DenseTensor<Scalar, 3>;

using VideoTensor = Video<double>;
using MaskVolume = Volume<double>;

template <typename Dims>
std::string format_dims(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t k = 0; k < dims.size(); ++k) os << (k ? "," : "") << dims[k];
  os << ')';
  return os.str();
}

/// Row-major H x W view of one channel of one frame.
template <typename Scalar>
using PlaneMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                            Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Scalar>
using ConstPlaneMap =
    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
               Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

template <typename Scalar>
PlaneMap<Scalar> plane(Video<Scalar>& x, Index t, Index c) {
  const Index h = x.dim(1), w = x.dim(2), ch = x.dim(3);
  return PlaneMap<Scalar>(x.data().data() + t * h * w * ch + c, h, w,
                          Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(w * ch, ch));
}

template <typename Scalar>
ConstPlaneMap<Scalar> plane(const Video<Scalar>& x, Index t, Index c) {
  const Index h = x.dim(1), w = x.dim(2), ch = x.dim(3);
  return ConstPlaneMap<Scalar>(x.data().data() + t * h * w * ch + c, h, w,
                               Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(w * ch, ch));
}

template <typename Scalar>
PlaneMap<Scalar> frame(Volume<Scalar>& m, Index t) {
  const Index h = m.dim(1), w = m.dim(2);
  return PlaneMap<Scalar>(m.data().data() + t * h * w, h, w,
                          Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(w, 1));
}

template <typename Scalar>
ConstPlaneMap<Scalar> frame(const Volume<Scalar>& m, Index t) {
  const Index h = m.dim(1), w = m.dim(2);
  return ConstPlaneMap<Scalar>(m.data().data() + t * h * w, h, w,
                               Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(w, 1));
}

template <typename Scalar>
void validate_video(const Video<Scalar>& x) {
  const auto& d = x.dims();
  if (d[0] < 1 || d[1] < 1 || d[2] < 1) {
    throw ValidationError("video dims must be positive, got " + format_dims(d));
  }
  if (d[3] != 1 && d[3] != 3) {
    throw ValidationError("video channel count must be 1 or 3, got " + std::to_string(d[3]));
  }
  if (!x.all_finite()) throw ValidationError("video contains non-finite values");
}

template <typename Scalar>
void validate_mask(const Volume<Scalar>& m) {
  const auto& d = m.dims();
  if (d[0] < 1 || d[1] < 1 || d[2] < 1) {
    throw ValidationError("mask dims must be positive, got " + format_dims(d));
  }
  if (!m.all_finite()) throw ValidationError("mask contains non-finite values");
  if ((m.data() < Scalar(0)).any() || (m.data() > Scalar(1)).any()) {
    throw ValidationError("mask values must lie in [0,1]");
  }
}

/// Mask and video agree on (T, H, W).
template <typename Scalar>
void require_compatible(const Video<Scalar>& x, const Volume<Scalar>& m) {
  if (x.dim(0) != m.dim(0) || x.dim(1) != m.dim(1) || x.dim(2) != m.dim(2)) {
    throw ValidationError("mask dims " + format_dims(m.dims()) + " incompatible with video dims " +
                          format_dims(x.dims()));
  }
}

}  // namespace videxp
