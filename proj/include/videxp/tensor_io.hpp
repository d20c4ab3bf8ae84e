#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "videxp/tensor.hpp"

namespace videxp {

// VTF layout: "VTF1" | u32 rank | rank x u32 dims | prod(dims) x f32, all little-endian.

using AnyTensor = std::variant<VideoTensor, MaskVolume>;

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_vtf(std::span<const std::uint32_t> dims, std::span<const float> values);
RawTensor decode_vtf(std::span<const std::uint8_t> bytes);

RawTensor read_raw_tensor(const std::filesystem::path& path);
void write_raw_tensor(const RawTensor& t, const std::filesystem::path& path);

/// Rank 4 yields a VideoTensor, rank 3 a MaskVolume.
AnyTensor read_tensor(const std::filesystem::path& path);
VideoTensor read_video(const std::filesystem::path& path);
MaskVolume read_mask(const std::filesystem::path& path);

template <typename Scalar, int Rank>
RawTensor to_raw(const DenseTensor<Scalar, Rank>& t) {
  RawTensor raw;
  raw.dims.reserve(Rank);
  for (Index d : t.dims()) raw.dims.push_back(static_cast<std::uint32_t>(d));
  raw.values.resize(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) raw.values[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
  return raw;
}

template <typename Scalar, int Rank>
void write_tensor(const DenseTensor<Scalar, Rank>& t, const std::filesystem::path& path) {
  static_assert(Rank == 3 || Rank == 4, "VTF stores rank 3 or rank 4 tensors");
  if (!t.all_finite()) throw ValidationError("refusing to write non-finite tensor to " + path.string());
  write_raw_tensor(to_raw(t), path);
}

}  // namespace videxp
