#include "videxp/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace videxp {
namespace {

constexpr char kMagic[4] = {'V', 'T', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFFu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes[at + k]) << (8 * k);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_vtf(std::span<const std::uint32_t> dims, std::span<const float> values) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * dims.size() + 4 * values.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (std::uint32_t d : dims) put_u32(out, d);
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

RawTensor decode_vtf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("missing VTF1 magic header");
  }
  const std::uint32_t rank = get_u32(bytes, 4);
  if (rank != 3 && rank != 4) throw FormatError("unsupported VTF rank " + std::to_string(rank));
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw FormatError("truncated VTF dims block");

  RawTensor t;
  std::size_t count = 1;
  for (std::uint32_t k = 0; k < rank; ++k) {
    const std::uint32_t d = get_u32(bytes, 8 + 4 * k);
    if (d == 0) throw FormatError("VTF dims must be positive");
    t.dims.push_back(d);
    count *= d;
  }
  const std::size_t payload = bytes.size() - header;
  if (payload != 4 * count) {
    throw CorruptionError("VTF payload holds " + std::to_string(payload / 4.0) + " values, dims " +
                          "declare " + std::to_string(count));
  }
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    t.values[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
    if (!std::isfinite(t.values[i])) {
      throw ValidationError("VTF payload contains a non-finite value at index " + std::to_string(i));
    }
  }
  return t;
}

RawTensor read_raw_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_vtf(bytes);
}

void write_raw_tensor(const RawTensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_vtf(t.dims, t.values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

AnyTensor read_tensor(const std::filesystem::path& path) {
  RawTensor raw = read_raw_tensor(path);
  Eigen::ArrayXd values = Eigen::Map<const Eigen::ArrayXf>(raw.values.data(), static_cast<Index>(raw.values.size()))
                              .cast<double>();
  if (raw.dims.size() == 4) {
    VideoTensor::Dims d{raw.dims[0], raw.dims[1], raw.dims[2], raw.dims[3]};
    return VideoTensor(d, std::move(values));
  }
  MaskVolume::Dims d{raw.dims[0], raw.dims[1], raw.dims[2]};
  return MaskVolume(d, std::move(values));
}

VideoTensor read_video(const std::filesystem::path& path) {
  AnyTensor t = read_tensor(path);
  if (!std::holds_alternative<VideoTensor>(t)) {
    throw FormatError(path.string() + " holds a rank-3 tensor, expected a rank-4 video");
  }
  return std::get<VideoTensor>(std::move(t));
}

MaskVolume read_mask(const std::filesystem::path& path) {
  AnyTensor t = read_tensor(path);
  if (!std::holds_alternative<MaskVolume>(t)) {
    throw FormatError(path.string() + " holds a rank-4 tensor, expected a rank-3 mask");
  }
  return std::get<MaskVolume>(std::move(t));
}

}  // namespace videxp
