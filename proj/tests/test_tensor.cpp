#include <cstring>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "support.hpp"
#include "videxp/errors.hpp"
#include "videxp/image_io.hpp"
#include "videxp/tensor_io.hpp"

using namespace videxp;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f32(std::vector<std::uint8_t>& b, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(b, v);
}

// Hand-assembled VTF bytes, independent of the encoder.
std::vector<std::uint8_t> hand_vtf(const std::vector<std::uint32_t>& dims, const std::vector<float>& values) {
  std::vector<std::uint8_t> b{'V', 'T', 'F', '1'};
  put_u32(b, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(b, d);
  for (float f : values) put_f32(b, f);
  return b;
}

void write_gray_pgm(const fs::path& p, int h, int w, const std::vector<std::uint8_t>& px) {
  std::ofstream out(p, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace

TEST_CASE("single element file decodes to a 1x1x1x1 video") {
  testing::ScratchDir dir("vtf1");
  spit(dir / "one.vtf", hand_vtf({1, 1, 1, 1}, {0.5f}));
  const VideoTensor x = read_video(dir / "one.vtf");
  CHECK(x.dims() == VideoTensor::Dims{1, 1, 1, 1});
  CHECK(x(0, 0, 0, 0) == 0.5);
}

TEST_CASE("write then read is bit identical") {
  testing::ScratchDir dir("vtf2");
  const VideoTensor x = testing::random_video({3, 5, 4, 3}, 11, -2.0, 2.0);
  write_tensor(x, dir / "x.vtf");
  const VideoTensor y = read_video(dir / "x.vtf");
  REQUIRE(y.dims() == x.dims());
  for (Index i = 0; i < x.size(); ++i) CHECK(y.data()[i] == static_cast<double>(static_cast<float>(x.data()[i])));

  // Second round trip starts from float-representable values and must be exact.
  write_tensor(y, dir / "y.vtf");
  CHECK(slurp(dir / "x.vtf") == slurp(dir / "y.vtf"));
  CHECK(read_video(dir / "y.vtf").all_finite());
}

TEST_CASE("payload shorter than the declared dims is corruption") {
  testing::ScratchDir dir("vtf3");
  spit(dir / "short.vtf", hand_vtf({2, 2, 2, 1}, std::vector<float>(7, 1.0f)));
  CHECK_THROWS_AS(read_tensor(dir / "short.vtf"), CorruptionError);
}

TEST_CASE("bad magic and bad rank are format errors") {
  auto bytes = hand_vtf({1, 1, 1}, {0.0f});
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_vtf(bytes), FormatError);
  CHECK_THROWS_AS(decode_vtf(hand_vtf({2, 2}, {0, 0, 0, 0})), FormatError);
}

TEST_CASE("zero mask writes a 32 byte zero payload after the header") {
  testing::ScratchDir dir("vtf4");
  const MaskVolume m({2, 2, 2});
  write_tensor(m, dir / "m.vtf");
  const auto bytes = slurp(dir / "m.vtf");
  const std::size_t header = 4 + 4 + 3 * 4;
  REQUIRE(bytes.size() == header + 32);
  CHECK(std::all_of(bytes.begin() + header, bytes.end(), [](std::uint8_t b) { return b == 0; }));
  CHECK(bytes == hand_vtf({2, 2, 2}, std::vector<float>(8, 0.0f)));
}

TEST_CASE("overwriting a file truncates it") {
  testing::ScratchDir dir("vtf5");
  write_tensor(VideoTensor({4, 4, 4, 1}, 1.0), dir / "t.vtf");
  write_tensor(MaskVolume({1, 1, 1}, 0.25), dir / "t.vtf");
  CHECK(fs::file_size(dir / "t.vtf") == 4 + 4 + 12 + 4);
  CHECK(read_mask(dir / "t.vtf")(0, 0, 0) == 0.25);
}

TEST_CASE("non-finite tensors are rejected on write and read") {
  testing::ScratchDir dir("vtf6");
  MaskVolume m({1, 1, 2});
  m(0, 0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(write_tensor(m, dir / "nan.vtf"), ValidationError);
  spit(dir / "nan.vtf", hand_vtf({1, 1, 1}, {std::numeric_limits<float>::infinity()}));
  CHECK_THROWS_AS(read_mask(dir / "nan.vtf"), ValidationError);
}

TEST_CASE("rank mismatch between expected and stored tensor") {
  testing::ScratchDir dir("vtf7");
  write_tensor(MaskVolume({1, 2, 2}), dir / "m.vtf");
  CHECK_THROWS_AS(read_video(dir / "m.vtf"), FormatError);
  CHECK_THROWS_AS(read_mask(dir / "missing.vtf"), IoError);
}

TEST_CASE("PGM frames scale by 1/255 in numeric order") {
  testing::ScratchDir dir("frames");
  write_gray_pgm(dir / "10.pgm", 2, 2, {128, 128, 128, 128});
  write_gray_pgm(dir / "2.pgm", 2, 2, {255, 255, 255, 255});
  const VideoTensor x = import_frames(dir.path());
  REQUIRE(x.dims() == VideoTensor::Dims{2, 2, 2, 1});
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) {
      CHECK(x(0, i, j, 0) == doctest::Approx(1.0));
      CHECK(x(1, i, j, 0) == doctest::Approx(128.0 / 255.0).epsilon(1e-12));
    }
  CHECK(x(1, 0, 0, 0) == doctest::Approx(0.50196).epsilon(1e-5));
}

TEST_CASE("frames of different sizes are rejected") {
  testing::ScratchDir dir("frames2");
  write_gray_pgm(dir / "0.pgm", 2, 2, {0, 0, 0, 0});
  write_gray_pgm(dir / "1.pgm", 1, 2, {0, 0});
  CHECK_THROWS_AS(import_frames(dir.path()), ValidationError);
}

TEST_CASE("overlay with a zero mask reproduces the frames") {
  testing::ScratchDir dir("overlay");
  VideoTensor x({3, 4, 5, 3});
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<double>(i % 256) / 255.0;
  const auto files = export_overlay(x, MaskVolume({3, 4, 5}), dir.path());
  REQUIRE(files.size() == 3);
  Index n_files = std::distance(fs::directory_iterator(dir.path()), fs::directory_iterator());
  CHECK(n_files == 3);
  for (Index t = 0; t < 3; ++t) {
    const Image8 img = read_image(files[static_cast<std::size_t>(t)]);
    REQUIRE(img.height == 4);
    REQUIRE(img.width == 5);
    REQUIRE(img.channels == 3);
    bool same = true;
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 5; ++j)
        for (Index c = 0; c < 3; ++c) {
          const auto expect = static_cast<int>(std::lround(x(t, i, j, c) * 255.0));
          same = same && img.pixels[static_cast<std::size_t>((i * 5 + j) * 3 + c)] == expect;
        }
    CHECK(same);
  }
}

TEST_CASE("overlay with a full mask is pure colorization") {
  testing::ScratchDir dir("overlay2");
  const VideoTensor x = testing::random_video({1, 3, 3, 1}, 5);
  const auto files = export_overlay(x, MaskVolume({1, 3, 3}, 1.0), dir.path());
  const Image8 img = read_image(files.at(0));
  const auto color = overlay_color(1.0);
  for (Index p = 0; p < 9; ++p)
    for (Index c = 0; c < 3; ++c)
      CHECK(img.pixels[static_cast<std::size_t>(p * 3 + c)] == std::lround(color[static_cast<std::size_t>(c)] * 255.0));
}

TEST_CASE("tensor construction checks payload length") {
  CHECK_THROWS_AS(MaskVolume({2, 2, 2}, Eigen::ArrayXd::Zero(7)), ValidationError);
  CHECK_THROWS_AS(validate_video(VideoTensor({1, 2, 2, 2})), ValidationError);
  CHECK_THROWS_AS(validate_mask(MaskVolume({1, 1, 1}, 1.5)), ValidationError);
}
