#include "videxp/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

namespace videxp {
namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

Image8 read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 img;
  img.height = image.height;
  img.width = image.width;
  img.channels = color ? 3 : 1;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return img;
}

// Skips whitespace and '#' comments between PNM header tokens.
std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

Image8 read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P2") throw FormatError(path.string() + " is not a PGM (P2/P5) file");
  Image8 img;
  img.channels = 1;
  try {
    img.width = std::stol(next_token(in));
    img.height = std::stol(next_token(in));
  } catch (const std::exception&) {
    throw FormatError("malformed PGM header in " + path.string());
  }
  const long maxval = std::stol(next_token(in));
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255) {
    throw FormatError("unsupported PGM geometry or depth in " + path.string());
  }
  const auto n = static_cast<std::size_t>(img.width * img.height);
  img.pixels.resize(n);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw CorruptionError("truncated PGM " + path.string());
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      long v = 0;
      if (!(in >> v)) throw CorruptionError("truncated PGM " + path.string());
      img.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0L, maxval));
    }
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
  }
  return img;
}

std::optional<long long> stem_number(const fs::path& p) {
  const std::string s = p.stem().string();
  auto end = s.find_last_of("0123456789");
  if (end == std::string::npos) return std::nullopt;
  auto begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(s[begin - 1]))) --begin;
  return std::stoll(s.substr(begin, end - begin + 1));
}

}  // namespace

Image8 read_image(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  throw FormatError("unsupported image extension: " + path.string());
}

void write_png(const Image8& img, const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

void write_pgm(const Image8& img, const fs::path& path) {
  if (img.channels != 1) throw ValidationError("PGM output requires a single channel image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

VideoTensor import_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string ext = lower_ext(entry.path());
    if (entry.is_regular_file() && (ext == ".png" || ext == ".pgm")) files.push_back(entry.path());
  }
  if (files.empty()) throw ValidationError("no PNG/PGM frames in " + dir.string());

  std::stable_sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto na = stem_number(a), nb = stem_number(b);
    if (na && nb && *na != *nb) return *na < *nb;
    if (na.has_value() != nb.has_value()) return na.has_value();
    return a.filename() < b.filename();
  });

  std::vector<Image8> images;
  images.reserve(files.size());
  for (const auto& f : files) {
    images.push_back(read_image(f));
    const Image8& first = images.front();
    const Image8& cur = images.back();
    if (cur.height != first.height || cur.width != first.width || cur.channels != first.channels) {
      throw ValidationError("frame " + f.filename().string() + " differs in size or channels from " +
                            files.front().filename().string());
    }
  }

  const Image8& first = images.front();
  VideoTensor x({static_cast<Index>(images.size()), first.height, first.width, first.channels});
  const Index per_frame = first.height * first.width * first.channels;
  for (std::size_t t = 0; t < images.size(); ++t) {
    const auto& px = images[t].pixels;
    for (Index i = 0; i < per_frame; ++i) {
      x.data()[static_cast<Index>(t) * per_frame + i] = px[static_cast<std::size_t>(i)] / 255.0;
    }
  }
  return x;
}

Image8 frame_to_image(const VideoTensor& x, Index t) {
  Image8 img{x.dim(1), x.dim(2), x.dim(3), {}};
  const Index n = x.dim(1) * x.dim(2) * x.dim(3);
  img.pixels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double v = std::clamp(x.data()[t * n + i], 0.0, 1.0);
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

std::array<double, 3> overlay_color(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0.0, 0.0, 0.5},
      {0.0, 0.3, 1.0},
      {0.0, 1.0, 1.0},
      {1.0, 1.0, 0.0},
      {1.0, 0.0, 0.0},
  }};
  v = std::clamp(v, 0.0, 1.0);
  const double pos = v * (stops.size() - 1);
  const auto lo = std::min<std::size_t>(static_cast<std::size_t>(pos), stops.size() - 2);
  const double f = pos - static_cast<double>(lo);
  std::array<double, 3> rgb{};
  for (int k = 0; k < 3; ++k) rgb[k] = (1.0 - f) * stops[lo][k] + f * stops[lo + 1][k];
  return rgb;
}

std::vector<fs::path> export_overlay(const VideoTensor& x, const MaskVolume& m, const fs::path& dir) {
  validate_video(x);
  require_compatible(x, m);
  validate_mask(m);
  fs::create_directories(dir);

  const Index T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  std::vector<fs::path> written;
  for (Index t = 0; t < T; ++t) {
    Image8 img{H, W, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(H * W * 3))};
    for (Index i = 0; i < H; ++i) {
      for (Index j = 0; j < W; ++j) {
        const double mv = m(t, i, j);
        const auto color = overlay_color(mv);
        for (Index k = 0; k < 3; ++k) {
          const double base = x(t, i, j, C == 3 ? k : 0);
          const double v = std::clamp((1.0 - mv) * base + mv * color[k], 0.0, 1.0);
          img.pixels[static_cast<std::size_t>((i * W + j) * 3 + k)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    std::ostringstream name;
    name << "overlay_" << std::setw(4) << std::setfill('0') << t << ".png";
    written.push_back(dir / name.str());
    write_png(img, written.back());
  }
  return written;
}

}  // namespace videxp
