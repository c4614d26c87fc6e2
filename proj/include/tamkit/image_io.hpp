#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tamkit/common.hpp"

namespace tamkit {

/// Planar image, channel-major (CHW), values nominally in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  std::size_t pixels() const { return width * height; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
};

inline Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, img.width - 1 - x) = img.at(c, y, x);
  return out;
}

/// Writes to a sibling temporary file and renames it over `path`.
template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& writer) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::Io, "cannot write " + tmp.string());
    writer(out);
    out.flush();
    if (!out) fail(Errc::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline std::uint8_t to_byte(double v) {
  const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

struct NetpbmHeader {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
};

inline NetpbmHeader read_netpbm_header(std::istream& in, const std::string& name) {
  NetpbmHeader h;
  auto next_token = [&]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  h.magic = next_token();
  try {
    h.width = std::stoul(next_token());
    h.height = std::stoul(next_token());
    h.maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    fail(Errc::MalformedLine, name + ": bad netpbm header");
  }
  if (h.maxval == 0 || h.maxval > 255) fail(Errc::MalformedLine, name + ": only 8-bit netpbm supported");
  return h;
}

}  // namespace detail

/// Binary PPM (P6), 8 bits per channel.
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) fail(Errc::ShapeMismatch, "PPM needs 3 channels");
  write_atomically(path, [&](std::ostream& out) {
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        for (std::size_t c = 0; c < 3; ++c) out.put(static_cast<char>(detail::to_byte(img.at(c, y, x))));
  });
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  const auto h = detail::read_netpbm_header(in, path.string());
  if (h.magic != "P6") fail(Errc::MalformedLine, path.string() + ": expected P6");
  Image img(h.width, h.height, 3);
  for (std::size_t y = 0; y < h.height; ++y)
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        char ch;
        if (!in.get(ch)) fail(Errc::MalformedLine, path.string() + ": truncated pixel data");
        img.at(c, y, x) = static_cast<double>(static_cast<std::uint8_t>(ch)) / static_cast<double>(h.maxval);
      }
  return img;
}

/// Binary PGM (P5) from raw 8-bit values.
inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<std::uint8_t>& bytes) {
  write_atomically(path, [&](std::ostream& out) {
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  });
}

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> bytes;
};

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  const auto h = detail::read_netpbm_header(in, path.string());
  if (h.magic != "P5") fail(Errc::MalformedLine, path.string() + ": expected P5");
  GrayImage g{h.width, h.height, std::vector<std::uint8_t>(h.width * h.height)};
  in.read(reinterpret_cast<char*>(g.bytes.data()), static_cast<std::streamsize>(g.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(g.bytes.size()))
    fail(Errc::MalformedLine, path.string() + ": truncated pixel data");
  return g;
}

}  // namespace tamkit
