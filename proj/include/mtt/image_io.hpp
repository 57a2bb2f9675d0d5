#pragma once

// Binary PGM (P5) and 8-bit grayscale PNG (via libpng) for rendered images.
// PGM is the golden on-disk format; PNG is served to browsers and optionally
// written by the CLI.

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <png.h>

#include "mtt/error.hpp"
#include "mtt/render.hpp"

namespace mtt {

enum class ImageFormat { Pgm, Png };

inline ImageFormat image_format_from_string(std::string_view s) {
  if (s == "pgm") return ImageFormat::Pgm;
  if (s == "png") return ImageFormat::Png;
  throw ConfigError("unknown image format '" + std::string(s) + "' (expected pgm or png)");
}

inline std::string_view extension(ImageFormat f) { return f == ImageFormat::Pgm ? ".pgm" : ".png"; }

inline std::string encode_pgm(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.shape.width) + " " +
                    std::to_string(img.shape.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image decode_pgm(std::string_view data) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (data[pos] == ' ' || data[pos] == '\n' || data[pos] == '\r' || data[pos] == '\t') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    if (pos >= data.size() || data[pos] < '0' || data[pos] > '9') throw FormatError("bad PGM header");
    long v = 0;
    while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') {
      v = v * 10 + (data[pos++] - '0');
      if (v > 1 << 20) throw FormatError("bad PGM header");
    }
    return static_cast<int>(v);
  };
  if (data.substr(0, 2) != "P5") throw FormatError("not a binary PGM (P5) file");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw FormatError("PGM maxval must be 255");
  if (pos >= data.size()) throw FormatError("truncated PGM");
  ++pos;  // single whitespace before raster
  Image img(ImageShape{1, h, w});
  if (data.size() - pos != img.pixels.size()) throw FormatError("PGM raster size mismatch");
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(pos), data.end(), img.pixels.begin());
  return img;
}

inline std::string encode_png(const Image& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.shape.width);
  pi.height = static_cast<png_uint_32>(img.shape.height);
  pi.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encoding failed: ") + pi.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encoding failed: ") + pi.message);
  }
  out.resize(size);
  return out;
}

inline Image decode_png(std::string_view data) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, data.data(), data.size())) {
    throw FormatError(std::string("not a readable PNG: ") + pi.message);
  }
  pi.format = PNG_FORMAT_GRAY;
  if (pi.width == 0 || pi.height == 0 || pi.width > 4096 || pi.height > 4096) {
    png_image_free(&pi);
    throw FormatError("bad PNG dimensions");
  }
  Image img(ImageShape{1, static_cast<int>(pi.height), static_cast<int>(pi.width)});
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("corrupt PNG: ") + pi.message);
  }
  return img;
}

inline std::string encode_image(const Image& img, ImageFormat format) {
  return format == ImageFormat::Pgm ? encode_pgm(img) : encode_png(img);
}

inline Image decode_image(std::string_view data) {
  if (data.substr(0, 2) == "P5") return decode_pgm(data);
  return decode_png(data);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

inline void write_image(const std::filesystem::path& path, const Image& img, ImageFormat format) {
  write_file(path, encode_image(img, format));
}

inline Image read_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char kTable[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                            (static_cast<std::uint8_t>(bytes[i + 1]) << 8) |
                            static_cast<std::uint8_t>(bytes[i + 2]);
    out += kTable[(n >> 18) & 63];
    out += kTable[(n >> 12) & 63];
    out += kTable[(n >> 6) & 63];
    out += kTable[n & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t n = static_cast<std::uint8_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) n |= static_cast<std::uint8_t>(bytes[i + 1]) << 8;
    out += kTable[(n >> 18) & 63];
    out += kTable[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kTable[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string png_data_uri(const Image& img) {
  return "data:image/png;base64," + base64_encode(encode_png(img));
}

}  // namespace mtt
