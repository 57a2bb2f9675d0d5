#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <unistd.h>

#include "mtt/image_io.hpp"

using namespace mtt;
namespace fs = std::filesystem;

namespace {

Image noise(int size, std::uint64_t seed) {
  Image img(ImageShape::square(size));
  std::mt19937_64 gen(seed);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen());
  return img;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mtt_image_io_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Pgm, HeaderAndRoundTrip) {
  const Image img = render("B12*12");
  const std::string data = encode_pgm(img);
  EXPECT_EQ(data.substr(0, 13), "P5\n40 40\n255\n");
  EXPECT_EQ(data.size(), 13u + 1600u);
  EXPECT_EQ(decode_pgm(data).pixels, img.pixels);
  const Image n = noise(80, 1);
  EXPECT_EQ(decode_pgm(encode_pgm(n)).pixels, n.pixels);
}

TEST(Pgm, RejectsMalformedFiles) {
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\n0"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n40 40\n255\n"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n40 40\n65535\n"), FormatError);
  EXPECT_THROW(decode_pgm(""), FormatError);
}

TEST(Png, RoundTripIsLossless) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Image n = noise(40, seed);
    const std::string png = encode_png(n);
    EXPECT_EQ(png.substr(1, 3), "PNG");
    const Image back = decode_png(png);
    EXPECT_EQ(back.shape.width, 40);
    EXPECT_EQ(back.pixels, n.pixels);
  }
  const Image r = render("BB11+AB2");
  EXPECT_EQ(decode_image(encode_image(r, ImageFormat::Png)).pixels, r.pixels);
  EXPECT_EQ(encode_png(r), encode_png(r));
}

TEST(Png, RejectsGarbage) {
  EXPECT_THROW(decode_png("not a png"), FormatError);
  std::string png = encode_png(render("A"));
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_png(png), FormatError);
}

TEST(Files, WriteCreatesParentsAndReadsBack) {
  const fs::path p = scratch("a/b/c.png");
  write_image(p, render("C"), ImageFormat::Png);
  EXPECT_EQ(read_image(p).pixels, render("C").pixels);
  EXPECT_THROW(read_file(scratch("missing.pgm")), FormatError);
  fs::remove_all(p.parent_path().parent_path().parent_path());
}

TEST(Formats, Names) {
  EXPECT_EQ(image_format_from_string("pgm"), ImageFormat::Pgm);
  EXPECT_EQ(image_format_from_string("png"), ImageFormat::Png);
  EXPECT_THROW(image_format_from_string("gif"), ConfigError);
  EXPECT_EQ(extension(ImageFormat::Png), ".png");
}

TEST(Base64, Rfc4648Vectors) {
  EXPECT_EQ(base64_encode(""), "");
  EXPECT_EQ(base64_encode("f"), "Zg==");
  EXPECT_EQ(base64_encode("fo"), "Zm8=");
  EXPECT_EQ(base64_encode("foo"), "Zm9v");
  EXPECT_EQ(base64_encode("foob"), "Zm9vYg==");
  EXPECT_EQ(base64_encode("fooba"), "Zm9vYmE=");
  EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
  EXPECT_EQ(png_data_uri(render("A")).rfind("data:image/png;base64,", 0), 0u);
}
