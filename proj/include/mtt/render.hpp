#pragma once

// Deterministic layout and rasterization of programs onto a square 8-bit
// grayscale canvas. Each '+'-separated command gets its own vertical strip,
// strips run left to right separated by a fixed gutter, and glyph (r, c) of a
// command sits at cell (r * cell, c * cell) inside its strip. When a program
// does not fit, the cell size steps down through a fixed ladder.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtt/error.hpp"
#include "mtt/shape_lang.hpp"

namespace mtt {

struct ImageShape {
  int channels = 1;
  int height = 40;
  int width = 40;

  static ImageShape square(int size) { return {1, size, size}; }

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }

  bool valid() const { return channels == 1 && height == width && (height == 40 || height == 80); }

  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

inline constexpr std::uint8_t kInk = 255;
inline constexpr std::uint8_t kBackground = 0;

struct Image {
  ImageShape shape;
  std::vector<std::uint8_t> pixels;  // row-major

  Image() = default;
  explicit Image(ImageShape s) : shape(s), pixels(s.pixel_count(), kBackground) {}

  std::uint8_t at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(shape.width) +
                  static_cast<std::size_t>(x)];
  }

  std::size_t ink_count() const {
    std::size_t n = 0;
    for (std::uint8_t p : pixels) n += (p != kBackground);
    return n;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Square binary bitmap, row-major, 1 = ink.
struct Glyph {
  int size = 0;
  std::vector<std::uint8_t> bits;

  bool ink(int y, int x) const {
    return bits[static_cast<std::size_t>(y * size + x)] != 0;
  }
  int ink_count() const {
    int n = 0;
    for (std::uint8_t b : bits) n += b;
    return n;
  }

  friend bool operator==(const Glyph&, const Glyph&) = default;
};

inline int hamming_distance(const Glyph& a, const Glyph& b) {
  if (a.size != b.size) return static_cast<int>(std::max(a.bits.size(), b.bits.size()));
  int d = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) d += (a.bits[i] != b.bits[i]);
  return d;
}

// Cell sizes tried in order until the layout fits.
inline constexpr std::array<int, 3> kCellLadder = {5, 4, 3};
inline constexpr int kRegionGutter = 2;

// Glyph bitmaps per shape. Two sets are kept: 4x4 glyphs drawn in 5 px cells
// and 3x3 glyphs drawn in the reduced 4 px and 3 px cells.
class GlyphAtlas {
 public:
  GlyphAtlas(std::array<Glyph, ShapeId::kCount> large, std::array<Glyph, ShapeId::kCount> small)
      : large_(std::move(large)), small_(std::move(small)) {}

  static const GlyphAtlas& default_atlas() {
    static const GlyphAtlas atlas = make_default();
    return atlas;
  }

  const Glyph& glyph(ShapeId shape, int cell) const {
    return cell >= 5 ? large_[shape.index()] : small_[shape.index()];
  }
  const std::array<Glyph, ShapeId::kCount>& large() const { return large_; }
  const std::array<Glyph, ShapeId::kCount>& small() const { return small_; }

 private:
  static Glyph from_rows(std::initializer_list<std::string_view> rows) {
    Glyph g;
    g.size = static_cast<int>(rows.size());
    for (std::string_view r : rows) {
      for (char c : r) g.bits.push_back(c == '#' ? 1 : 0);
    }
    return g;
  }

  static GlyphAtlas make_default() {
    // Order follows ShapeId: A B C AA AB AC BA BB BC CA CB CC.
    std::array<Glyph, ShapeId::kCount> large = {
        from_rows({"####", "####", "####", "####"}),  // A  filled square
        from_rows({"####", "#..#", "#..#", "####"}),  // B  frame
        from_rows({".##.", "####", "####", ".##."}),  // C  disc
        from_rows({"#..#", ".##.", ".##.", "#..#"}),  // AA cross
        from_rows({"####", "....", "####", "...."}),  // AB horizontal bars
        from_rows({"#.#.", "#.#.", "#.#.", "#.#."}),  // AC vertical bars
        from_rows({"#...", "##..", "###.", "####"}),  // BA wedge
        from_rows({"#.#.", ".#.#", "#.#.", ".#.#"}),  // BB checker
        from_rows({"....", ".##.", ".##.", "...."}),  // BC dot
        from_rows({"...#", "...#", "...#", "####"}),  // CA hook
        from_rows({"####", ".##.", ".##.", ".##."}),  // CB tee
        from_rows({".##.", "#..#", "#..#", ".##."}),  // CC ring
    };
    std::array<Glyph, ShapeId::kCount> small = {
        from_rows({"###", "###", "###"}),  // A
        from_rows({".#.", "###", ".#."}),  // B
        from_rows({"#.#", ".#.", "#.#"}),  // C
        from_rows({"...", ".##", "###"}),  // AA
        from_rows({"..#", "#..", "###"}),  // AB
        from_rows({"..#", "###", "..#"}),  // AC
        from_rows({".#.", "#.#", "#.#"}),  // BA
        from_rows({".##", "..#", ".##"}),  // BB
        from_rows({".##", ".#.", "##."}),  // BC
        from_rows({"#..", "#.#", ".##"}),  // CA
        from_rows({"#..", "##.", "##."}),  // CB
        from_rows({"...", ".#.", "..."}),  // CC
    };
    return GlyphAtlas(std::move(large), std::move(small));
  }

  std::array<Glyph, ShapeId::kCount> large_;
  std::array<Glyph, ShapeId::kCount> small_;
};

struct Box {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool intersects(const Box& o) const {
    return x < o.x + o.width && o.x < x + width && y < o.y + o.height && o.y < y + height;
  }
  bool contains(const Box& o) const {
    return o.x >= x && o.y >= y && o.x + o.width <= x + width && o.y + o.height <= y + height;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Placement {
  ShapeId shape;
  int row = 0;
  int col = 0;
  std::size_t region = 0;
  int x = 0;  // pixel origin of the cell
  int y = 0;

  friend bool operator==(const Placement&, const Placement&) = default;
};

struct SceneGraph {
  int cell = 0;
  std::vector<Placement> placements;
  std::vector<Box> region_boxes;
};

inline SceneGraph layout(const Program& p, const ImageShape& shape,
                         const GlyphAtlas& atlas = GlyphAtlas::default_atlas()) {
  (void)atlas;  // glyph size follows from the cell; the atlas does not affect geometry
  if (p.commands.empty()) throw CapacityError("program has no commands");
  for (const LayoutCommand& cmd : p.commands) {
    if (cmd.rows < 1 || cmd.cols < 1 || cmd.rows > kMaxCount || cmd.cols > kMaxCount) {
      throw CapacityError("count outside [1, " + std::to_string(kMaxCount) + "]");
    }
  }
  for (int cell : kCellLadder) {
    int width = 0;
    int height = 0;
    for (std::size_t i = 0; i < p.commands.size(); ++i) {
      if (i > 0) width += kRegionGutter;
      width += p.commands[i].cols * cell;
      height = std::max(height, p.commands[i].rows * cell);
    }
    if (width > shape.width || height > shape.height) continue;

    SceneGraph g;
    g.cell = cell;
    int x = 0;
    for (std::size_t i = 0; i < p.commands.size(); ++i) {
      const LayoutCommand& cmd = p.commands[i];
      g.region_boxes.push_back({x, 0, cmd.cols * cell, cmd.rows * cell});
      for (int r = 0; r < cmd.rows; ++r) {
        for (int c = 0; c < cmd.cols; ++c) {
          g.placements.push_back({cmd.shape, r, c, i, x + c * cell, r * cell});
        }
      }
      x += cmd.cols * cell + kRegionGutter;
    }
    return g;
  }
  throw CapacityError("program does not fit a " + std::to_string(shape.width) + "x" +
                      std::to_string(shape.height) + " canvas at the smallest cell size");
}

inline Image rasterize(const SceneGraph& g, const GlyphAtlas& atlas, const ImageShape& shape) {
  Image img(shape);
  for (const Placement& pl : g.placements) {
    const Glyph& glyph = atlas.glyph(pl.shape, g.cell);
    for (int dy = 0; dy < glyph.size; ++dy) {
      for (int dx = 0; dx < glyph.size; ++dx) {
        if (!glyph.ink(dy, dx)) continue;
        const std::size_t idx = static_cast<std::size_t>(pl.y + dy) * static_cast<std::size_t>(shape.width) +
                                static_cast<std::size_t>(pl.x + dx);
        img.pixels[idx] = kInk;
      }
    }
  }
  return img;
}

struct RenderConfig {
  ImageShape shape;
  const GlyphAtlas* atlas = &GlyphAtlas::default_atlas();
};

inline Image render(const Program& p, const RenderConfig& config = {}) {
  return rasterize(layout(p, config.shape, *config.atlas), *config.atlas, config.shape);
}

inline Image render(std::string_view program, const RenderConfig& config = {}) {
  return render(parse_program(program), config);
}

// 64-bit FNV-1a over the raw pixel buffer. Stable across platforms.
inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                           std::uint64_t hash = kFnvOffsetBasis) {
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= kFnvPrime;
  }
  return hash;
}

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t hash = kFnvOffsetBasis) {
  for (char c : text) {
    hash ^= static_cast<std::uint8_t>(c);
    hash *= kFnvPrime;
  }
  return hash;
}

inline std::uint64_t image_digest(const Image& img) { return fnv1a(img.pixels); }

inline std::string digest_hex(std::uint64_t digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[digest & 0xF];
    digest >>= 4;
  }
  return out;
}

}  // namespace mtt
