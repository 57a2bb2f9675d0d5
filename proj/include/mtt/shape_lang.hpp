#pragma once

// Tokenizer, parser, canonicalizer and base-3 codec for the 8-character
// shape language:
//
//   program := command ('+' command)*
//   command := SHAPE cc '*' cc   grid, rows x cols
//            | SHAPE '*' cc      row, 1 x cols
//            | SHAPE cc          column, rows x 1
//            | SHAPE             single glyph
//   SHAPE   := one or two letters over {A,B,C}
//   cc      := base-3 digits over {0,1,2}

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtt/error.hpp"

namespace mtt {

// The eight characters of the channel alphabet.
inline constexpr std::string_view kAlphabet = "ABC012+*";

// Per-axis count cap; "22" in base 3.
inline constexpr int kMaxCount = 8;

// Character cap for generated programs and messages.
inline constexpr std::size_t kMaxProgramLength = 8;

inline constexpr bool is_shape_letter(char c) { return c == 'A' || c == 'B' || c == 'C'; }
inline constexpr bool is_trit(char c) { return c == '0' || c == '1' || c == '2'; }
inline constexpr bool in_alphabet(char c) {
  return is_shape_letter(c) || is_trit(c) || c == '+' || c == '*';
}

// One of the 12 shape identifiers: A, B, C and the nine two-letter codes.
class ShapeId {
 public:
  static constexpr std::size_t kCount = 12;

  constexpr ShapeId() = default;

  static constexpr ShapeId from_index(std::size_t index) {
    return ShapeId(static_cast<std::uint8_t>(index % kCount));
  }

  static constexpr std::optional<ShapeId> from_code(std::string_view code) {
    for (std::size_t i = 0; i < kCount; ++i) {
      if (kCodes[i] == code) return ShapeId(static_cast<std::uint8_t>(i));
    }
    return std::nullopt;
  }

  static constexpr std::array<ShapeId, kCount> all() {
    std::array<ShapeId, kCount> out{};
    for (std::size_t i = 0; i < kCount; ++i) out[i] = from_index(i);
    return out;
  }

  constexpr std::size_t index() const { return index_; }
  constexpr std::string_view code() const { return kCodes[index_]; }
  constexpr bool is_single_letter() const { return code().size() == 1; }

  friend constexpr bool operator==(ShapeId, ShapeId) = default;
  friend constexpr auto operator<=>(ShapeId, ShapeId) = default;

 private:
  static constexpr std::array<std::string_view, kCount> kCodes = {
      "A", "B", "C", "AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC"};

  constexpr explicit ShapeId(std::uint8_t index) : index_(index) {}

  std::uint8_t index_ = 0;
};

enum class TokenKind { Shape, Number, Star, Plus };

struct Token {
  TokenKind kind;
  std::string text;
  std::size_t position = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

enum class LayoutForm { Grid, Row, Column, Single };

inline constexpr std::string_view to_string(LayoutForm form) {
  switch (form) {
    case LayoutForm::Grid: return "grid";
    case LayoutForm::Row: return "row";
    case LayoutForm::Column: return "column";
    case LayoutForm::Single: return "single";
  }
  return "?";
}

struct LayoutCommand {
  ShapeId shape;
  int rows = 1;
  int cols = 1;
  LayoutForm form = LayoutForm::Single;

  int glyphs() const { return rows * cols; }

  // Row with one column, column with one row, or grid with a unit axis:
  // such commands draw the same picture as a shorter form.
  bool is_degenerate() const {
    switch (form) {
      case LayoutForm::Grid: return rows == 1 || cols == 1;
      case LayoutForm::Row: return cols == 1;
      case LayoutForm::Column: return rows == 1;
      case LayoutForm::Single: return false;
    }
    return false;
  }

  friend bool operator==(const LayoutCommand&, const LayoutCommand&) = default;

  static LayoutCommand single(ShapeId s) { return {s, 1, 1, LayoutForm::Single}; }
  static LayoutCommand row(ShapeId s, int cols) { return {s, 1, cols, LayoutForm::Row}; }
  static LayoutCommand column(ShapeId s, int rows) { return {s, rows, 1, LayoutForm::Column}; }
  static LayoutCommand grid(ShapeId s, int rows, int cols) {
    return {s, rows, cols, LayoutForm::Grid};
  }
};

struct Program {
  std::vector<LayoutCommand> commands;
  std::string source;

  // Semantic equality: two spellings of the same layout compare equal.
  friend bool operator==(const Program& a, const Program& b) { return a.commands == b.commands; }
};

// ---------------------------------------------------------------------------
// base-3 codec

inline std::uint64_t parse_trinary(std::string_view digits) {
  if (digits.empty()) throw ParseError("empty number", 0);
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    const char c = digits[i];
    if (!is_trit(c)) throw ParseError(std::string("invalid base-3 digit '") + c + "'", i);
    if (value > (UINT64_MAX - 2) / 3) throw ParseError("number too large", i);
    value = value * 3 + static_cast<std::uint64_t>(c - '0');
  }
  return value;
}

inline std::string encode_trinary(std::uint64_t n) {
  if (n == 0) return "0";
  std::string out;
  while (n > 0) {
    out.push_back(static_cast<char>('0' + n % 3));
    n /= 3;
  }
  return {out.rbegin(), out.rend()};
}

// ---------------------------------------------------------------------------
// lexer

inline std::vector<Token> tokenize(std::string_view program) {
  if (program.empty()) throw ParseError("empty program", 0);
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < program.size()) {
    const char c = program[i];
    const std::size_t start = i;
    if (is_shape_letter(c)) {
      while (i < program.size() && is_shape_letter(program[i])) ++i;
      if (i - start > 2) {
        throw ParseError("shape code longer than two letters", start);
      }
      tokens.push_back({TokenKind::Shape, std::string(program.substr(start, i - start)), start});
    } else if (is_trit(c)) {
      while (i < program.size() && is_trit(program[i])) ++i;
      tokens.push_back({TokenKind::Number, std::string(program.substr(start, i - start)), start});
    } else if (c == '*') {
      tokens.push_back({TokenKind::Star, "*", start});
      ++i;
    } else if (c == '+') {
      tokens.push_back({TokenKind::Plus, "+", start});
      ++i;
    } else if (c == ' ') {
      throw ParseError("spaces are not allowed", start);
    } else {
      throw ParseError("character outside the alphabet", start);
    }
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// parser

namespace detail {

inline int decode_count(const Token& tok) {
  std::uint64_t value = 0;
  try {
    value = parse_trinary(tok.text);
  } catch (const ParseError&) {
    throw ParseError("count out of range", tok.position);
  }
  if (value == 0) throw ParseError("count must be at least 1", tok.position);
  if (value > static_cast<std::uint64_t>(kMaxCount)) {
    throw ParseError("count exceeds " + std::to_string(kMaxCount), tok.position);
  }
  return static_cast<int>(value);
}

inline LayoutCommand parse_segment(const std::vector<Token>& seg, std::size_t seg_start) {
  if (seg.empty()) throw ParseError("empty command", seg_start);
  if (seg[0].kind != TokenKind::Shape) {
    throw ParseError("command must start with a shape", seg[0].position);
  }
  const ShapeId shape = *ShapeId::from_code(seg[0].text);
  auto kinds_are = [&](std::initializer_list<TokenKind> kinds) {
    if (seg.size() != kinds.size()) return false;
    std::size_t i = 0;
    for (TokenKind k : kinds) {
      if (seg[i++].kind != k) return false;
    }
    return true;
  };
  using K = TokenKind;
  if (kinds_are({K::Shape, K::Number, K::Star, K::Number})) {
    return LayoutCommand::grid(shape, decode_count(seg[1]), decode_count(seg[3]));
  }
  if (kinds_are({K::Shape, K::Star, K::Number})) {
    return LayoutCommand::row(shape, decode_count(seg[2]));
  }
  if (kinds_are({K::Shape, K::Number})) {
    return LayoutCommand::column(shape, decode_count(seg[1]));
  }
  if (kinds_are({K::Shape})) return LayoutCommand::single(shape);
  throw ParseError("command does not match any layout form", seg[0].position);
}

}  // namespace detail

inline Program parse_program(std::string_view program) {
  const std::vector<Token> tokens = tokenize(program);
  Program out;
  out.source = std::string(program);
  std::vector<Token> segment;
  std::size_t seg_start = 0;
  for (const Token& tok : tokens) {
    if (tok.kind == TokenKind::Plus) {
      out.commands.push_back(detail::parse_segment(segment, seg_start));
      segment.clear();
      seg_start = tok.position + 1;
    } else {
      segment.push_back(tok);
    }
  }
  out.commands.push_back(detail::parse_segment(segment, seg_start));
  return out;
}

// Shortest spelling of a command list; parse_program(canonicalize(p)) == p.
inline std::string canonicalize(const Program& p) {
  std::string out;
  for (std::size_t i = 0; i < p.commands.size(); ++i) {
    const LayoutCommand& cmd = p.commands[i];
    if (i > 0) out.push_back('+');
    out += cmd.shape.code();
    switch (cmd.form) {
      case LayoutForm::Single:
        break;
      case LayoutForm::Row:
        out += '*' + encode_trinary(static_cast<std::uint64_t>(cmd.cols));
        break;
      case LayoutForm::Column:
        out += encode_trinary(static_cast<std::uint64_t>(cmd.rows));
        break;
      case LayoutForm::Grid:
        out += encode_trinary(static_cast<std::uint64_t>(cmd.rows)) + '*' +
               encode_trinary(static_cast<std::uint64_t>(cmd.cols));
        break;
    }
  }
  return out;
}

inline int total_glyphs(const Program& p) {
  int total = 0;
  for (const LayoutCommand& cmd : p.commands) total += cmd.glyphs();
  return total;
}

// Largest per-axis count anywhere in the program.
inline int max_axis_count(const Program& p) {
  int m = 0;
  for (const LayoutCommand& cmd : p.commands) m = std::max({m, cmd.rows, cmd.cols});
  return m;
}

// Shape covering the most glyphs; ties go to the earliest command.
inline ShapeId dominant_shape(const Program& p) {
  std::array<int, ShapeId::kCount> counts{};
  for (const LayoutCommand& cmd : p.commands) counts[cmd.shape.index()] += cmd.glyphs();
  ShapeId best = p.commands.front().shape;
  for (const LayoutCommand& cmd : p.commands) {
    if (counts[cmd.shape.index()] > counts[best.index()]) best = cmd.shape;
  }
  return best;
}

}  // namespace mtt
