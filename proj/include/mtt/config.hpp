#pragma once

// Run configuration: a line-oriented `key = value` text format.
//
//   # comment
//   seed = 7
//   image_size = 40                    # 40 or 80
//   curriculum = true
//   agent_timeout_s = 30
//   markov.<from>.<to> = 0.35          # from/to in start, shape, number, star, plus, end
//   markov.shape_weight.single = 2     # all one-letter shapes
//   markov.shape_weight.double = 1     # all two-letter shapes
//   markov.shape_weight.AB = 1         # a single shape
//   markov.digit_weights = 1,1,1       # digits 0,1,2
//   markov.number_lengths = 0.5,0.5    # 1-digit, 2-digit, ...
//   <phase>.shapes = A,B,C             # phase in preconditioning, practice, test
//   <phase>.max_count = 4
//   <phase>.max_total = 64
//   <phase>.questions = 100
//
// Unknown keys, duplicate keys and malformed values are errors.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtt/error.hpp"
#include "mtt/generator.hpp"
#include "mtt/image_io.hpp"

namespace mtt {

struct RunConfig {
  std::uint64_t seed = 0;
  int image_size = 40;
  bool curriculum = true;
  double agent_timeout_s = 30.0;
  MarkovModel model = MarkovModel::defaults();
  PhaseVocabulary preconditioning = default_vocabularies().preconditioning;
  PhaseVocabulary practice = default_vocabularies().practice;
  PhaseVocabulary test = default_vocabularies().test;
  int preconditioning_questions = 100;
  int practice_questions = 100;
  int test_questions = 100;

  // "model-100/100" (the default) or "human-10/10".
  static RunConfig preset(std::string_view name) {
    RunConfig c;
    if (name == "model-100/100" || name == "model") return c;
    if (name == "human-10/10" || name == "human") {
      c.practice_questions = 10;
      c.test_questions = 10;
      c.preconditioning_questions = 20;
      return c;
    }
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected human-10/10 or model-100/100)");
  }

  const PhaseVocabulary& vocabulary(PhaseKind k) const {
    switch (k) {
      case PhaseKind::Preconditioning: return preconditioning;
      case PhaseKind::Practice: return practice;
      case PhaseKind::Test: return test;
    }
    return test;
  }

  // OOD tags are relative to the previous phase; preconditioning is its own
  // reference.
  const PhaseVocabulary& reference(PhaseKind k) const {
    switch (k) {
      case PhaseKind::Preconditioning: return preconditioning;
      case PhaseKind::Practice: return preconditioning;
      case PhaseKind::Test: return practice;
    }
    return practice;
  }

  int questions(PhaseKind k) const {
    switch (k) {
      case PhaseKind::Preconditioning: return preconditioning_questions;
      case PhaseKind::Practice: return practice_questions;
      case PhaseKind::Test: return test_questions;
    }
    return 0;
  }

  PhaseSpec phase_spec(PhaseKind k) const {
    PhaseSpec s{k, vocabulary(k), reference(k), questions(k), seed, curriculum, ImageShape::square(image_size)};
    s.validate();
    return s;
  }

  void validate() const {
    model.validate();
    for (PhaseKind k : {PhaseKind::Preconditioning, PhaseKind::Practice, PhaseKind::Test}) phase_spec(k);
    if (!(agent_timeout_s > 0)) throw ConfigError("agent_timeout_s must be positive");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double to_double(std::string_view v, const std::string& where) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a number, got '" + std::string(v) + "'");
  }
}

inline std::int64_t to_int(std::string_view v, const std::string& where) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(where + ": expected an integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool to_bool(std::string_view v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::vector<double> to_doubles(std::string_view v, const std::string& where) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t end = v.find(',', start);
    if (end == std::string_view::npos) end = v.size();
    out.push_back(to_double(trim(v.substr(start, end - start)), where));
    start = end + 1;
  }
  return out;
}

inline std::optional<ChainState> chain_state(std::string_view s) {
  if (s == "start") return ChainState::Start;
  if (s == "shape") return ChainState::Shape;
  if (s == "number") return ChainState::Number;
  if (s == "star") return ChainState::Star;
  if (s == "plus") return ChainState::Plus;
  if (s == "end") return ChainState::End;
  return std::nullopt;
}

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text, RunConfig base = {}) {
  RunConfig c = std::move(base);
  std::map<std::string, int> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    const std::string where = "line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (seen.count(key)) throw ConfigError(where + ": duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")");
    seen[key] = static_cast<int>(line_no);

    auto phase_field = [&](std::string_view prefix, PhaseVocabulary& vocab, int& questions) {
      const std::string_view field = std::string_view(key).substr(prefix.size());
      if (field == "shapes") {
        auto shapes = parse_shape_list(value);
        std::sort(shapes.begin(), shapes.end());
        shapes.erase(std::unique(shapes.begin(), shapes.end()), shapes.end());
        vocab.shapes = std::move(shapes);
      } else if (field == "max_count") {
        vocab.max_count = static_cast<int>(detail::to_int(value, where));
      } else if (field == "max_total") {
        vocab.max_total = static_cast<int>(detail::to_int(value, where));
      } else if (field == "questions") {
        questions = static_cast<int>(detail::to_int(value, where));
      } else {
        throw ConfigError(where + ": unknown key '" + key + "'");
      }
    };

    if (key == "seed") {
      const auto v = detail::to_int(value, where);
      if (v < 0) throw ConfigError(where + ": seed must be nonnegative");
      c.seed = static_cast<std::uint64_t>(v);
    } else if (key == "image_size") {
      c.image_size = static_cast<int>(detail::to_int(value, where));
    } else if (key == "curriculum") {
      c.curriculum = detail::to_bool(value, where);
    } else if (key == "agent_timeout_s") {
      c.agent_timeout_s = detail::to_double(value, where);
    } else if (key.rfind("preconditioning.", 0) == 0) {
      phase_field("preconditioning.", c.preconditioning, c.preconditioning_questions);
    } else if (key.rfind("practice.", 0) == 0) {
      phase_field("practice.", c.practice, c.practice_questions);
    } else if (key.rfind("test.", 0) == 0) {
      phase_field("test.", c.test, c.test_questions);
    } else if (key == "markov.digit_weights") {
      const auto ws = detail::to_doubles(value, where);
      if (ws.size() != 3) throw ConfigError(where + ": expected three digit weights");
      std::copy(ws.begin(), ws.end(), c.model.digit_weights.begin());
    } else if (key == "markov.number_lengths") {
      c.model.number_length_weights = detail::to_doubles(value, where);
    } else if (key.rfind("markov.shape_weight.", 0) == 0) {
      const std::string_view which = std::string_view(key).substr(std::string_view("markov.shape_weight.").size());
      const double w = detail::to_double(value, where);
      if (which == "single" || which == "double") {
        for (ShapeId s : ShapeId::all()) {
          if (s.is_single_letter() == (which == "single")) c.model.shape_weights[s.index()] = w;
        }
      } else if (auto s = ShapeId::from_code(which)) {
        c.model.shape_weights[s->index()] = w;
      } else {
        throw ConfigError(where + ": unknown shape in '" + key + "'");
      }
    } else if (key.rfind("markov.", 0) == 0) {
      const std::string_view rest = std::string_view(key).substr(7);
      const auto dot = rest.find('.');
      const auto from = dot == std::string_view::npos ? std::nullopt : detail::chain_state(rest.substr(0, dot));
      const auto to = dot == std::string_view::npos ? std::nullopt : detail::chain_state(rest.substr(dot + 1));
      if (!from || !to) throw ConfigError(where + ": unknown key '" + key + "'");
      c.model.at(*from, *to) = detail::to_double(value, where);
    } else {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, std::move(base));
}

}  // namespace mtt
