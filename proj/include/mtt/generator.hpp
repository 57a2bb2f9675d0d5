#pragma once

// Markov sampling of programs, phase vocabularies, out-of-distribution
// tagging, four-way question construction and curriculum-ordered phase sets.
//
// All randomness flows through Rng, which draws directly from mt19937_64 so
// that generated datasets are bit-identical across standard libraries
// (std::*_distribution output is implementation-defined).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "mtt/error.hpp"
#include "mtt/render.hpp"
#include "mtt/shape_lang.hpp"

namespace mtt {

// ---------------------------------------------------------------------------
// randomness

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed of the child generator for item `index` of stream `stream`:
// splitmix64(splitmix64(master ^ stream) + index).
inline constexpr std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(master ^ stream) + index);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Index drawn proportionally to nonnegative weights.
  std::size_t weighted(std::span<const double> weights) {
    double total = 0;
    for (double w : weights) total += w;
    double r = unit() * total;
    std::size_t last = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0) continue;
      last = i;
      if (r < weights[i]) return i;
      r -= weights[i];
    }
    return last;
  }

  template <typename T, std::size_t N>
  void shuffle(std::span<T, N> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Markov model

enum class ChainState : std::size_t { Start, Shape, Number, Star, Plus, End };
inline constexpr std::size_t kChainStates = 6;

struct MarkovModel {
  using Row = std::array<double, kChainStates>;
  std::array<Row, kChainStates> transition{};
  std::array<double, ShapeId::kCount> shape_weights{};
  std::array<double, 3> digit_weights{};
  std::vector<double> number_length_weights;  // [k] = weight of a (k+1)-digit number

  double& at(ChainState from, ChainState to) {
    return transition[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)];
  }
  double at(ChainState from, ChainState to) const {
    return transition[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)];
  }

  static MarkovModel defaults() {
    using S = ChainState;
    MarkovModel m;
    m.at(S::Start, S::Shape) = 1.0;
    m.at(S::Shape, S::Number) = 0.35;
    m.at(S::Shape, S::Star) = 0.25;
    m.at(S::Shape, S::Plus) = 0.15;
    m.at(S::Shape, S::End) = 0.25;
    m.at(S::Number, S::Star) = 0.30;
    m.at(S::Number, S::Plus) = 0.20;
    m.at(S::Number, S::End) = 0.50;
    m.at(S::Star, S::Number) = 1.0;
    m.at(S::Plus, S::Shape) = 1.0;
    for (ShapeId s : ShapeId::all()) m.shape_weights[s.index()] = s.is_single_letter() ? 2.0 : 1.0;
    m.digit_weights = {1.0, 1.0, 1.0};
    m.number_length_weights = {0.5, 0.5};
    return m;
  }

  static constexpr bool permitted(ChainState from, ChainState to) {
    using S = ChainState;
    switch (from) {
      case S::Start: return to == S::Shape;
      case S::Shape: return to == S::Number || to == S::Star || to == S::Plus || to == S::End;
      case S::Number: return to == S::Star || to == S::Plus || to == S::End;
      case S::Star: return to == S::Number;
      case S::Plus: return to == S::Shape;
      case S::End: return false;
    }
    return false;
  }

  void validate() const {
    for (std::size_t f = 0; f < kChainStates; ++f) {
      const auto from = static_cast<ChainState>(f);
      double sum = 0;
      for (std::size_t t = 0; t < kChainStates; ++t) {
        const double w = transition[f][t];
        if (w < 0 || !std::isfinite(w)) throw ConfigError("negative or non-finite transition weight");
        if (w > 0 && !permitted(from, static_cast<ChainState>(t))) {
          throw ConfigError("transition not permitted by the grammar");
        }
        sum += w;
      }
      if (from == ChainState::End) continue;
      if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("transition weights must sum to 1");
    }
    auto positive_total = [](std::span<const double> ws) {
      double t = 0;
      for (double w : ws) {
        if (w < 0 || !std::isfinite(w)) return -1.0;
        t += w;
      }
      return t;
    };
    if (positive_total(shape_weights) <= 0) throw ConfigError("shape weights must be nonnegative with a positive sum");
    if (positive_total(digit_weights) <= 0) throw ConfigError("digit weights must be nonnegative with a positive sum");
    if (number_length_weights.empty() || positive_total(number_length_weights) <= 0) {
      throw ConfigError("number length weights must be nonnegative with a positive sum");
    }
  }
};

// ---------------------------------------------------------------------------
// vocabularies, phases, tags

enum class PhaseKind { Preconditioning, Practice, Test };

inline std::string_view to_string(PhaseKind k) {
  switch (k) {
    case PhaseKind::Preconditioning: return "preconditioning";
    case PhaseKind::Practice: return "practice";
    case PhaseKind::Test: return "test";
  }
  return "?";
}

inline PhaseKind phase_from_string(std::string_view s) {
  if (s == "preconditioning") return PhaseKind::Preconditioning;
  if (s == "practice") return PhaseKind::Practice;
  if (s == "test") return PhaseKind::Test;
  throw FormatError("unknown phase '" + std::string(s) + "'");
}

struct PhaseVocabulary {
  std::vector<ShapeId> shapes;  // sorted, unique
  int max_count = kMaxCount;
  int max_total = kMaxCount * kMaxCount;

  static PhaseVocabulary make(std::vector<ShapeId> shapes, int max_count, int max_total = kMaxCount * kMaxCount) {
    std::sort(shapes.begin(), shapes.end());
    shapes.erase(std::unique(shapes.begin(), shapes.end()), shapes.end());
    PhaseVocabulary v{std::move(shapes), max_count, max_total};
    v.validate();
    return v;
  }

  bool contains(ShapeId s) const { return std::binary_search(shapes.begin(), shapes.end(), s); }

  bool admits(const Program& p) const {
    for (const LayoutCommand& cmd : p.commands) {
      if (!contains(cmd.shape) || cmd.rows > max_count || cmd.cols > max_count) return false;
    }
    return total_glyphs(p) <= max_total;
  }

  void validate() const {
    if (shapes.empty()) throw ConfigError("vocabulary has no shapes");
    if (max_count < 1 || max_count > kMaxCount) throw ConfigError("max_count must be in [1, 8]");
    if (max_total < 1) throw ConfigError("max_total must be positive");
    if (!std::is_sorted(shapes.begin(), shapes.end()) ||
        std::adjacent_find(shapes.begin(), shapes.end()) != shapes.end()) {
      throw ConfigError("vocabulary shapes must be sorted and unique");
    }
  }

  std::string describe() const {
    std::string out;
    for (ShapeId s : shapes) {
      if (!out.empty()) out += ',';
      out += s.code();
    }
    return out + ";max_count=" + std::to_string(max_count) + ";max_total=" + std::to_string(max_total);
  }

  friend bool operator==(const PhaseVocabulary&, const PhaseVocabulary&) = default;
};

inline std::vector<ShapeId> parse_shape_list(std::string_view csv) {
  std::vector<ShapeId> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t end = csv.find(',', start);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view item = csv.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      auto s = ShapeId::from_code(item);
      if (!s) throw ConfigError("unknown shape '" + std::string(item) + "'");
      out.push_back(*s);
    }
    start = end + 1;
  }
  return out;
}

struct DefaultVocabularies {
  PhaseVocabulary preconditioning;
  PhaseVocabulary practice;
  PhaseVocabulary test;
};

inline DefaultVocabularies default_vocabularies() {
  auto shapes = [](std::string_view csv) { return parse_shape_list(csv); };
  return {
      PhaseVocabulary::make(shapes("A,B,C,AA,BB"), 4),
      PhaseVocabulary::make(shapes("A,B,C,AA,BB,AB,BA,CC"), 6),
      PhaseVocabulary::make(shapes("A,B,C,AA,BB,AB,BA,CC,AC,CA,BC,CB"), 8),
  };
}

struct OODTags {
  bool novel_symbol = false;
  bool novel_number = false;
  friend bool operator==(const OODTags&, const OODTags&) = default;
};

// Disjoint buckets used for scoring.
enum class OodCategory { InDistribution, SymbolOnly, NumberOnly, Both };

inline OodCategory category_of(OODTags t) {
  if (t.novel_symbol && t.novel_number) return OodCategory::Both;
  if (t.novel_symbol) return OodCategory::SymbolOnly;
  if (t.novel_number) return OodCategory::NumberOnly;
  return OodCategory::InDistribution;
}

inline std::string_view to_string(OodCategory c) {
  switch (c) {
    case OodCategory::InDistribution: return "in_distribution";
    case OodCategory::SymbolOnly: return "symbol_only";
    case OodCategory::NumberOnly: return "number_only";
    case OodCategory::Both: return "both";
  }
  return "?";
}

inline OODTags tag_ood(const Program& p, const PhaseVocabulary& reference) {
  OODTags t;
  for (const LayoutCommand& cmd : p.commands) {
    if (!reference.contains(cmd.shape)) t.novel_symbol = true;
    if (cmd.rows > reference.max_count || cmd.cols > reference.max_count) t.novel_number = true;
  }
  return t;
}

// ---------------------------------------------------------------------------
// program sampling

inline constexpr int kSampleBudget = 10000;
inline constexpr std::size_t kMaxTokens = 8;

// One walk of the chain. Returns the canonical program, or nullopt when the
// walk is not a valid non-degenerate program of at most 8 tokens and
// 8 characters.
inline std::optional<Program> walk_chain(Rng& rng, const MarkovModel& model) {
  using S = ChainState;
  struct Pending {
    ShapeId shape;
    std::optional<int> first;
    bool star = false;
    std::optional<int> second;
  };
  Program out;
  std::optional<Pending> cur;
  std::size_t tokens = 0;
  bool ok = true;

  auto draw_count = [&]() -> std::optional<int> {
    const std::size_t len = rng.weighted(model.number_length_weights) + 1;
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < len; ++i) v = v * 3 + rng.weighted(model.digit_weights);
    if (v == 0 || v > static_cast<std::uint64_t>(kMaxCount)) return std::nullopt;
    return static_cast<int>(v);
  };
  auto finish = [&] {
    const Pending& p = *cur;
    LayoutCommand cmd;
    if (p.star && p.first) cmd = LayoutCommand::grid(p.shape, *p.first, *p.second);
    else if (p.star) cmd = LayoutCommand::row(p.shape, *p.second);
    else if (p.first) cmd = LayoutCommand::column(p.shape, *p.first);
    else cmd = LayoutCommand::single(p.shape);
    if (cmd.is_degenerate()) ok = false;
    out.commands.push_back(cmd);
    cur.reset();
  };

  S state = S::Start;
  while (ok) {
    const auto next = static_cast<S>(rng.weighted(model.transition[static_cast<std::size_t>(state)]));
    if (next == S::End) break;
    if (++tokens > kMaxTokens) return std::nullopt;
    switch (next) {
      case S::Shape:
        cur = Pending{ShapeId::from_index(rng.weighted(model.shape_weights)), {}, false, {}};
        break;
      case S::Number: {
        const auto n = draw_count();
        if (!n) return std::nullopt;
        if (cur->star) cur->second = n;
        else cur->first = n;
        break;
      }
      case S::Star:
        if (cur->star) return std::nullopt;  // second '*' in one command
        cur->star = true;
        break;
      case S::Plus:
        finish();
        break;
      default:
        return std::nullopt;
    }
    state = next;
  }
  if (!ok || !cur) return std::nullopt;
  finish();
  if (!ok) return std::nullopt;
  out.source = canonicalize(out);
  if (out.source.size() > kMaxProgramLength) return std::nullopt;
  return out;
}

using ProgramFilter = std::function<bool(const Program&)>;

inline std::optional<Program> try_sample_program(Rng& rng, const PhaseVocabulary& vocab, const MarkovModel& model,
                                                 const ProgramFilter& filter = {}, int budget = kSampleBudget) {
  for (int attempt = 0; attempt < budget; ++attempt) {
    auto p = walk_chain(rng, model);
    if (!p || !vocab.admits(*p)) continue;
    if (filter && !filter(*p)) continue;
    return p;
  }
  return std::nullopt;
}

inline Program sample_program(Rng& rng, const PhaseVocabulary& vocab, const MarkovModel& model,
                              const ProgramFilter& filter = {}) {
  vocab.validate();
  model.validate();
  auto p = try_sample_program(rng, vocab, model, filter, kSampleBudget);
  if (!p) {
    throw ConfigError("no admissible program after " + std::to_string(kSampleBudget) +
                      " attempts (vocabulary " + vocab.describe() + ")");
  }
  return *p;
}

// Every canonical, non-degenerate program of at most 8 characters that the
// vocabulary admits, in a fixed order.
inline std::vector<Program> enumerate_programs(const PhaseVocabulary& vocab) {
  std::vector<LayoutCommand> commands;
  for (ShapeId s : vocab.shapes) {
    commands.push_back(LayoutCommand::single(s));
    for (int n = 2; n <= vocab.max_count; ++n) {
      commands.push_back(LayoutCommand::row(s, n));
      commands.push_back(LayoutCommand::column(s, n));
    }
    for (int r = 2; r <= vocab.max_count; ++r) {
      for (int c = 2; c <= vocab.max_count; ++c) commands.push_back(LayoutCommand::grid(s, r, c));
    }
  }
  std::vector<std::size_t> lengths;
  for (const LayoutCommand& c : commands) lengths.push_back(canonicalize(Program{{c}, {}}).size());

  std::vector<Program> out;
  Program cur;
  std::function<void(std::size_t, int)> extend = [&](std::size_t len, int glyphs) {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      const std::size_t next_len = len + (cur.commands.empty() ? 0 : 1) + lengths[i];
      const int next_glyphs = glyphs + commands[i].glyphs();
      if (next_len > kMaxProgramLength || next_glyphs > vocab.max_total) continue;
      cur.commands.push_back(commands[i]);
      cur.source = canonicalize(cur);
      out.push_back(cur);
      extend(next_len, next_glyphs);
      cur.commands.pop_back();
    }
  };
  extend(0, 0);
  return out;
}

// Lazily enumerated fallback pool for distractors. Safe to share across
// threads.
class ProgramPool {
 public:
  explicit ProgramPool(PhaseVocabulary vocab) : vocab_(std::move(vocab)) {}

  const std::vector<Program>& programs() const {
    std::call_once(once_, [this] { programs_ = enumerate_programs(vocab_); });
    return programs_;
  }
  const PhaseVocabulary& vocabulary() const { return vocab_; }

 private:
  PhaseVocabulary vocab_;
  mutable std::once_flag once_;
  mutable std::vector<Program> programs_;
};

// ---------------------------------------------------------------------------
// questions

inline constexpr std::size_t kCandidates = 4;

struct Question {
  std::string id;
  PhaseKind phase = PhaseKind::Practice;
  Program target;
  std::array<Program, kCandidates> candidate_programs;
  std::array<Image, kCandidates> candidates;
  int correct_index = 0;
  OODTags tags;

  const Image& target_image() const { return candidates[static_cast<std::size_t>(correct_index)]; }
};

struct QuestionContext {
  const PhaseVocabulary& vocab;
  const PhaseVocabulary& reference;
  const MarkovModel& model;
  const ProgramPool* pool = nullptr;
  RenderConfig render;
};

inline Question make_question(Rng& rng, const Program& target, const QuestionContext& ctx, std::string id = {},
                              PhaseKind phase = PhaseKind::Practice) {
  struct Entry {
    Program program;
    Image image;
  };
  std::vector<Entry> chosen;
  std::unordered_set<std::uint64_t> seen;
  {
    Image img = render(target, ctx.render);
    seen.insert(image_digest(img));
    chosen.push_back({target, std::move(img)});
  }

  auto accept = [&](const Program& p) {
    Image img = render(p, ctx.render);
    if (!seen.insert(image_digest(img)).second) return false;
    chosen.push_back({p, std::move(img)});
    return true;
  };
  auto from_sampler = [&](const PhaseVocabulary& vocab, const ProgramFilter& filter, int draws) {
    for (int i = 0; i < draws; ++i) {
      auto p = try_sample_program(rng, vocab, ctx.model, filter, 1);
      if (p && accept(*p)) return true;
    }
    return false;
  };
  auto from_pool = [&](const ProgramFilter& filter) {
    if (!ctx.pool) return false;
    const auto& all = ctx.pool->programs();
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (!filter || filter(all[i])) idx.push_back(i);
    }
    rng.shuffle(std::span(idx));
    for (std::size_t i : idx) {
      if (accept(all[i])) return true;
    }
    return false;
  };

  // Hard negatives first: same dominant shape, then same glyph total.
  const ShapeId dom = dominant_shape(target);
  const int total = total_glyphs(target);
  const ProgramFilter same_shape = [dom](const Program& p) { return dominant_shape(p) == dom; };
  const ProgramFilter same_total = [total](const Program& p) { return total_glyphs(p) == total; };
  const PhaseVocabulary dom_vocab{{dom}, ctx.vocab.max_count, ctx.vocab.max_total};

  if (!from_sampler(dom_vocab, {}, 256)) from_pool(same_shape);
  if (!from_sampler(ctx.vocab, same_total, 512)) from_pool(same_total);
  while (chosen.size() < kCandidates) {
    if (!from_sampler(ctx.vocab, {}, 256) && !from_pool({})) {
      throw GenerationError("not enough distinct distractors for " + target.source + " in vocabulary " +
                            ctx.vocab.describe());
    }
  }

  std::array<std::size_t, 3> order = {1, 2, 3};
  rng.shuffle(std::span(order));
  Question q;
  q.id = std::move(id);
  q.phase = phase;
  q.target = target;
  q.correct_index = static_cast<int>(rng.below(kCandidates));
  q.tags = tag_ood(target, ctx.reference);
  std::size_t next = 0;
  for (std::size_t slot = 0; slot < kCandidates; ++slot) {
    Entry& e = slot == static_cast<std::size_t>(q.correct_index) ? chosen[0] : chosen[order[next++]];
    q.candidate_programs[slot] = e.program;
    q.candidates[slot] = e.image;
  }
  return q;
}

// ---------------------------------------------------------------------------
// phase sets

struct PhaseSpec {
  PhaseKind kind = PhaseKind::Practice;
  PhaseVocabulary vocabulary;
  PhaseVocabulary reference;
  int n_questions = 100;
  std::uint64_t seed = 0;
  bool curriculum = true;
  ImageShape image;

  bool feedback() const { return kind == PhaseKind::Practice; }

  void validate() const {
    vocabulary.validate();
    reference.validate();
    if (n_questions <= 0) throw ConfigError("n_questions must be positive");
    if (!image.valid()) throw ConfigError("image size must be 40 or 80");
  }

  std::string describe(const MarkovModel& model) const {
    std::ostringstream os;
    os.precision(17);
    os << "kind=" << to_string(kind) << "|vocab=" << vocabulary.describe() << "|ref=" << reference.describe()
       << "|n=" << n_questions << "|seed=" << seed << "|curriculum=" << curriculum << "|size=" << image.width
       << "|markov=";
    for (const auto& row : model.transition) {
      for (double w : row) os << w << ',';
    }
    for (double w : model.shape_weights) os << w << ',';
    for (double w : model.digit_weights) os << w << ',';
    for (double w : model.number_length_weights) os << w << ',';
    return os.str();
  }
};

inline std::uint64_t phase_stream(PhaseKind k) { return fnv1a(to_string(k)); }

// What one item of a phase set is required to contain.
struct ItemPlan {
  OodCategory category = OodCategory::InDistribution;
  std::optional<ShapeId> novel_shape;
  std::optional<int> novel_count;
  std::vector<ShapeId> allowed_novel_shapes;
  std::vector<int> allowed_novel_counts;
};

// Items cycle through the four OOD categories. The j-th symbol-only item
// introduces novel shape j (mod the number of novel shapes), the j-th
// number-only item novel count j; items novel in both only reuse shapes and
// counts that some single-novelty item already introduces.
inline std::vector<ItemPlan> plan_items(const PhaseSpec& spec) {
  std::vector<ShapeId> novel_shapes;
  for (ShapeId s : spec.vocabulary.shapes) {
    if (!spec.reference.contains(s)) novel_shapes.push_back(s);
  }
  std::vector<int> novel_counts;
  for (int c = spec.reference.max_count + 1; c <= spec.vocabulary.max_count; ++c) novel_counts.push_back(c);

  static constexpr std::array<OodCategory, 4> kCycle = {OodCategory::InDistribution, OodCategory::SymbolOnly,
                                                        OodCategory::NumberOnly, OodCategory::Both};
  const bool has_s = !novel_shapes.empty();
  const bool has_c = !novel_counts.empty();
  std::vector<ItemPlan> plans(static_cast<std::size_t>(spec.n_questions));
  for (std::size_t i = 0; i < plans.size(); ++i) {
    OodCategory c = kCycle[i % 4];
    if (c == OodCategory::SymbolOnly && !has_s) c = OodCategory::InDistribution;
    if (c == OodCategory::NumberOnly && !has_c) c = OodCategory::InDistribution;
    if (c == OodCategory::Both) {
      if (!has_s && !has_c) c = OodCategory::InDistribution;
      else if (!has_s) c = OodCategory::NumberOnly;
      else if (!has_c) c = OodCategory::SymbolOnly;
    }
    plans[i].category = c;
  }
  std::size_t n_sym = 0, n_num = 0;
  for (ItemPlan& p : plans) {
    if (p.category == OodCategory::SymbolOnly) p.novel_shape = novel_shapes[n_sym++ % novel_shapes.size()];
    if (p.category == OodCategory::NumberOnly) p.novel_count = novel_counts[n_num++ % novel_counts.size()];
  }
  const std::size_t cover_s = std::min(novel_shapes.size(), n_sym);
  const std::size_t cover_c = std::min(novel_counts.size(), n_num);
  std::size_t n_both = 0;
  for (ItemPlan& p : plans) {
    if (p.category != OodCategory::Both) continue;
    if (cover_s == 0 || cover_c == 0) {
      // Too few items to introduce the novelty first; fall back to free choice.
      p.allowed_novel_shapes = novel_shapes;
      p.allowed_novel_counts = novel_counts;
    } else {
      p.allowed_novel_shapes.assign(novel_shapes.begin(), novel_shapes.begin() + static_cast<std::ptrdiff_t>(cover_s));
      p.allowed_novel_counts.assign(novel_counts.begin(), novel_counts.begin() + static_cast<std::ptrdiff_t>(cover_c));
    }
    p.novel_shape = p.allowed_novel_shapes[n_both % p.allowed_novel_shapes.size()];
    p.novel_count = p.allowed_novel_counts[n_both % p.allowed_novel_counts.size()];
    ++n_both;
  }
  return plans;
}

inline ProgramFilter plan_filter(const ItemPlan& plan, const PhaseVocabulary& reference) {
  return [plan, reference](const Program& p) {
    if (category_of(tag_ood(p, reference)) != plan.category) return false;
    bool has_shape = !plan.novel_shape;
    bool has_count = !plan.novel_count;
    for (const LayoutCommand& cmd : p.commands) {
      if (plan.novel_shape && cmd.shape == *plan.novel_shape) has_shape = true;
      if (plan.novel_count && (cmd.rows == *plan.novel_count || cmd.cols == *plan.novel_count)) has_count = true;
      if (plan.category == OodCategory::Both) {
        if (!reference.contains(cmd.shape) &&
            std::find(plan.allowed_novel_shapes.begin(), plan.allowed_novel_shapes.end(), cmd.shape) ==
                plan.allowed_novel_shapes.end()) {
          return false;
        }
        for (int n : {cmd.rows, cmd.cols}) {
          if (n > reference.max_count && std::find(plan.allowed_novel_counts.begin(),
                                                   plan.allowed_novel_counts.end(), n) == plan.allowed_novel_counts.end()) {
            return false;
          }
        }
      }
    }
    return has_shape && has_count;
  };
}

inline std::string question_id(PhaseKind k, std::size_t index) {
  std::string n = std::to_string(index);
  if (n.size() < 4) n.insert(0, 4 - n.size(), '0');
  return std::string(to_string(k)) + "-" + n;
}

inline Question build_item(const PhaseSpec& spec, const MarkovModel& model, const ProgramPool& pool,
                           const ItemPlan& plan, std::size_t index) {
  Rng rng(mix_seed(spec.seed, phase_stream(spec.kind), index));
  auto target = try_sample_program(rng, spec.vocabulary, model, plan_filter(plan, spec.reference));
  if (!target) {
    throw ConfigError("cannot sample a " + std::string(to_string(plan.category)) + " program for " +
                      question_id(spec.kind, index) + " (vocabulary " + spec.vocabulary.describe() + ")");
  }
  const QuestionContext ctx{spec.vocabulary, spec.reference, model, &pool, RenderConfig{spec.image}};
  return make_question(rng, *target, ctx, question_id(spec.kind, index), spec.kind);
}

// Curriculum order: in-distribution items, then symbol-only, then
// number-only (smallest novel count first), then both. Stable on item index.
inline void curriculum_sort(std::vector<Question>& qs, const std::vector<ItemPlan>& plans) {
  std::vector<std::size_t> order(qs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto key = [&](std::size_t i) {
    const int cat = static_cast<int>(category_of(qs[i].tags));
    const int count = cat == static_cast<int>(OodCategory::NumberOnly) ? plans[i].novel_count.value_or(0) : 0;
    return std::tuple(cat, count, i);
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<Question> sorted;
  sorted.reserve(qs.size());
  for (std::size_t i : order) sorted.push_back(std::move(qs[i]));
  qs = std::move(sorted);
}

// Items are generated independently from per-item seeds, so the result does
// not depend on `threads`.
inline std::vector<Question> build_phase_set(const PhaseSpec& spec, const MarkovModel& model = MarkovModel::defaults(),
                                             unsigned threads = 0) {
  spec.validate();
  model.validate();
  const std::vector<ItemPlan> plans = plan_items(spec);
  const ProgramPool pool(spec.vocabulary);
  std::vector<Question> out(plans.size());

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(plans.size()));
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> workers;
    for (unsigned t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < plans.size(); i += threads) out[i] = build_item(spec, model, pool, plans[i], i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (spec.curriculum) curriculum_sort(out, plans);
  return out;
}

struct CategoryCounts {
  int in_distribution = 0;
  int symbol_only = 0;
  int number_only = 0;
  int both = 0;

  void add(OODTags t) {
    switch (category_of(t)) {
      case OodCategory::InDistribution: ++in_distribution; break;
      case OodCategory::SymbolOnly: ++symbol_only; break;
      case OodCategory::NumberOnly: ++number_only; break;
      case OodCategory::Both: ++both; break;
    }
  }
  friend bool operator==(const CategoryCounts&, const CategoryCounts&) = default;
};

inline CategoryCounts count_categories(const std::vector<Question>& qs) {
  CategoryCounts c;
  for (const Question& q : qs) c.add(q.tags);
  return c;
}

}  // namespace mtt
