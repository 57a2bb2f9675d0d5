#pragma once

// The referential game: message validation, trials, phases, scoring and
// cross-pair aggregation, plus the built-in agents used to validate the
// harness itself.
//
// A speaker only ever sees the target image; a listener only ever sees the
// message and the four candidate images. AgentEndpoints enforces this in the
// types: there is no path from a Question's program to either callback.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtt/error.hpp"
#include "mtt/generator.hpp"
#include "mtt/render.hpp"
#include "mtt/shape_lang.hpp"

namespace mtt {

// ---------------------------------------------------------------------------
// messages

struct MessageViolation {
  enum class Rule { Empty, TooLong, Space, ForbiddenCharacter };
  Rule rule;
  std::string description;
};

// nullopt when `text` is a legal message: 1..8 characters from the alphabet.
inline std::optional<MessageViolation> validate_message(std::string_view text) {
  using R = MessageViolation::Rule;
  if (text.empty()) return MessageViolation{R::Empty, "message is empty"};
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == ' ') return MessageViolation{R::Space, "forbidden character (space) at position " + std::to_string(i)};
    if (!in_alphabet(c)) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "forbidden character (0x%02x) at position %zu", static_cast<unsigned char>(c), i);
      return MessageViolation{R::ForbiddenCharacter, buf};
    }
  }
  if (text.size() > kMaxProgramLength) {
    return MessageViolation{R::TooLong, "length " + std::to_string(text.size()) + " > " +
                                            std::to_string(kMaxProgramLength)};
  }
  return std::nullopt;
}

// A validated message.
class Message {
 public:
  static std::optional<Message> make(std::string_view text) {
    if (validate_message(text)) return std::nullopt;
    return Message(std::string(text));
  }
  const std::string& text() const { return text_; }

 private:
  explicit Message(std::string text) : text_(std::move(text)) {}
  std::string text_;
};

// ---------------------------------------------------------------------------
// records

struct TrialRecord {
  std::string question_id;
  PhaseKind phase = PhaseKind::Practice;
  std::string message;
  int chosen = -1;  // -1 when the listener never chose
  int correct_index = 0;
  bool correct = false;
  OODTags tags;
  std::string note;  // violation or failure cause; empty on a clean trial

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

// Identifies the trial to an agent; carries no content.
struct TrialContext {
  std::string trial_id;
  PhaseKind phase = PhaseKind::Practice;
};

using SpeakerFn = std::function<std::string(const TrialContext& ctx, const Image& target)>;
using ListenerFn = std::function<int(const TrialContext& ctx, const Message& message,
                                     std::span<const Image, kCandidates> candidates)>;
using FeedbackFn = std::function<void(const TrialRecord& record)>;

struct AgentEndpoints {
  SpeakerFn speaker;
  ListenerFn listener;
  FeedbackFn speaker_feedback;   // optional
  FeedbackFn listener_feedback;  // optional
};

// ---------------------------------------------------------------------------
// trials and phases

inline TrialRecord run_trial(const AgentEndpoints& agents, const Question& q, bool feedback) {
  const TrialContext ctx{q.id, q.phase};
  TrialRecord rec;
  rec.question_id = q.id;
  rec.phase = q.phase;
  rec.correct_index = q.correct_index;
  rec.tags = q.tags;

  std::string text;
  try {
    text = agents.speaker(ctx, q.target_image());
  } catch (const std::exception& e) {
    rec.note = std::string("speaker failure: ") + e.what();
  }
  if (rec.note.empty()) {
    rec.message = text;
    if (auto violation = validate_message(text)) {
      rec.note = "invalid message: " + violation->description;
    } else {
      try {
        const int choice = agents.listener(ctx, *Message::make(text), std::span<const Image, kCandidates>(q.candidates));
        if (choice < 0 || choice >= static_cast<int>(kCandidates)) {
          rec.note = "listener failure: choice " + std::to_string(choice) + " out of range";
        } else {
          rec.chosen = choice;
          rec.correct = choice == q.correct_index;
        }
      } catch (const std::exception& e) {
        rec.note = std::string("listener failure: ") + e.what();
      }
    }
  }
  if (feedback) {
    // Feedback delivery failures do not change the recorded outcome.
    for (const FeedbackFn* sink : {&agents.speaker_feedback, &agents.listener_feedback}) {
      if (!*sink) continue;
      try {
        (*sink)(rec);
      } catch (const std::exception&) {
      }
    }
  }
  return rec;
}

// One sequential pass. Feedback is delivered iff `kind` is Practice.
inline std::vector<TrialRecord> run_phase(const AgentEndpoints& agents, std::span<const Question> questions,
                                          PhaseKind kind) {
  if (questions.empty()) throw std::invalid_argument("run_phase: no questions");
  if (kind == PhaseKind::Preconditioning) {
    throw std::invalid_argument("run_phase: preconditioning is not a scored phase");
  }
  std::vector<TrialRecord> out;
  out.reserve(questions.size());
  for (const Question& q : questions) {
    TrialRecord r = run_trial(agents, q, kind == PhaseKind::Practice);
    r.phase = kind;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// scoring

struct Bucket {
  int correct = 0;
  int total = 0;

  std::optional<double> accuracy() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
  }
  void add(bool ok) {
    ++total;
    correct += ok ? 1 : 0;
  }
  friend bool operator==(const Bucket&, const Bucket&) = default;
};

struct AccuracyBreakdown {
  Bucket overall;
  Bucket in_distribution;
  Bucket ood_symbol_only;
  Bucket ood_number_only;
  Bucket ood_both;

  const Bucket& bucket(OodCategory c) const {
    switch (c) {
      case OodCategory::InDistribution: return in_distribution;
      case OodCategory::SymbolOnly: return ood_symbol_only;
      case OodCategory::NumberOnly: return ood_number_only;
      case OodCategory::Both: return ood_both;
    }
    return overall;
  }
  friend bool operator==(const AccuracyBreakdown&, const AccuracyBreakdown&) = default;
};

inline AccuracyBreakdown score(std::span<const TrialRecord> records) {
  if (records.empty()) throw std::invalid_argument("score: no records");
  AccuracyBreakdown b;
  for (const TrialRecord& r : records) {
    b.overall.add(r.correct);
    switch (category_of(r.tags)) {
      case OodCategory::InDistribution: b.in_distribution.add(r.correct); break;
      case OodCategory::SymbolOnly: b.ood_symbol_only.add(r.correct); break;
      case OodCategory::NumberOnly: b.ood_number_only.add(r.correct); break;
      case OodCategory::Both: b.ood_both.add(r.correct); break;
    }
  }
  return b;
}

struct Aggregate {
  std::size_t n = 0;
  double mean = 0;
  double sd = 0;  // sample (n - 1) standard deviation
};

inline Aggregate aggregate(std::span<const double> scores) {
  if (scores.size() < 2) throw std::invalid_argument("aggregate: need at least two results");
  double sum = 0;
  for (double s : scores) sum += s;
  const double mean = sum / static_cast<double>(scores.size());
  double ss = 0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  return {scores.size(), mean, std::sqrt(ss / static_cast<double>(scores.size() - 1))};
}

namespace detail {

// Two decimals with one trailing zero trimmed: 9.10 -> 9.1, 0.81 -> 0.81, 9.00 -> 9.0.
inline std::string short_decimal(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (s.size() > 1 && s.back() == '0') s.pop_back();
  return s;
}

}  // namespace detail

// "<label>: μ = 9.1, σ = 0.81 (10 pairs, 10 trials)"
inline std::string format_aggregate(std::string_view label, const Aggregate& a, int points) {
  return std::string(label) + ": \xCE\xBC = " + detail::short_decimal(a.mean) + ", \xCF\x83 = " +
         detail::short_decimal(a.sd) + " (" + std::to_string(a.n) + " pairs, " + std::to_string(points) + " trials)";
}

// ---------------------------------------------------------------------------
// built-in agents

// Reads ground truth: maps target digests to canonical programs. Harness
// validation only; not a compliant benchmark entry.
class OracleSpeaker {
 public:
  explicit OracleSpeaker(std::span<const Question> questions) {
    for (const Question& q : questions) table_[image_digest(q.target_image())] = canonicalize(q.target);
  }

  // Drops trailing '+' segments until the program fits in 8 characters.
  static std::string lossy_fit(std::string program) {
    while (program.size() > kMaxProgramLength) {
      const auto plus = program.rfind('+');
      if (plus == std::string::npos) return program.substr(0, kMaxProgramLength);
      program.resize(plus);
    }
    return program;
  }

  std::string operator()(const TrialContext&, const Image& target) const {
    const auto it = table_.find(image_digest(target));
    if (it == table_.end()) throw AgentError("oracle speaker: unknown image");
    return lossy_fit(it->second);
  }

 private:
  std::unordered_map<std::uint64_t, std::string> table_;
};

// Parses and renders the message, then picks the candidate whose digest
// matches; lowest index when none does.
class OracleListener {
 public:
  explicit OracleListener(RenderConfig render = {}) : render_(render) {}

  int operator()(const TrialContext&, const Message& m, std::span<const Image, kCandidates> candidates) const {
    std::uint64_t want = 0;
    try {
      RenderConfig rc = render_;
      rc.shape = candidates[0].shape;
      want = image_digest(render(m.text(), rc));
    } catch (const Error&) {
      return 0;
    }
    for (std::size_t i = 0; i < kCandidates; ++i) {
      if (image_digest(candidates[i]) == want) return static_cast<int>(i);
    }
    return 0;
  }

 private:
  RenderConfig render_;
};

class RandomListener {
 public:
  explicit RandomListener(std::uint64_t seed) : rng_(std::make_shared<Rng>(seed)) {}
  int operator()(const TrialContext&, const Message&, std::span<const Image, kCandidates>) const {
    return static_cast<int>(rng_->below(kCandidates));
  }

 private:
  std::shared_ptr<Rng> rng_;
};

// Emits a random legal message of 1..8 characters.
class RandomSpeaker {
 public:
  explicit RandomSpeaker(std::uint64_t seed) : rng_(std::make_shared<Rng>(seed)) {}
  std::string operator()(const TrialContext&, const Image&) const {
    const std::size_t len = 1 + rng_->below(kMaxProgramLength);
    std::string out;
    for (std::size_t i = 0; i < len; ++i) out.push_back(kAlphabet[rng_->below(kAlphabet.size())]);
    return out;
  }

 private:
  std::shared_ptr<Rng> rng_;
};

}  // namespace mtt
