#pragma once

// Paired human sessions: pairing, phase progression, role-scoped trial views,
// message relay, scratchpads and results. Transport-free; see session_http.hpp
// for the HTTP binding.
//
// State machine: Lobby -> Learning -> Practice -> Test -> Done. Joining both
// roles enters Learning. Learning -> Practice and (completed) Practice -> Test
// need both roles ready plus an advance call. The last test selection enters
// Done.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mtt/config.hpp"
#include "mtt/dataset_io.hpp"
#include "mtt/error.hpp"
#include "mtt/game.hpp"
#include "mtt/generator.hpp"
#include "mtt/image_io.hpp"

namespace mtt {

enum class SessionState { Lobby, Learning, Practice, Test, Done };
enum class Role { Speaker, Listener };

inline std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::Lobby: return "lobby";
    case SessionState::Learning: return "learning";
    case SessionState::Practice: return "practice";
    case SessionState::Test: return "test";
    case SessionState::Done: return "done";
  }
  return "?";
}

inline std::optional<SessionState> session_state_from_string(std::string_view s) {
  for (SessionState st : {SessionState::Lobby, SessionState::Learning, SessionState::Practice, SessionState::Test,
                          SessionState::Done}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

inline std::string_view to_string(Role r) { return r == Role::Speaker ? "speaker" : "listener"; }

inline std::optional<Role> role_from_string(std::string_view s) {
  if (s == "speaker") return Role::Speaker;
  if (s == "listener") return Role::Listener;
  return std::nullopt;
}

class SessionError : public Error {
 public:
  enum class Kind { NotFound, BadRequest, Unauthorized, Forbidden, Conflict };
  SessionError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Fixed edge cases over the preconditioning shapes: extremes of each layout
// form, every shape alone, and multi-command spacing.
inline const std::vector<std::string>& gallery_programs() {
  static const std::vector<std::string> programs = {
      "A",      "B",       "C",       "AA",      "BB",      "A*2",      "A2",       "A2*2",
      "B11",    "C*11",    "AA11*11", "BB2*11",  "C11*2",   "A+B",      "A+B+C",    "AA+BB",
      "B2+C*2", "A11+B",   "C*2+AA2", "BB2*2+A", "A+B+C+AA", "B*11+C11", "AA2*2+BB", "C2*2+C*2",
  };
  return programs;
}

struct SessionOptions {
  int gallery_size = 20;
};

struct Feedback {
  std::string trial_id;
  bool correct = false;
  int chosen = -1;
  int correct_index = 0;
};

// What one role may see of the current trial. Speaker views never carry
// candidates; listener views never carry the target.
struct TrialView {
  Role role = Role::Speaker;
  SessionState state = SessionState::Practice;
  std::string trial_id;
  int trial_index = 0;
  int trial_count = 0;
  std::string status;  // awaiting_message | awaiting_selection | phase_complete
  std::optional<Image> target;
  std::optional<std::array<Image, kCandidates>> candidates;
  std::optional<std::string> message;
  std::optional<Feedback> feedback;
};

inline nlohmann::json to_json(const Feedback& f, Role role) {
  nlohmann::json j{{"trial_id", f.trial_id}, {"correct", f.correct}};
  if (role == Role::Listener) {
    j["chosen"] = f.chosen;
    j["correct_index"] = f.correct_index;
  }
  return j;
}

inline nlohmann::json to_json(const TrialView& v) {
  nlohmann::json j{{"role", to_string(v.role)},
                   {"state", to_string(v.state)},
                   {"trial_id", v.trial_id},
                   {"trial_index", v.trial_index},
                   {"trial_count", v.trial_count},
                   {"status", v.status}};
  if (v.target) j["target"] = png_data_uri(*v.target);
  if (v.candidates) {
    nlohmann::json c = nlohmann::json::array();
    for (const Image& img : *v.candidates) c.push_back(png_data_uri(img));
    j["candidates"] = c;
  }
  if (v.message) j["message"] = *v.message;
  if (v.feedback) j["feedback"] = to_json(*v.feedback, v.role);
  return j;
}

inline nlohmann::json to_json(const Bucket& b) {
  nlohmann::json j{{"correct", b.correct}, {"total", b.total}};
  if (auto a = b.accuracy()) j["accuracy"] = *a;
  else j["accuracy"] = nullptr;
  return j;
}

inline nlohmann::json to_json(const AccuracyBreakdown& b) {
  return {{"overall", to_json(b.overall)},
          {"in_distribution", to_json(b.in_distribution)},
          {"ood_symbol", to_json(b.ood_symbol_only)},
          {"ood_number", to_json(b.ood_number_only)},
          {"ood_both", to_json(b.ood_both)}};
}

struct PostMessageResult {
  bool accepted = false;
  std::optional<MessageViolation> violation;
};

// Free exchange during Learning, gated by the same message rules as trials.
struct SandboxMessage {
  Role from = Role::Speaker;
  std::string text;
};

struct SessionResults {
  AccuracyBreakdown practice;
  AccuracyBreakdown test;
  std::vector<TrialRecord> records;  // practice then test
  ResultsTable table;
};

namespace detail {

inline std::string random_hex(std::size_t bytes) {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard lock(mu);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes; ++i) {
    const unsigned v = rd() & 0xFFu;
    out.push_back(kHex[v >> 4]);
    out.push_back(kHex[v & 0xF]);
  }
  return out;
}

inline std::uint64_t random_seed() {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard lock(mu);
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace detail

class Session {
 public:
  Session(std::string id, std::string preset, RunConfig config, SessionOptions options)
      : id_(std::move(id)),
        preset_(std::move(preset)),
        config_(std::move(config)),
        options_(options),
        sandbox_rng_(mix_seed(config_.seed, fnv1a("sandbox"), 0)) {
    practice_ = build_phase_set(config_.phase_spec(PhaseKind::Practice), config_.model);
    test_ = build_phase_set(config_.phase_spec(PhaseKind::Test), config_.model);
  }

  const std::string& id() const { return id_; }
  const std::string& preset() const { return preset_; }
  std::uint64_t seed() const { return config_.seed; }
  const RunConfig& config() const { return config_; }

  SessionState state() const {
    std::shared_lock lock(mu_);
    return state_;
  }

  std::size_t question_count(PhaseKind k) const { return (k == PhaseKind::Test ? test_ : practice_).size(); }

  std::string join(Role role) {
    std::unique_lock lock(mu_);
    if (state_ != SessionState::Lobby || (tokens_[0] && tokens_[1])) {
      throw SessionError(SessionError::Kind::Conflict, "session is full");
    }
    auto& slot = tokens_[index(role)];
    if (slot) throw SessionError(SessionError::Kind::Conflict, std::string("role ") + std::string(to_string(role)) + " is taken");
    slot = detail::random_hex(16);
    if (tokens_[0] && tokens_[1]) state_ = SessionState::Learning;
    return *slot;
  }

  // The role bound to `token`, or Unauthorized.
  Role authenticate(std::string_view token) const {
    std::shared_lock lock(mu_);
    return role_of(token);
  }

  nlohmann::json describe(std::string_view token) const {
    std::shared_lock lock(mu_);
    const Role role = role_of(token);
    nlohmann::json j{{"id", id_},
                     {"preset", preset_},
                     {"state", to_string(state_)},
                     {"role", to_string(role)},
                     {"ready", {{"speaker", ready_[0]}, {"listener", ready_[1]}}},
                     {"practice_questions", practice_.size()},
                     {"test_questions", test_.size()}};
    if (state_ == SessionState::Practice || state_ == SessionState::Test) {
      j["trial_index"] = trial_;
      j["phase_complete"] = phase_complete();
    }
    return j;
  }

  // A fresh preconditioning image. The program stays server-side.
  Image sandbox_sample(std::string_view token) {
    std::unique_lock lock(mu_);
    role_of(token);
    require(SessionState::Learning, "sandbox");
    const Program p = sample_program(sandbox_rng_, config_.preconditioning, config_.model);
    return render(p, RenderConfig{ImageShape::square(config_.image_size)});
  }

  PostMessageResult post_sandbox_message(std::string_view token, std::string_view text) {
    std::unique_lock lock(mu_);
    const Role r = role_of(token);
    require(SessionState::Learning, "the sandbox");
    if (auto v = validate_message(text)) return {false, v};
    sandbox_log_.push_back({r, std::string(text)});
    return {true, std::nullopt};
  }

  std::vector<SandboxMessage> sandbox_messages(std::string_view token) const {
    std::shared_lock lock(mu_);
    role_of(token);
    require(SessionState::Learning, "the sandbox");
    return sandbox_log_;
  }

  // Test hook: the vocabulary every sandbox sample is drawn from.
  const PhaseVocabulary& sandbox_vocabulary() const { return config_.preconditioning; }

  std::vector<Image> gallery(std::string_view token) const {
    std::shared_lock lock(mu_);
    role_of(token);
    require(SessionState::Learning, "gallery");
    return gallery_images(options_.gallery_size, config_.image_size);
  }

  static std::vector<Image> gallery_images(int size, int image_size = 40) {
    const auto& programs = gallery_programs();
    const std::size_t n = std::min(programs.size(), static_cast<std::size_t>(std::max(size, 0)));
    std::vector<Image> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(render(programs[i], RenderConfig{ImageShape::square(image_size)}));
    return out;
  }

  void set_ready(std::string_view token, bool ready = true) {
    std::unique_lock lock(mu_);
    const Role r = role_of(token);
    if (state_ == SessionState::Lobby || state_ == SessionState::Done) {
      throw SessionError(SessionError::Kind::Conflict, "nothing to get ready for in state " + std::string(to_string(state_)));
    }
    ready_[index(r)] = ready;
  }

  // Learning -> Practice, or completed Practice -> Test. Naming the state
  // already reached as `to` is a no-op, so both participants may call it.
  SessionState advance(std::string_view token, std::optional<SessionState> to = std::nullopt) {
    std::unique_lock lock(mu_);
    role_of(token);
    if (to && *to == state_ && (state_ == SessionState::Practice || state_ == SessionState::Test)) return state_;
    if (state_ == SessionState::Done) throw SessionError(SessionError::Kind::Conflict, "session is done");
    SessionState next;
    if (state_ == SessionState::Learning) {
      next = SessionState::Practice;
    } else if (state_ == SessionState::Practice && phase_complete()) {
      next = SessionState::Test;
    } else {
      throw SessionError(SessionError::Kind::Conflict, "cannot advance from " + std::string(to_string(state_)) +
                                                           (state_ == SessionState::Practice ? " before it is complete" : ""));
    }
    if (to && *to != next) {
      throw SessionError(SessionError::Kind::Conflict, "cannot advance from " + std::string(to_string(state_)) + " to " +
                                                           std::string(to_string(*to)));
    }
    if (!ready_[0] || !ready_[1]) throw SessionError(SessionError::Kind::Conflict, "not all participants are ready");
    state_ = next;
    ready_ = {false, false};
    trial_ = 0;
    pending_message_.reset();
    last_feedback_.reset();
    return state_;
  }

  TrialView trial_view(std::string_view token) const {
    std::shared_lock lock(mu_);
    const Role role = role_of(token);
    if (state_ != SessionState::Practice && state_ != SessionState::Test) {
      throw SessionError(SessionError::Kind::Conflict, "no trials in state " + std::string(to_string(state_)));
    }
    const auto& qs = current();
    TrialView v;
    v.role = role;
    v.state = state_;
    v.trial_count = static_cast<int>(qs.size());
    v.trial_index = static_cast<int>(trial_);
    if (state_ == SessionState::Practice && last_feedback_) v.feedback = last_feedback_;
    if (phase_complete()) {
      v.status = "phase_complete";
      return v;
    }
    const Question& q = qs[trial_];
    v.trial_id = q.id;
    v.status = pending_message_ ? "awaiting_selection" : "awaiting_message";
    if (role == Role::Speaker) {
      v.target = q.target_image();
      v.message = pending_message_;
    } else if (pending_message_) {
      v.message = pending_message_;
      v.candidates = q.candidates;
    }
    return v;
  }

  PostMessageResult post_message(std::string_view token, std::string_view text) {
    std::unique_lock lock(mu_);
    require_role(token, Role::Speaker, "post a message");
    require_open_trial();
    if (pending_message_) throw SessionError(SessionError::Kind::Conflict, "a message was already sent for this trial");
    if (auto v = validate_message(text)) return {false, v};
    pending_message_ = std::string(text);
    return {true, std::nullopt};
  }

  TrialRecord post_selection(std::string_view token, int choice) {
    std::unique_lock lock(mu_);
    require_role(token, Role::Listener, "select a candidate");
    require_open_trial();
    if (!pending_message_) throw SessionError(SessionError::Kind::Conflict, "no message has been sent for this trial");
    if (choice < 0 || choice >= static_cast<int>(kCandidates)) {
      throw SessionError(SessionError::Kind::BadRequest, "choice must be in 0..3");
    }
    const Question& q = current()[trial_];
    TrialRecord r;
    r.question_id = q.id;
    r.phase = q.phase;
    r.message = *pending_message_;
    r.chosen = choice;
    r.correct_index = q.correct_index;
    r.correct = choice == q.correct_index;
    r.tags = q.tags;
    (state_ == SessionState::Practice ? practice_log_ : test_log_).push_back(r);
    if (state_ == SessionState::Practice) {
      last_feedback_ = Feedback{r.question_id, r.correct, r.chosen, r.correct_index};
      ++feedback_events_;
    }
    pending_message_.reset();
    ++trial_;
    if (state_ == SessionState::Test && phase_complete()) state_ = SessionState::Done;
    return r;
  }

  std::string scratchpad(std::string_view token) const {
    std::shared_lock lock(mu_);
    return scratchpads_[index(role_of(token))];
  }

  void set_scratchpad(std::string_view token, std::string text) {
    std::unique_lock lock(mu_);
    scratchpads_[index(role_of(token))] = std::move(text);
  }

  // Scored through the same path as `mtt score`.
  SessionResults results(std::string_view token) const {
    std::shared_lock lock(mu_);
    role_of(token);
    if (state_ != SessionState::Done) throw SessionError(SessionError::Kind::Conflict, "results are available once the test is complete");
    return results_unlocked();
  }

  // Researcher export: records, results table and both scratchpads.
  void export_to(const std::filesystem::path& dir) const {
    std::shared_lock lock(mu_);
    if (state_ != SessionState::Done) throw SessionError(SessionError::Kind::Conflict, "session is not done");
    const SessionResults r = results_unlocked();
    write_records(dir / "records.jsonl", r.records);
    write_results(dir / "results.csv", r.table);
    write_file(dir / "scratchpad_speaker.txt", scratchpads_[0]);
    write_file(dir / "scratchpad_listener.txt", scratchpads_[1]);
  }

  std::size_t feedback_events() const {
    std::shared_lock lock(mu_);
    return feedback_events_;
  }

 private:
  static std::size_t index(Role r) { return r == Role::Speaker ? 0 : 1; }

  Role role_of(std::string_view token) const {
    for (Role r : {Role::Speaker, Role::Listener}) {
      const auto& t = tokens_[index(r)];
      if (t && !token.empty() && *t == token) return r;
    }
    throw SessionError(SessionError::Kind::Unauthorized, "missing or unknown role token");
  }

  void require(SessionState s, std::string_view what) const {
    if (state_ != s) {
      throw SessionError(SessionError::Kind::Conflict, std::string(what) + " is only available in state " +
                                                           std::string(to_string(s)));
    }
  }

  void require_role(std::string_view token, Role want, std::string_view action) const {
    if (role_of(token) != want) {
      throw SessionError(SessionError::Kind::Forbidden, "only the " + std::string(to_string(want)) + " may " +
                                                            std::string(action));
    }
  }

  void require_open_trial() const {
    if (state_ != SessionState::Practice && state_ != SessionState::Test) {
      throw SessionError(SessionError::Kind::Conflict, "no trial is open in state " + std::string(to_string(state_)));
    }
    if (phase_complete()) throw SessionError(SessionError::Kind::Conflict, "phase complete; waiting for advance");
  }

  const std::vector<Question>& current() const { return state_ == SessionState::Test ? test_ : practice_; }
  bool phase_complete() const { return trial_ >= current().size(); }

  SessionResults results_unlocked() const {
    SessionResults r;
    r.practice = score(practice_log_);
    r.test = score(test_log_);
    r.records = practice_log_;
    r.records.insert(r.records.end(), test_log_.begin(), test_log_.end());
    const std::vector<std::string> labels = {"human-practice", "human-test"};
    const std::vector<AccuracyBreakdown> bs = {r.practice, r.test};
    r.table = export_results(bs, labels);
    return r;
  }

  const std::string id_;
  const std::string preset_;
  const RunConfig config_;
  const SessionOptions options_;
  std::vector<Question> practice_;
  std::vector<Question> test_;

  mutable std::shared_mutex mu_;
  SessionState state_ = SessionState::Lobby;
  std::array<std::optional<std::string>, 2> tokens_;
  std::array<bool, 2> ready_ = {false, false};
  std::array<std::string, 2> scratchpads_;
  std::size_t trial_ = 0;
  std::optional<std::string> pending_message_;
  std::optional<Feedback> last_feedback_;
  std::vector<TrialRecord> practice_log_;
  std::vector<TrialRecord> test_log_;
  std::size_t feedback_events_ = 0;
  std::vector<SandboxMessage> sandbox_log_;
  Rng sandbox_rng_;
};

class SessionManager {
 public:
  explicit SessionManager(SessionOptions options = {}, RunConfig base = {}) : options_(options), base_(std::move(base)) {}

  // Question sets come from a fresh random seed unless one is given.
  std::shared_ptr<Session> create(std::string_view preset, std::optional<std::uint64_t> seed = std::nullopt) {
    RunConfig c;
    try {
      c = RunConfig::preset(preset);
    } catch (const ConfigError& e) {
      throw SessionError(SessionError::Kind::BadRequest, e.what());
    }
    c.model = base_.model;
    c.preconditioning = base_.preconditioning;
    c.practice = base_.practice;
    c.test = base_.test;
    c.image_size = base_.image_size;
    c.curriculum = base_.curriculum;
    c.seed = seed ? *seed : detail::random_seed();
    std::string id;
    {
      // Reserve the id; generation runs outside the lock.
      std::unique_lock lock(mu_);
      do id = detail::random_hex(8);
      while (!sessions_.emplace(id, nullptr).second);
    }
    std::shared_ptr<Session> s;
    try {
      s = std::make_shared<Session>(id, std::string(preset), std::move(c), options_);
    } catch (...) {
      std::unique_lock lock(mu_);
      sessions_.erase(id);
      throw;
    }
    std::unique_lock lock(mu_);
    sessions_[id] = s;
    return s;
  }

  std::shared_ptr<Session> get(std::string_view id) const {
    std::shared_lock lock(mu_);
    const auto it = sessions_.find(std::string(id));
    if (it == sessions_.end() || !it->second) throw SessionError(SessionError::Kind::NotFound, "unknown session '" + std::string(id) + "'");
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return sessions_.size();
  }

 private:
  SessionOptions options_;
  RunConfig base_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace mtt
