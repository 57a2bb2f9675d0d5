#include <gtest/gtest.h>

#include <fstream>

#include <unistd.h>

#include "mtt/agent_process.hpp"
#include "mtt/config.hpp"

using namespace mtt;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

std::string fake(const std::string& args) { return std::string(MTT_FAKE_AGENT) + " " + args; }

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mtt_agent_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<nlohmann::json> read_log(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

const std::vector<Question>& questions(PhaseKind k) {
  static const auto practice = [] {
    RunConfig c;
    c.practice_questions = 100;
    return build_phase_set(c.phase_spec(PhaseKind::Practice), c.model);
  }();
  static const auto test = [] {
    RunConfig c;
    c.test_questions = 100;
    return build_phase_set(c.phase_spec(PhaseKind::Test), c.model);
  }();
  return k == PhaseKind::Practice ? practice : test;
}

}  // namespace

TEST(AgentProcess, RequestReply) {
  AgentProcess p(fake("fixed B12*12 2"), 5000ms);
  EXPECT_EQ(p.request({{"role", "speaker"}})["message"], "B12*12");
  EXPECT_EQ(p.request({{"role", "listener"}})["choice"], 2);
}

TEST(AgentProcess, TimeoutRaisesAndStopsTheAgent) {
  AgentProcess p(fake("silent"), 200ms);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(p.request({{"role", "speaker"}}), AgentError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 3s);
  EXPECT_THROW(p.request({{"role", "speaker"}}), AgentError);
}

TEST(AgentProcess, LateReplyIsNotMistakenForTheNextAnswer) {
  AgentProcess p(fake("slow 400 AB 1"), 100ms);
  EXPECT_THROW(p.request({{"role", "speaker"}}), AgentError);
  std::this_thread::sleep_for(500ms);
  EXPECT_THROW(p.request({{"role", "listener"}}), AgentError);
}

TEST(AgentProcess, MalformedReplyRaises) {
  AgentProcess p(fake("garbage"), 5000ms);
  EXPECT_THROW(p.request({{"role", "speaker"}}), AgentError);
}

TEST(AgentProcess, DeadAgentRaises) {
  AgentProcess p(fake("die"), 5000ms);
  EXPECT_THROW(p.request({{"role", "speaker"}}), AgentError);
  AgentProcess q("/nonexistent/agent", 5000ms);
  EXPECT_THROW(q.request({{"role", "speaker"}}), AgentError);
}

TEST(SubprocessAgents, OneProcessCanServeBothRoles) {
  const fs::path dir = scratch_dir("roles");
  auto spool = std::make_shared<ImageSpool>(dir);
  auto proc = std::make_shared<AgentProcess>(fake("fixed A 1"), 5000ms);
  const Question& q = questions(PhaseKind::Test)[0];
  const ListenerFn l = subprocess_listener(proc, spool);
  const SpeakerFn s = subprocess_speaker(proc, spool);
  EXPECT_EQ(s({q.id, q.phase}, q.target_image()), "A");
  EXPECT_EQ(l({q.id, q.phase}, *Message::make("A"), std::span<const Image, kCandidates>(q.candidates)), 1);
}

TEST(SubprocessAgents, FramesCarryOnlyTheirSideOfTheTrial) {
  const fs::path dir = scratch_dir("firewall");
  auto spool = std::make_shared<ImageSpool>(dir / "images");
  auto sp = std::make_shared<AgentProcess>(fake("fixed A 0 " + (dir / "speaker.log").string()), 5000ms);
  auto lp = std::make_shared<AgentProcess>(fake("fixed A 0 " + (dir / "listener.log").string()), 5000ms);
  const AgentEndpoints a{subprocess_speaker(sp, spool), subprocess_listener(lp, spool), subprocess_feedback(sp),
                         subprocess_feedback(lp)};
  const auto& qs = questions(PhaseKind::Test);
  const std::vector<Question> few(qs.begin(), qs.begin() + 10);
  run_phase(a, few, PhaseKind::Test);

  const auto speaker_log = read_log(dir / "speaker.log");
  const auto listener_log = read_log(dir / "listener.log");
  ASSERT_EQ(speaker_log.size(), 10u);
  ASSERT_EQ(listener_log.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& s = speaker_log[i];
    EXPECT_EQ(s["role"], "speaker");
    EXPECT_EQ(s["trial_id"], few[i].id);
    EXPECT_EQ(s.size(), 3u) << s.dump();
    EXPECT_EQ(read_image(s["image_path"].get<std::string>()).pixels, few[i].target_image().pixels);

    const auto& l = listener_log[i];
    EXPECT_EQ(l["role"], "listener");
    EXPECT_EQ(l["message"], "A");
    EXPECT_EQ(l.size(), 4u) << l.dump();
    ASSERT_EQ(l["candidate_paths"].size(), 4u);
    for (std::size_t k = 0; k < kCandidates; ++k) {
      EXPECT_EQ(read_image(l["candidate_paths"][k].get<std::string>()).pixels, few[i].candidates[k].pixels);
    }
    // No answer key in request frames.
    const std::string dump = s.dump() + l.dump();
    EXPECT_EQ(dump.find("correct"), std::string::npos);
  }
}

TEST(SubprocessAgents, FeedbackFramesOnEveryPracticeTrialAndNoneInTest) {
  for (PhaseKind k : {PhaseKind::Practice, PhaseKind::Test}) {
    const fs::path dir = scratch_dir(std::string(to_string(k)));
    const auto& qs = questions(k);
    std::vector<TrialRecord> recs;
    {
      // The endpoints own the processes; leaving this scope closes their input and waits for exit.
      auto spool = std::make_shared<ImageSpool>(dir / "images");
      auto sp = std::make_shared<AgentProcess>(fake("fixed A 0 " + (dir / "speaker.log").string()), 5000ms);
      auto lp = std::make_shared<AgentProcess>(fake("fixed A 3 " + (dir / "listener.log").string()), 5000ms);
      const AgentEndpoints a{subprocess_speaker(sp, spool), subprocess_listener(lp, spool), subprocess_feedback(sp),
                             subprocess_feedback(lp)};
      recs = run_phase(a, qs, k);
    }

    std::size_t feedback = 0;
    std::size_t requests = 0;
    std::string last_request;
    for (const auto& f : read_log(dir / "listener.log")) {
      if (f.contains("role")) {
        ++requests;
        last_request = f["trial_id"];
        continue;
      }
      ++feedback;
      // Feedback for a trial follows that trial's request and precedes the next.
      EXPECT_EQ(f["trial_id"], last_request);
      EXPECT_EQ(f.size(), 3u);
    }
    EXPECT_EQ(requests, qs.size());
    EXPECT_EQ(feedback, k == PhaseKind::Practice ? qs.size() : 0u) << to_string(k);
    for (const auto& r : recs) EXPECT_EQ(r.correct, r.correct_index == 3);
  }
}

TEST(SubprocessAgents, SilentListenerTimesOutAndTrialsAreRecorded) {
  const fs::path dir = scratch_dir("silent");
  auto spool = std::make_shared<ImageSpool>(dir);
  auto sp = std::make_shared<AgentProcess>(fake("fixed A 0"), 5000ms);
  auto lp = std::make_shared<AgentProcess>(fake("silent"), 100ms);
  const AgentEndpoints a{subprocess_speaker(sp, spool), subprocess_listener(lp, spool), {}, {}};
  const auto& qs = questions(PhaseKind::Test);
  const std::vector<Question> few(qs.begin(), qs.begin() + 3);
  const auto recs = run_phase(a, few, PhaseKind::Test);
  ASSERT_EQ(recs.size(), 3u);
  for (const auto& r : recs) {
    EXPECT_FALSE(r.correct);
    EXPECT_EQ(r.note.rfind("listener failure: ", 0), 0u) << r.note;
  }
}
