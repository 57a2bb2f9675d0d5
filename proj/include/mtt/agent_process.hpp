#pragma once

// External agents as child processes speaking line-delimited JSON over
// stdin/stdout.
//
//   speaker request   {"role":"speaker","trial_id":..., "image_path":...}
//   speaker reply     {"message":"..."}
//   listener request  {"role":"listener","trial_id":..., "message":..., "candidate_paths":[4 paths]}
//   listener reply    {"choice":k}
//   feedback frame    {"trial_id":..., "correct":bool, "correct_index":k}   (no reply)
//
// Every request waits at most `timeout` for one reply line; a timeout, a
// closed pipe or a malformed reply raises AgentError, which the game engine
// records as a failed trial. A timed-out agent is killed and later requests
// to it fail immediately.

#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_set>

#include <json.hpp>

#include "mtt/error.hpp"
#include "mtt/game.hpp"
#include "mtt/image_io.hpp"

namespace mtt {

class AgentProcess {
 public:
  AgentProcess(const std::string& command, std::chrono::milliseconds timeout) : timeout_(timeout) {
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0) throw AgentError("pipe failed");
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw AgentError("pipe failed");
    }
    pid_ = fork();
    if (pid_ < 0) throw AgentError("fork failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_ = to_child[1];
    out_ = from_child[0];
    signal(SIGPIPE, SIG_IGN);
  }

  AgentProcess(const AgentProcess&) = delete;
  AgentProcess& operator=(const AgentProcess&) = delete;

  ~AgentProcess() {
    if (in_ >= 0) close(in_);
    if (out_ >= 0) close(out_);
    if (pid_ > 0 && !reaped_) {
      // Give the child a moment to exit on EOF, then kill it.
      for (int i = 0; i < 400; ++i) {
        if (waitpid(pid_, nullptr, WNOHANG) == pid_) return;
        usleep(5000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, nullptr, 0);
    }
  }

  void send(const nlohmann::json& frame) {
    std::lock_guard lock(mu_);
    write_line(frame.dump());
  }

  nlohmann::json request(const nlohmann::json& frame) {
    std::lock_guard lock(mu_);
    write_line(frame.dump());
    std::string line;
    try {
      line = read_line();
    } catch (const AgentError&) {
      terminate();
      throw;
    }
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw AgentError("malformed reply: " + line.substr(0, 80));
    }
  }

 private:
  void terminate() {
    if (pid_ > 0 && !reaped_) {
      kill(pid_, SIGKILL);
      waitpid(pid_, nullptr, 0);
      reaped_ = true;
    }
  }

  void write_line(std::string line) {
    if (reaped_) throw AgentError("agent was stopped after an earlier failure");
    line.push_back('\n');
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = write(in_, line.data() + off, line.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw AgentError("agent closed its input");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw AgentError("timed out after " + std::to_string(timeout_.count()) + " ms");
      pollfd p{out_, POLLIN, 0};
      const int r = poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw AgentError("poll failed");
      }
      if (r == 0) continue;
      char chunk[4096];
      const ssize_t n = read(out_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw AgentError("agent exited");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  bool reaped_ = false;
  int in_ = -1;
  int out_ = -1;
  std::string buffer_;
  std::mutex mu_;
};

// Writes each distinct image once as <dir>/<digest>.pgm and hands out paths.
class ImageSpool {
 public:
  explicit ImageSpool(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::string path_for(const Image& img) {
    const std::string name = digest_hex(image_digest(img)) + ".pgm";
    const auto path = dir_ / name;
    std::lock_guard lock(mu_);
    if (written_.insert(name).second) write_image(path, img, ImageFormat::Pgm);
    return path.string();
  }

 private:
  std::filesystem::path dir_;
  std::unordered_set<std::string> written_;
  std::mutex mu_;
};

inline nlohmann::json feedback_frame(const TrialRecord& r) {
  return {{"trial_id", r.question_id}, {"correct", r.correct}, {"correct_index", r.correct_index}};
}

inline SpeakerFn subprocess_speaker(std::shared_ptr<AgentProcess> proc, std::shared_ptr<ImageSpool> spool) {
  return [proc, spool](const TrialContext& ctx, const Image& target) {
    const auto reply = proc->request(
        {{"role", "speaker"}, {"trial_id", ctx.trial_id}, {"image_path", spool->path_for(target)}});
    if (!reply.is_object() || !reply.contains("message") || !reply["message"].is_string()) {
      throw AgentError("speaker reply lacks a string 'message'");
    }
    return reply["message"].get<std::string>();
  };
}

inline ListenerFn subprocess_listener(std::shared_ptr<AgentProcess> proc, std::shared_ptr<ImageSpool> spool) {
  return [proc, spool](const TrialContext& ctx, const Message& m, std::span<const Image, kCandidates> candidates) {
    nlohmann::json paths = nlohmann::json::array();
    for (const Image& img : candidates) paths.push_back(spool->path_for(img));
    const auto reply = proc->request(
        {{"role", "listener"}, {"trial_id", ctx.trial_id}, {"message", m.text()}, {"candidate_paths", paths}});
    if (!reply.is_object() || !reply.contains("choice") || !reply["choice"].is_number_integer()) {
      throw AgentError("listener reply lacks an integer 'choice'");
    }
    return reply["choice"].get<int>();
  };
}

inline FeedbackFn subprocess_feedback(std::shared_ptr<AgentProcess> proc) {
  return [proc](const TrialRecord& r) { proc->send(feedback_frame(r)); };
}

}  // namespace mtt
