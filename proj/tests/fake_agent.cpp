// Scriptable stand-in for an external agent.
//
//   fake_agent fixed <message> <choice> [log]   answer every request the same way
//   fake_agent silent [log]                     read, never answer
//   fake_agent garbage                          answer with a non-JSON line
//   fake_agent die                              exit at once
//   fake_agent slow <ms> <message> <choice>     sleep before answering
//
// With a log path, every received line is appended to the log.

#include <chrono>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <json.hpp>

using nlohmann::json;

int main(int argc, char** argv) {
  if (argc < 2) return 2;
  const std::string mode = argv[1];
  if (mode == "die") return 3;

  std::string message = "A";
  int choice = 0;
  int delay_ms = 0;
  std::string log_path;
  if (mode == "fixed" && argc >= 4) {
    message = argv[2];
    choice = std::stoi(argv[3]);
    if (argc >= 5) log_path = argv[4];
  } else if (mode == "silent" && argc >= 3) {
    log_path = argv[2];
  } else if (mode == "slow" && argc >= 5) {
    delay_ms = std::stoi(argv[2]);
    message = argv[3];
    choice = std::stoi(argv[4]);
  }

  std::ofstream log;
  if (!log_path.empty()) log.open(log_path, std::ios::app);

  std::string line;
  while (std::getline(std::cin, line)) {
    if (log.is_open()) {
      log << line << '\n';
      log.flush();
    }
    if (mode == "silent") continue;
    if (mode == "garbage") {
      std::cout << "this is not json" << std::endl;
      continue;
    }
    const json frame = json::parse(line, nullptr, false);
    if (!frame.is_object() || !frame.contains("role")) continue;  // feedback frame
    if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    if (frame["role"] == "speaker") {
      std::cout << json{{"message", message}}.dump() << std::endl;
    } else {
      std::cout << json{{"choice", choice}}.dump() << std::endl;
    }
  }
  return 0;
}
