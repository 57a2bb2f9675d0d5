#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtt {

// Base for every error the library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed program string. `position` is the byte offset of the offending
// character, or the start of the offending segment.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t position)
      : Error("parse error at " + std::to_string(position) + ": " + what),
        position(position) {}
  std::size_t position;
};

// A program that parses but cannot be laid out on the canvas.
struct CapacityError : Error {
  using Error::Error;
};

// Invalid run configuration, vocabulary, or Markov weights.
struct ConfigError : Error {
  using Error::Error;
};

// Question construction ran out of distinct candidates.
struct GenerationError : Error {
  using Error::Error;
};

// Corrupt or unreadable dataset / records / results / image file.
struct FormatError : Error {
  using Error::Error;
};

// An external agent failed, timed out, or spoke out of protocol.
struct AgentError : Error {
  using Error::Error;
};

}  // namespace mtt
