#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace infdbg {

enum class ErrorCode {
  invalid_descriptor,  // malformed model graph
  invalid_argument,    // schema or value violation in a request
  unknown_run,
  contiguity,          // gap or overlap in first_iteration
  run_finished,        // append or finish on a run that is no longer running
  not_enough_data,
};

/// Domain error raised by every engine layer. Carries a machine-readable code
/// and, for contiguity violations, the iteration the store expected.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        std::optional<std::uint64_t> expected = std::nullopt)
      : std::runtime_error(what), code_(code), expected_(expected) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::uint64_t> expected() const noexcept { return expected_; }

 private:
  ErrorCode code_;
  std::optional<std::uint64_t> expected_;
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_descriptor: return "invalid_descriptor";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::unknown_run: return "unknown_run";
    case ErrorCode::contiguity: return "contiguity";
    case ErrorCode::run_finished: return "run_finished";
    case ErrorCode::not_enough_data: return "not_enough_data";
  }
  return "error";
}

}  // namespace infdbg
