#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace commrand {

using node_id = std::uint32_t;
using edge_index = std::uint64_t;
using community_id = std::int32_t;
using label_id = std::int32_t;

inline constexpr label_id kUnlabeled = -1;
inline constexpr community_id kUnassigned = -1;

// Input that does not satisfy a documented precondition.
class validation_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Malformed text or binary input; carries the offending line when known.
class parse_error : public std::runtime_error {
public:
  parse_error(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class io_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace commrand
