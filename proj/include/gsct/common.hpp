#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gsct {

// Error hierarchy. contract_error marks violated preconditions (caller bugs),
// parse_error carries the byte offset of the first malformed input byte.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct contract_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

struct parse_error : error {
  std::size_t offset;
  parse_error(const std::string& msg, std::size_t byte_offset)
      : error(msg + " (byte offset " + std::to_string(byte_offset) + ")"), offset(byte_offset) {}
};

inline void check(bool condition, const std::string& msg) {
  if (!condition) throw contract_error(msg);
}

}  // namespace gsct
