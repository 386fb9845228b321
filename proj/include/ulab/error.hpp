#pragma once

#include <stdexcept>
#include <string>

namespace ulab {

enum class ErrorKind {
  dimension,      // shape/size mismatch between operands
  index,          // out-of-range id or offset
  config,         // invalid configuration value
  usage,          // API misuse (tape reuse, empty corpus, ...)
  capacity,       // not enough data / failed to reach a required state
  comparability,  // values produced under incompatible configurations
  length,         // sequence too long for the model context
  data,           // non-finite or corrupt numeric data
  io,             // file read/write failure
  precondition,   // experiment precondition (memorization) not met
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace ulab
