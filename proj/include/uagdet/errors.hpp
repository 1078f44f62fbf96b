#pragma once

#include <stdexcept>
#include <string>

namespace uagdet {

// Bad caller input: malformed files, shape mismatches, out-of-range arguments.
// The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// A library invariant was violated. The CLI maps this to exit code 2.
class InternalError : public std::logic_error {
 public:
  explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

inline void require_input(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

inline void require_internal(bool cond, const std::string& msg) {
  if (!cond) throw InternalError(msg);
}

}  // namespace uagdet
