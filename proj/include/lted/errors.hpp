#pragma once

#include <stdexcept>
#include <string>

namespace lted {

// Caller passed a value outside an operation's domain.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An operation was invoked in a state where its precondition does not hold.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Broken internal invariant (duplicate queue entry, unresolved timeline, ...).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lted
