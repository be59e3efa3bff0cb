#pragma once

#include <stdexcept>
#include <string>

namespace skinseg {

// Bad user input: unreadable files, undecodable rasters, malformed manifests.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// A contract violation: inconsistent shapes, invalid configuration values,
// data that fails a documented precondition.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unrecoverable runtime failure (non-finite loss, I/O failure mid-run).
class RuntimeAbort : public std::runtime_error {
 public:
  explicit RuntimeAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace skinseg
