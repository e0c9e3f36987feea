#pragma once

#include <stdexcept>
#include <string>

namespace lrladapt {

// Maps onto CLI exit codes: validation problems exit 1, everything else 2.
enum class ErrorKind { kValidation, kIo, kRuntime };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_validation(const std::string& msg) { throw Error(ErrorKind::kValidation, msg); }
[[noreturn]] inline void fail_io(const std::string& msg) { throw Error(ErrorKind::kIo, msg); }
[[noreturn]] inline void fail_runtime(const std::string& msg) { throw Error(ErrorKind::kRuntime, msg); }

}  // namespace lrladapt
