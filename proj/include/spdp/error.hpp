#pragma once

#include <stdexcept>
#include <string>

namespace spdp {

// Failure category; the CLI maps it straight onto its exit code.
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
 public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

 private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what, ErrorKind kind = ErrorKind::Data) {
    if (!cond) fail(kind, what);
}

}  // namespace spdp
