#pragma once

#include <stdexcept>
#include <string>

namespace fdecon {

enum class ErrorCode {
  InvalidArgument = 1,
  Io,
  Format,
  Convergence,
  Divergence,
  Bridge,
  Internal,
};

// Base of every exception thrown by the library. The C API maps the code
// straight onto its status enum.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

class InvalidArgument : public Error {
public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorCode::InvalidArgument, what) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error(ErrorCode::Io, what) {}
};

class FormatError : public Error {
public:
  explicit FormatError(const std::string& what) : Error(ErrorCode::Format, what) {}
};

class ConvergenceError : public Error {
public:
  explicit ConvergenceError(const std::string& what) : Error(ErrorCode::Convergence, what) {}
};

class DivergenceError : public Error {
public:
  explicit DivergenceError(const std::string& what) : Error(ErrorCode::Divergence, what) {}
};

class BridgeError : public Error {
public:
  explicit BridgeError(const std::string& what) : Error(ErrorCode::Bridge, what) {}
};

class InternalError : public Error {
public:
  explicit InternalError(const std::string& what) : Error(ErrorCode::Internal, what) {}
};

}  // namespace fdecon
