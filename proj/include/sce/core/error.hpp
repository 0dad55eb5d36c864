#pragma once

#include <stdexcept>
#include <string>

namespace sce {

// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed a value outside an operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A record file or payload could not be decoded.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// On-disk artifacts disagree with each other (size, digest, shape).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Network-level failure talking to a gateway; retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A gateway replied with something the protocol does not allow. Never retried.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// An upstream stage output no longer matches the digest in its manifest.
class StaleInputError : public Error {
 public:
  using Error::Error;
};

// Bad command line or configuration; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace sce
