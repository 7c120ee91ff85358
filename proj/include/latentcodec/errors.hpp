#pragma once

#include <stdexcept>
#include <string>

namespace lc {

// Error taxonomy shared by the library and the CLI. Each class maps to a
// stable diagnostic name so callers (and the CLI exit-code mapping) can
// dispatch on type rather than parsing messages.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& msg)
      : std::runtime_error(name + ": " + msg), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

struct SpecMismatchError : Error {
  explicit SpecMismatchError(const std::string& msg) : Error("SpecMismatch", msg) {}
};

struct OutOfSupportError : Error {
  explicit OutOfSupportError(const std::string& msg) : Error("OutOfSupport", msg) {}
};

struct CorruptStreamError : Error {
  explicit CorruptStreamError(const std::string& msg) : Error("CorruptStream", msg) {}
};

struct EmptyChannelError : Error {
  explicit EmptyChannelError(const std::string& msg) : Error("EmptyChannel", msg) {}
};

struct TooManyBinsError : Error {
  explicit TooManyBinsError(const std::string& msg) : Error("TooManyBins", msg) {}
};

struct BadShapeError : Error {
  explicit BadShapeError(const std::string& msg) : Error("BadShape", msg) {}
};

struct DivergedError : Error {
  explicit DivergedError(const std::string& msg) : Error("Diverged", msg) {}
};

}  // namespace lc
