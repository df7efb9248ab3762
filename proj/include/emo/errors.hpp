#pragma once

#include <stdexcept>
#include <string>

namespace emo {

/// Bad command-line usage. Maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problems with input files, manifests or caches. Maps to exit code 2.
class DataError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kBadMagic,
    kBadVersion,
    kTruncated,
    kShapeMismatch,
    kInvalidRecord,
    kMissing,
  };

  DataError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Non-finite losses or gradients. Maps to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emo
