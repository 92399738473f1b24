#pragma once

#include <stdexcept>
#include <string>

namespace cutfocal {

// Invalid or inconsistent run configuration (unknown keys, bad values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing, empty, or unreadable dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss or logit became NaN/Inf during training or evaluation.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { corrupt, version, shape };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace cutfocal
