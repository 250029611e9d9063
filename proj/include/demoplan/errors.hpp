#pragma once

#include <stdexcept>
#include <string>

namespace demoplan {

// All library failures derive from Error so the CLI can report them uniformly.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  /// Short machine-readable category, e.g. "insufficient-data".
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("invalid-argument", what) {}
};

class InsufficientData : public Error {
 public:
  explicit InsufficientData(const std::string& what) : Error("insufficient-data", what) {}
};

class DegenerateWeights : public Error {
 public:
  explicit DegenerateWeights(const std::string& what) : Error("degenerate-weights", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse-error", what) {}
};

class SegmentationError : public Error {
 public:
  explicit SegmentationError(const std::string& what) : Error("segmentation-error", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config-error", what) {}
};

class GenerationFailure : public Error {
 public:
  explicit GenerationFailure(const std::string& what) : Error("generation-failure", what) {}
};

class Infeasible : public Error {
 public:
  explicit Infeasible(const std::string& what) : Error("infeasible", what) {}
};

}  // namespace demoplan
