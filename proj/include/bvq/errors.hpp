#pragma once

#include <stdexcept>
#include <string>

namespace bvq {

/// Shape disagreement between tensors or between a tensor and a layer.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

/// A caller violated a documented precondition (bad index, non-scalar
/// backward root, out-of-range code, ...).
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Invalid or inconsistent user configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file (IDX, checkpoint, flip list).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset fails validation against a model (label range, count mismatch).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Training diverged or could not proceed.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

/// The bit search could not run (zero baseline, non-finite gradients).
struct AttackError : std::runtime_error {
  explicit AttackError(const std::string& what) : std::runtime_error(what) {}
};

/// A metric could not be computed from the given data.
struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bvq
