#pragma once

#include <stdexcept>
#include <string>

namespace scp {

// Shapes that do not line up (channel counts, broadcast, odd pooling input).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API precondition that is not about shapes.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid user configuration (backbone widths, synth geometry, config files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/inf during training, zero-variance normalization and similar.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StatisticsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace scp
