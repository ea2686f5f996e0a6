#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hass {

// Invalid shapes, dimension mismatches, head-divisibility violations.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied configuration (flags, specs, incompatible model/data).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structured loader errors for the HEEG1 dataset format. The loader must
// reject arbitrary byte streams with one of these codes, never crash.
struct DatasetError : std::runtime_error {
  enum class Code {
    BadMagic,
    Truncated,
    BadHeader,
    LabelRange,
    SizeMismatch,
  };
  Code code;
  DatasetError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// Structured loader errors for the HASSPRM parameter format.
struct ParamsError : std::runtime_error {
  enum class Code {
    BadMagic,
    BadVersion,
    Truncated,
    BadTensor,
  };
  Code code;
  ParamsError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// Raised when a training step produces a non-finite loss.
struct TrainDivergedError : std::runtime_error {
  std::size_t epoch;
  std::size_t batch;
  TrainDivergedError(std::size_t e, std::size_t b, const std::string& msg)
      : std::runtime_error(msg), epoch(e), batch(b) {}
};

}  // namespace hass
