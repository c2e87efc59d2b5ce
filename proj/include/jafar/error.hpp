#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace jafar {

enum class ErrorKind {
  ShapeMismatch,
  DivisionByZero,
  NonFiniteInput,
  InvalidTargetSize,
  NonScalarLoss,
  DoubleBackward,
  OddHeadDim,
  IndivisibleHeads,
  IndivisibleImage,
  StrategyMismatch,
  IndexOutOfRange,
  NonFiniteGradient,
  NonFiniteLoss,
  NonPositiveFullScore,
  ConstantMap,
  UndefinedHarmonicMean,
  BadMagic,
  TruncatedFile,
  UnsupportedVersion,
  HeaderPayloadMismatch,
  InvalidConfig,
  IoError,
  UnknownSubcommand,
  MissingFlag,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; `kind()` carries the contract name.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace jafar
