#include "jafar/tensor.hpp"

#include <functional>
#include <numeric>

namespace jafar {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::InvalidTargetSize: return "InvalidTargetSize";
    case ErrorKind::NonScalarLoss: return "NonScalarLoss";
    case ErrorKind::DoubleBackward: return "DoubleBackward";
    case ErrorKind::OddHeadDim: return "OddHeadDim";
    case ErrorKind::IndivisibleHeads: return "IndivisibleHeads";
    case ErrorKind::IndivisibleImage: return "IndivisibleImage";
    case ErrorKind::StrategyMismatch: return "StrategyMismatch";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NonPositiveFullScore: return "NonPositiveFullScore";
    case ErrorKind::ConstantMap: return "ConstantMap";
    case ErrorKind::UndefinedHarmonicMean: return "UndefinedHarmonicMean";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::HeaderPayloadMismatch: return "HeaderPayloadMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorKind::MissingFlag: return "MissingFlag";
  }
  return "Unknown";
}

}  // namespace jafar
