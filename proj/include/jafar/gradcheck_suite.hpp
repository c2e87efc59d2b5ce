#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jafar/grad_check.hpp"

namespace jafar {

/// A scalar test function usable by grad_check at both precisions.
struct DualFn {
  std::function<Tensor<float>(std::vector<Tensor<float>>&)> f32;
  std::function<Tensor<double>(std::vector<Tensor<double>>&)> f64;

  Tensor<float> operator()(std::vector<Tensor<float>>& p) const { return f32(p); }
  Tensor<double> operator()(std::vector<Tensor<double>>& p) const { return f64(p); }
};

template <typename G>
DualFn make_dual(G g) {
  return DualFn{g, g};
}

struct GradCase {
  std::string name;
  DualFn fn;
  std::vector<NamedTensor> params;
  /// Entries per parameter to check (0 = all).
  std::size_t max_entries = 0;
};

/// One case per differentiable op (tensor core and attention blocks), each
/// reduced to a scalar through a fixed random weighting so no gradient is
/// identically zero.
std::vector<GradCase> op_gradient_cases(uint64_t seed);

/// The full upsampler at tiny shapes with every parameter as a check target.
/// `key_strategy` is one of "sft", "no_sft", "concat", "linear_projection".
GradCase composite_gradient_case(uint64_t seed, const std::string& key_strategy = "sft");

/// x^2 forward with a deliberately negated backward; a negative control.
template <typename T>
Tensor<T> sign_flipped_square(const Tensor<T>& x);

}  // namespace jafar
