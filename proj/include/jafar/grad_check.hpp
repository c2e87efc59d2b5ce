#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "jafar/rng.hpp"
#include "jafar/tensor.hpp"

namespace jafar {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct GradCheckOptions {
  double step = 1e-3;
  double tol = 1e-4;
  /// Entries checked per parameter; 0 checks every entry, otherwise a
  /// seeded random subset of this size.
  std::size_t max_entries = 0;
  uint64_t seed = 0;
  /// Precision of the tape pass. Float64 checks the backward formulas free of
  /// 32-bit rounding; Float32 checks the production instantiation.
  enum class Precision { Float32, Float64 } tape_precision = Precision::Float64;
  /// Central-difference stencil. The five-point form has O(step^4)
  /// truncation error, which keeps tiny gradient entries measurable at
  /// step 1e-3.
  enum class Stencil { ThreePoint, FivePoint } stencil = Stencil::FivePoint;
};

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tol = 0.0;
  bool passed = true;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_err);
    return m;
  }
};

inline double relative_error(double ad, double fd) {
  return std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
}

namespace detail {

template <typename T, typename Fn>
std::vector<std::vector<double>> tape_gradients(Fn& fn, const std::vector<NamedTensor>& params) {
  Tape<T> tape;
  std::vector<Tensor<T>> watched;
  watched.reserve(params.size());
  for (const auto& p : params) watched.push_back(p.value.template cast<T>());
  for (auto& t : watched) tape.watch(t);
  const Tensor<T> loss = fn(watched);
  tape.backward(loss);
  std::vector<std::vector<double>> grads;
  for (const auto& t : watched) {
    const auto g = tape.grad(t);
    grads.emplace_back(g.data.begin(), g.data.end());
  }
  return grads;
}

}  // namespace detail

/// Tape gradients of `fn` at `params`, in the requested precision.
template <typename Fn>
std::vector<std::vector<double>> tape_gradients(Fn&& fn, const std::vector<NamedTensor>& params,
                                                GradCheckOptions::Precision precision) {
  return precision == GradCheckOptions::Precision::Float32 ? detail::tape_gradients<float>(fn, params)
                                                           : detail::tape_gradients<double>(fn, params);
}

/// Compares tape gradients of a scalar function against central finite
/// differences.
///
/// `fn` must be callable with `std::vector<Tensor<float>>&` and
/// `std::vector<Tensor<double>>&` (a generic lambda) and return a scalar
/// tensor. The finite differences always evaluate the double instantiation
/// with no tape at all.
template <typename Fn>
GradCheckReport grad_check(Fn&& fn, const std::vector<NamedTensor>& params, const GradCheckOptions& opts = {}) {
  const auto ad = tape_gradients(fn, params, opts.tape_precision);

  std::vector<Tensor<double>> shadow;
  shadow.reserve(params.size());
  for (const auto& p : params) shadow.push_back(p.value.template cast<double>());

  Rng rng(opts.seed);
  GradCheckReport report;
  report.tol = opts.tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::vector<double>& g_ad = ad[pi];
    std::vector<std::size_t> entries(g_ad.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries > 0 && entries.size() > opts.max_entries) {
      for (std::size_t i = 0; i < opts.max_entries; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (entries.size() - i));
        std::swap(entries[i], entries[j]);
      }
      entries.resize(opts.max_entries);
    }

    ParamCheck check{params[pi].name, 0.0, entries.size(), true};
    auto& values = shadow[pi].data;
    for (std::size_t e : entries) {
      const double orig = values[e];
      auto eval_at = [&](double offset) {
        values[e] = orig + offset;
        return fn(shadow).item();
      };
      const double h = opts.step;
      double g_fd = 0.0;
      if (opts.stencil == GradCheckOptions::Stencil::ThreePoint) {
        g_fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
      } else {
        g_fd = (-eval_at(2 * h) + 8.0 * eval_at(h) - 8.0 * eval_at(-h) + eval_at(-2 * h)) / (12.0 * h);
      }
      values[e] = orig;
      check.max_rel_err = std::max(check.max_rel_err, relative_error(g_ad[e], g_fd));
    }
    check.passed = check.max_rel_err <= opts.tol;
    report.passed = report.passed && check.passed;
    report.params.push_back(check);
  }
  return report;
}

}  // namespace jafar
