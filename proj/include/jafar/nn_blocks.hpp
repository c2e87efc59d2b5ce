#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jafar/tensor.hpp"

namespace jafar {

/// Axial 2-D rotary embedding. Within each head the first half of the
/// channel pairs rotates with the row coordinate and the second half with
/// the column coordinate; pair t uses frequency base_freq^(-4t/head_dim).
struct RopeConfig {
  int head_dim = 16;
  double base_freq = 100.0;

  /// Throws OddHeadDim unless head_dim is a positive multiple of 4.
  void validate() const;
};

/// Continuous position in (0,1)^2 shared by grids of any resolution.
struct GridPosition {
  double row;
  double col;
};

/// Half-pixel centres ((i+0.5)/h, (j+0.5)/w), row-major.
std::vector<GridPosition> grid_positions(int h, int w);

/// Rows [row_begin, row_end) of grid_positions(h, w).
std::vector<GridPosition> grid_positions(int h, int w, int row_begin, int row_end);

/// Rotates x ([n_heads x N x head_dim], or [N x head_dim] for one head) by
/// the per-token positions. Norm preserving.
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const GridPosition> positions, const RopeConfig& cfg);

/// Linear projections producing the spatial modulation maps from encoder
/// features: gamma = W_g^T f + b_g, beta = W_b^T f + b_b per location.
template <typename T>
struct SftParams {
  Tensor<T> gamma_w;  // [C x d]
  Tensor<T> gamma_b;  // [d]
  Tensor<T> beta_w;   // [C x d]
  Tensor<T> beta_b;   // [d]
};

/// K = gamma(f_lr) * k_tilde + beta(f_lr), with k_tilde [d x h x w] and
/// f_lr [C x h x w].
template <typename T>
Tensor<T> sft_modulate(const Tensor<T>& k_tilde, const Tensor<T>& f_lr, const SftParams<T>& p);

/// Row-stochastic interpolation matrix of shape (query_h*query_w) x (key_h*key_w).
template <typename T>
struct AttentionKernel {
  Tensor<T> a;
  int heads_used = 1;
  int query_h = 0;
  int query_w = 0;
  int key_h = 0;
  int key_w = 0;
};

/// Largest kernel-shaped buffer materialised while building attention rows.
struct KernelStats {
  std::size_t peak_kernel_floats = 0;
};

/// Multi-head attention rows: queries [n x d] at q_pos, keys [m x d] at k_pos.
/// Each head rotates its slice with RoPE, takes softmax(q k^T / sqrt(head_dim))
/// and the post-softmax maps are averaged. Rows are computed independently,
/// so any partition of the queries reproduces the full result bitwise.
template <typename T>
Tensor<T> attention_rows(const Tensor<T>& queries, std::span<const GridPosition> q_pos, const Tensor<T>& keys,
                         std::span<const GridPosition> k_pos, int n_heads, const RopeConfig& rope,
                         KernelStats* stats = nullptr);

/// q [d x hq x wq], k [d x hk x wk]; positions come from each tensor's own grid.
template <typename T>
AttentionKernel<T> attention_kernel(const Tensor<T>& q, const Tensor<T>& k, int n_heads, const RopeConfig& rope);

/// [n x m] kernel applied to f_lr [C x m...] giving [C x n]: every output
/// vector is the kernel-weighted combination of input vectors. No value
/// projection.
template <typename T>
Tensor<T> apply_kernel_rows(const Tensor<T>& a, const Tensor<T>& f_lr);

/// F_hat = A . F_lr reshaped to [C x query_h x query_w].
template <typename T>
Tensor<T> kernel_apply(const AttentionKernel<T>& a, const Tensor<T>& f_lr);

}  // namespace jafar
