#include "jafar/nn_blocks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "jafar/ops.hpp"

namespace jafar {
namespace {

// cos/sin for every (token, pair) in head-local pair order.
struct RopeTable {
  std::vector<double> cos_v;
  std::vector<double> sin_v;
};

RopeTable rope_table(std::span<const GridPosition> positions, const RopeConfig& cfg) {
  const int pairs = cfg.head_dim / 2;
  const int quarter = cfg.head_dim / 4;
  RopeTable t;
  t.cos_v.resize(positions.size() * static_cast<std::size_t>(pairs));
  t.sin_v.resize(t.cos_v.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (int p = 0; p < pairs; ++p) {
      const int freq_index = p % quarter;
      const double coord = p < quarter ? positions[i].row : positions[i].col;
      const double freq = std::pow(cfg.base_freq, -4.0 * freq_index / cfg.head_dim);
      const double angle = coord * freq;
      t.cos_v[i * pairs + p] = std::cos(angle);
      t.sin_v[i * pairs + p] = std::sin(angle);
    }
  }
  return t;
}

}  // namespace

void RopeConfig::validate() const {
  if (head_dim <= 0 || head_dim % 4 != 0) {
    fail(ErrorKind::OddHeadDim, "head_dim must be a positive multiple of 4, got " + std::to_string(head_dim));
  }
  if (!(base_freq > 0.0)) fail(ErrorKind::InvalidConfig, "rope base frequency must be positive");
}

std::vector<GridPosition> grid_positions(int h, int w) { return grid_positions(h, w, 0, h); }

std::vector<GridPosition> grid_positions(int h, int w, int row_begin, int row_end) {
  std::vector<GridPosition> out;
  out.reserve(static_cast<std::size_t>(row_end - row_begin) * static_cast<std::size_t>(w));
  for (int i = row_begin; i < row_end; ++i)
    for (int j = 0; j < w; ++j) out.push_back({(i + 0.5) / h, (j + 0.5) / w});
  return out;
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const GridPosition> positions, const RopeConfig& cfg) {
  if (x.rank() != 2 && x.rank() != 3) {
    fail(ErrorKind::ShapeMismatch, "rope_apply expects [heads x N x head_dim], got " + shape_string(x.shape));
  }
  const int hd = x.shape.back();
  if (hd % 4 != 0) fail(ErrorKind::OddHeadDim, "head_dim " + std::to_string(hd) + " is not a multiple of 4");
  if (hd != cfg.head_dim) {
    fail(ErrorKind::ShapeMismatch,
         "rope head_dim " + std::to_string(cfg.head_dim) + " vs tensor head_dim " + std::to_string(hd));
  }
  cfg.validate();
  const int n = x.dim(x.rank() - 2);
  const int heads = x.rank() == 3 ? x.dim(0) : 1;
  if (static_cast<std::size_t>(n) != positions.size()) {
    fail(ErrorKind::ShapeMismatch,
         "rope_apply: " + std::to_string(n) + " tokens vs " + std::to_string(positions.size()) + " positions");
  }
  auto table = std::make_shared<RopeTable>(rope_table(positions, cfg));
  const int pairs = hd / 2;

  std::vector<T> out(x.numel());
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      const std::size_t base = (static_cast<std::size_t>(h) * n + i) * hd;
      for (int p = 0; p < pairs; ++p) {
        const T c = static_cast<T>(table->cos_v[static_cast<std::size_t>(i) * pairs + p]);
        const T s = static_cast<T>(table->sin_v[static_cast<std::size_t>(i) * pairs + p]);
        const T x0 = x.data[base + 2 * p];
        const T x1 = x.data[base + 2 * p + 1];
        out[base + 2 * p] = x0 * c - x1 * s;
        out[base + 2 * p + 1] = x0 * s + x1 * c;
      }
    }
  }
  const int xn = x.node;
  return record_op<T>(OpKind::Rope, x.shape, std::move(out), {&x},
                      [xn, heads, n, hd, pairs, table](std::span<const T> g, Tape<T>& tape) {
                        auto gx = tape.grad_slot(xn);
                        if (gx.empty()) return;
                        for (int h = 0; h < heads; ++h) {
                          for (int i = 0; i < n; ++i) {
                            const std::size_t base = (static_cast<std::size_t>(h) * n + i) * hd;
                            for (int p = 0; p < pairs; ++p) {
                              const T c = static_cast<T>(table->cos_v[static_cast<std::size_t>(i) * pairs + p]);
                              const T s = static_cast<T>(table->sin_v[static_cast<std::size_t>(i) * pairs + p]);
                              const T g0 = g[base + 2 * p];
                              const T g1 = g[base + 2 * p + 1];
                              gx[base + 2 * p] += g0 * c + g1 * s;
                              gx[base + 2 * p + 1] += -g0 * s + g1 * c;
                            }
                          }
                        }
                      });
}

template <typename T>
Tensor<T> sft_modulate(const Tensor<T>& k_tilde, const Tensor<T>& f_lr, const SftParams<T>& p) {
  if (k_tilde.rank() != 3 || f_lr.rank() != 3 || k_tilde.dim(1) != f_lr.dim(1) || k_tilde.dim(2) != f_lr.dim(2)) {
    fail(ErrorKind::ShapeMismatch,
         "sft_modulate: keys " + shape_string(k_tilde.shape) + " vs features " + shape_string(f_lr.shape));
  }
  const Tensor<T> gamma = channel_linear(f_lr, p.gamma_w, p.gamma_b);
  const Tensor<T> beta = channel_linear(f_lr, p.beta_w, p.beta_b);
  if (gamma.shape != k_tilde.shape) {
    fail(ErrorKind::ShapeMismatch,
         "sft_modulate: modulation " + shape_string(gamma.shape) + " vs keys " + shape_string(k_tilde.shape));
  }
  return add(mul(gamma, k_tilde), beta);
}

template <typename T>
Tensor<T> attention_rows(const Tensor<T>& queries, std::span<const GridPosition> q_pos, const Tensor<T>& keys,
                         std::span<const GridPosition> k_pos, int n_heads, const RopeConfig& rope,
                         KernelStats* stats) {
  if (queries.rank() != 2 || keys.rank() != 2 || queries.dim(1) != keys.dim(1)) {
    fail(ErrorKind::ShapeMismatch,
         "attention_rows: queries " + shape_string(queries.shape) + " vs keys " + shape_string(keys.shape));
  }
  const int d = queries.dim(1);
  if (n_heads < 1 || d % n_heads != 0) {
    fail(ErrorKind::IndivisibleHeads, std::to_string(d) + " channels over " + std::to_string(n_heads) + " heads");
  }
  const int hd = d / n_heads;
  const int nq = queries.dim(0), nk = keys.dim(0);
  const Tensor<T> qh = rope_apply(split_heads(queries, n_heads), q_pos, rope);
  const Tensor<T> kh = rope_apply(split_heads(keys, n_heads), k_pos, rope);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  Tensor<T> total;
  for (int h = 0; h < n_heads; ++h) {
    const Tensor<T> q = reshape(slice0(qh, h, h + 1), {nq, hd});
    const Tensor<T> k = reshape(slice0(kh, h, h + 1), {nk, hd});
    const Tensor<T> probs = softmax_rows(mul(matmul(q, transpose(k)), scale));
    total = h == 0 ? probs : add(total, probs);
  }
  Tensor<T> a = n_heads == 1 ? total : mul(total, static_cast<T>(1.0 / n_heads));
  if (stats != nullptr) stats->peak_kernel_floats = std::max(stats->peak_kernel_floats, a.numel());
  return a;
}

template <typename T>
AttentionKernel<T> attention_kernel(const Tensor<T>& q, const Tensor<T>& k, int n_heads, const RopeConfig& rope) {
  if (q.rank() != 3 || k.rank() != 3 || q.dim(0) != k.dim(0)) {
    fail(ErrorKind::ShapeMismatch,
         "attention_kernel: q " + shape_string(q.shape) + " vs k " + shape_string(k.shape));
  }
  const int d = q.dim(0);
  if (n_heads < 1 || d % n_heads != 0) {
    fail(ErrorKind::IndivisibleHeads, std::to_string(d) + " channels over " + std::to_string(n_heads) + " heads");
  }
  const int hq = q.dim(1), wq = q.dim(2), hk = k.dim(1), wk = k.dim(2);
  const auto q_pos = grid_positions(hq, wq);
  const auto k_pos = grid_positions(hk, wk);
  const Tensor<T> q_rows = transpose(reshape(q, {d, hq * wq}));
  const Tensor<T> k_rows = transpose(reshape(k, {d, hk * wk}));
  return AttentionKernel<T>{attention_rows(q_rows, q_pos, k_rows, k_pos, n_heads, rope), n_heads, hq, wq, hk, wk};
}

template <typename T>
Tensor<T> apply_kernel_rows(const Tensor<T>& a, const Tensor<T>& f_lr) {
  if (a.rank() != 2 || f_lr.rank() < 2) {
    fail(ErrorKind::ShapeMismatch, "kernel_apply: kernel " + shape_string(a.shape) + ", features " +
                                       shape_string(f_lr.shape));
  }
  const int c = f_lr.dim(0);
  const int m = static_cast<int>(f_lr.numel() / static_cast<std::size_t>(c));
  if (a.dim(1) != m) {
    fail(ErrorKind::ShapeMismatch, "kernel_apply: kernel has " + std::to_string(a.dim(1)) + " columns but features have " +
                                       std::to_string(m) + " locations");
  }
  return matmul(reshape(f_lr, {c, m}), transpose(a));
}

template <typename T>
Tensor<T> kernel_apply(const AttentionKernel<T>& a, const Tensor<T>& f_lr) {
  if (f_lr.rank() != 3 || f_lr.dim(1) != a.key_h || f_lr.dim(2) != a.key_w) {
    fail(ErrorKind::ShapeMismatch, "kernel_apply: features " + shape_string(f_lr.shape) + " vs key grid " +
                                       std::to_string(a.key_h) + "x" + std::to_string(a.key_w));
  }
  const Tensor<T> out = apply_kernel_rows(a.a, f_lr);
  return reshape(out, {f_lr.dim(0), a.query_h, a.query_w});
}

#define JAFAR_INSTANTIATE_NN(T)                                                                                   \
  template Tensor<T> rope_apply(const Tensor<T>&, std::span<const GridPosition>, const RopeConfig&);              \
  template Tensor<T> sft_modulate(const Tensor<T>&, const Tensor<T>&, const SftParams<T>&);                       \
  template Tensor<T> attention_rows(const Tensor<T>&, std::span<const GridPosition>, const Tensor<T>&,            \
                                    std::span<const GridPosition>, int, const RopeConfig&, KernelStats*);         \
  template AttentionKernel<T> attention_kernel(const Tensor<T>&, const Tensor<T>&, int, const RopeConfig&);       \
  template Tensor<T> apply_kernel_rows(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> kernel_apply(const AttentionKernel<T>&, const Tensor<T>&);

JAFAR_INSTANTIATE_NN(float)
JAFAR_INSTANTIATE_NN(double)

}  // namespace jafar
