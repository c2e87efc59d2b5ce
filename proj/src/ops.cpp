#include "jafar/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace jafar {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// GEMM on owned aligned copies; Eigen's peeling otherwise follows the address.
template <typename T>
RowMat<T> owned(const T* p, int rows, int cols) {
  return ConstMapMat<T>(p, rows, cols);
}

template <typename T>
void store(const RowMat<T>& m, T* dst, bool accumulate) {
  const std::size_t n = static_cast<std::size_t>(m.size());
  const T* src = m.data();
  if (accumulate) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
  } else {
    std::copy(src, src + n, dst);
  }
}

template <typename T>
T row_sum(const T* p, int row, int cols) {
  T acc(0);
  const T* r = p + static_cast<std::size_t>(row) * static_cast<std::size_t>(cols);
  for (int j = 0; j < cols; ++j) acc += r[j];
  return acc;
}

void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, ErrorKind::ShapeMismatch,
          std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank(const Shape& s, int rank, const char* op) {
  require(static_cast<int>(s.size()) == rank, ErrorKind::ShapeMismatch,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// im2col for a 3x3/stride-1/pad-1 window: rows are (ci, ky, kx), columns are
// output pixels.
template <typename T>
void im2col3x3(const T* x, int c, int h, int w, T* cols) {
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (int ci = 0; ci < c; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + (static_cast<std::size_t>(ci) * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          T* dst = row + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * static_cast<std::size_t>(w);
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            dst[xx] = (sx < 0 || sx >= w) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3x3(const T* cols, int c, int h, int w, T* dx) {
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (int ci = 0; ci < c; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(ci) * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
          T* dst = plane + static_cast<std::size_t>(sy) * static_cast<std::size_t>(w);
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx >= 0 && sx < w) dst[sx] += src[xx];
          }
        }
      }
    }
  }
}

// out[m x n] = a[m x k] . b[k x n], i-k-j order so each element sums over k
// in ascending order regardless of m.
template <typename T>
void gemm_ikj(const T* a, const T* b, T* out, int m, int k, int n) {
  std::fill(out, out + static_cast<std::size_t>(m) * static_cast<std::size_t>(n), T(0));
  for (int i = 0; i < m; ++i) {
    T* orow = out + static_cast<std::size_t>(i) * static_cast<std::size_t>(n);
    const T* arow = a + static_cast<std::size_t>(i) * static_cast<std::size_t>(k);
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + static_cast<std::size_t>(kk) * static_cast<std::size_t>(n);
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

struct Window {
  int begin;
  int end;
};

Window pool_window(int i, int in, int out) {
  const long long lo = static_cast<long long>(i) * in / out;
  const long long hi = (static_cast<long long>(i + 1) * in + out - 1) / out;
  return {static_cast<int>(lo), static_cast<int>(hi)};
}

template <typename T>
Tensor<T> pool_impl(const Tensor<T>& x, int out_h, int out_w) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<Window> rows(static_cast<std::size_t>(out_h)), cols(static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) rows[static_cast<std::size_t>(i)] = pool_window(i, h, out_h);
  for (int j = 0; j < out_w; ++j) cols[static_cast<std::size_t>(j)] = pool_window(j, w, out_w);

  std::vector<T> out(static_cast<std::size_t>(c) * out_h * out_w);
  for (int ch = 0; ch < c; ++ch) {
    const T* plane = x.data.data() + static_cast<std::size_t>(ch) * h * w;
    for (int i = 0; i < out_h; ++i) {
      const Window r = rows[static_cast<std::size_t>(i)];
      for (int j = 0; j < out_w; ++j) {
        const Window cw = cols[static_cast<std::size_t>(j)];
        T acc = T(0);
        for (int y = r.begin; y < r.end; ++y) {
          for (int xx = cw.begin; xx < cw.end; ++xx) acc += plane[static_cast<std::size_t>(y) * w + xx];
        }
        const T count = static_cast<T>((r.end - r.begin) * (cw.end - cw.begin));
        out[(static_cast<std::size_t>(ch) * out_h + i) * out_w + j] = acc / count;
      }
    }
  }
  const int xn = x.node;
  return record_op<T>(OpKind::AdaptiveAvgPool, {c, out_h, out_w}, std::move(out), {&x},
                      [xn, c, h, w, out_h, out_w, rows, cols](std::span<const T> g, Tape<T>& tape) {
                        auto gx = tape.grad_slot(xn);
                        if (gx.empty()) return;
                        for (int ch = 0; ch < c; ++ch) {
                          T* plane = gx.data() + static_cast<std::size_t>(ch) * h * w;
                          for (int i = 0; i < out_h; ++i) {
                            const Window r = rows[static_cast<std::size_t>(i)];
                            for (int j = 0; j < out_w; ++j) {
                              const Window cw = cols[static_cast<std::size_t>(j)];
                              const T count = static_cast<T>((r.end - r.begin) * (cw.end - cw.begin));
                              const T share = g[(static_cast<std::size_t>(ch) * out_h + i) * out_w + j] / count;
                              for (int y = r.begin; y < r.end; ++y) {
                                for (int xx = cw.begin; xx < cw.end; ++xx) plane[static_cast<std::size_t>(y) * w + xx] += share;
                              }
                            }
                          }
                        }
                      });
}

}  // namespace

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseKind kind) {
  require_same_shape(a.shape, b.shape, "elementwise");
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  switch (kind) {
    case ElementwiseKind::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = a.data[i] + b.data[i];
      break;
    case ElementwiseKind::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a.data[i] - b.data[i];
      break;
    case ElementwiseKind::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a.data[i] * b.data[i];
      break;
    case ElementwiseKind::Div:
      for (std::size_t i = 0; i < n; ++i) {
        require(b.data[i] != T(0), ErrorKind::DivisionByZero, "elementwise div by zero");
        out[i] = a.data[i] / b.data[i];
      }
      break;
  }
  const int an = a.node, bn = b.node;
  const bool need_values = kind == ElementwiseKind::Mul || kind == ElementwiseKind::Div;
  std::vector<T> av = need_values && (a.tracked() || b.tracked()) ? a.data : std::vector<T>{};
  std::vector<T> bv = need_values && (a.tracked() || b.tracked()) ? b.data : std::vector<T>{};
  const OpKind op = kind == ElementwiseKind::Add   ? OpKind::Add
                    : kind == ElementwiseKind::Sub ? OpKind::Sub
                    : kind == ElementwiseKind::Mul ? OpKind::Mul
                                                   : OpKind::Div;
  return record_op<T>(op, a.shape, std::move(out), {&a, &b},
                      [an, bn, kind, av = std::move(av), bv = std::move(bv)](std::span<const T> g, Tape<T>& tape) {
                        auto ga = tape.grad_slot(an);
                        auto gb = tape.grad_slot(bn);
                        const std::size_t n = g.size();
                        switch (kind) {
                          case ElementwiseKind::Add:
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
                            break;
                          case ElementwiseKind::Sub:
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                            break;
                          case ElementwiseKind::Mul:
                            if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
                            if (!gb.empty()) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
                            break;
                          case ElementwiseKind::Div:
                            if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bv[i];
                            if (!gb.empty())
                              for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                            break;
                        }
                      });
}

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, T b, ElementwiseKind kind) {
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  switch (kind) {
    case ElementwiseKind::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = a.data[i] + b;
      break;
    case ElementwiseKind::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a.data[i] - b;
      break;
    case ElementwiseKind::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a.data[i] * b;
      break;
    case ElementwiseKind::Div:
      require(b != T(0), ErrorKind::DivisionByZero, "elementwise div by zero scalar");
      for (std::size_t i = 0; i < n; ++i) out[i] = a.data[i] / b;
      break;
  }
  const int an = a.node;
  const OpKind op = kind == ElementwiseKind::Mul   ? OpKind::ScalarMul
                    : kind == ElementwiseKind::Div ? OpKind::ScalarDiv
                                                   : OpKind::ScalarAdd;
  return record_op<T>(op, a.shape, std::move(out), {&a}, [an, b, kind](std::span<const T> g, Tape<T>& tape) {
    auto ga = tape.grad_slot(an);
    if (ga.empty()) return;
    switch (kind) {
      case ElementwiseKind::Add:
      case ElementwiseKind::Sub:
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        break;
      case ElementwiseKind::Mul:
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b;
        break;
      case ElementwiseKind::Div:
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / b;
        break;
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape, 2, "matmul");
  require_rank(b.shape, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorKind::ShapeMismatch,
          "matmul inner dimensions: " + shape_string(a.shape) + " . " + shape_string(b.shape));
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  gemm_ikj(a.data.data(), b.data.data(), out.data(), m, k, n);

  const int an = a.node, bn = b.node;
  std::vector<T> av = b.tracked() ? a.data : std::vector<T>{};
  std::vector<T> bv = a.tracked() ? b.data : std::vector<T>{};
  return record_op<T>(OpKind::Matmul, {m, n}, std::move(out), {&a, &b},
                      [an, bn, m, k, n, av = std::move(av), bv = std::move(bv)](std::span<const T> g, Tape<T>& tape) {
                        auto ga = tape.grad_slot(an);
                        auto gb = tape.grad_slot(bn);
                        if (!ga.empty()) {
                          // dA[i][kk] += sum_j g[i][j] * b[kk][j]
                          for (int i = 0; i < m; ++i) {
                            const T* grow = g.data() + static_cast<std::size_t>(i) * n;
                            for (int kk = 0; kk < k; ++kk) {
                              const T* brow = bv.data() + static_cast<std::size_t>(kk) * n;
                              T acc = T(0);
                              for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                              ga[static_cast<std::size_t>(i) * k + kk] += acc;
                            }
                          }
                        }
                        if (!gb.empty()) {
                          // dB[kk][j] += sum_i a[i][kk] * g[i][j]
                          for (int i = 0; i < m; ++i) {
                            const T* arow = av.data() + static_cast<std::size_t>(i) * k;
                            const T* grow = g.data() + static_cast<std::size_t>(i) * n;
                            for (int kk = 0; kk < k; ++kk) {
                              const T s = arow[kk];
                              T* brow = gb.data() + static_cast<std::size_t>(kk) * n;
                              for (int j = 0; j < n; ++j) brow[j] += s * grow[j];
                            }
                          }
                        }
                      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.shape, 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = a.data[static_cast<std::size_t>(i) * n + j];
  const int an = a.node;
  return record_op<T>(OpKind::Transpose, {n, m}, std::move(out), {&a}, [an, m, n](std::span<const T> g, Tape<T>& tape) {
    auto ga = tape.grad_slot(an);
    if (ga.empty()) return;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), ErrorKind::ShapeMismatch,
          "reshape " + shape_string(a.shape) + " -> " + shape_string(shape));
  const int an = a.node;
  return record_op<T>(OpKind::Reshape, std::move(shape), a.data, {&a}, [an](std::span<const T> g, Tape<T>& tape) {
    auto ga = tape.grad_slot(an);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  require_rank(a.shape, 2, "softmax_rows");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.numel());
  for (int i = 0; i < m; ++i) {
    const T* row = a.data.data() + static_cast<std::size_t>(i) * n;
    T* orow = out.data() + static_cast<std::size_t>(i) * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < n; ++j) {
      require(std::isfinite(row[j]), ErrorKind::NonFiniteInput, "softmax_rows input is not finite");
      mx = std::max(mx, row[j]);
    }
    T total = T(0);
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= total;
  }
  const int an = a.node;
  std::vector<T> y = a.tracked() ? out : std::vector<T>{};
  return record_op<T>(OpKind::SoftmaxRows, a.shape, std::move(out), {&a},
                      [an, m, n, y = std::move(y)](std::span<const T> g, Tape<T>& tape) {
                        auto ga = tape.grad_slot(an);
                        if (ga.empty()) return;
                        for (int i = 0; i < m; ++i) {
                          const std::size_t off = static_cast<std::size_t>(i) * n;
                          T dot = T(0);
                          for (int j = 0; j < n; ++j) dot += g[off + j] * y[off + j];
                          for (int j = 0; j < n; ++j) ga[off + j] += y[off + j] * (g[off + j] - dot);
                        }
                      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x.shape, 3, "conv2d input");
  require_rank(w.shape, 4, "conv2d weight");
  require_rank(b.shape, 1, "conv2d bias");
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
  require(w.dim(1) == cin && w.dim(2) == 3 && w.dim(3) == 3 && b.dim(0) == cout, ErrorKind::ShapeMismatch,
          "conv2d: input " + shape_string(x.shape) + ", weight " + shape_string(w.shape) + ", bias " +
              shape_string(b.shape));
  const int hw = h * wd, kdim = cin * 9;
  std::vector<T> cols(static_cast<std::size_t>(kdim) * hw);
  im2col3x3(x.data.data(), cin, h, wd, cols.data());

  std::vector<T> out(static_cast<std::size_t>(cout) * hw);
  {
    const RowMat<T> o = owned(w.data.data(), cout, kdim) * owned(cols.data(), kdim, hw);
    store(o, out.data(), false);
    for (int co = 0; co < cout; ++co) {
      T* row = out.data() + static_cast<std::size_t>(co) * hw;
      for (int j = 0; j < hw; ++j) row[j] += b.data[static_cast<std::size_t>(co)];
    }
  }

  const int xn = x.node, wn = w.node, bn = b.node;
  std::vector<T> saved_cols = w.tracked() ? std::move(cols) : std::vector<T>{};
  std::vector<T> saved_w = x.tracked() ? w.data : std::vector<T>{};
  return record_op<T>(
      OpKind::Conv2d, {cout, h, wd}, std::move(out), {&x, &w, &b},
      [xn, wn, bn, cin, h, wd, cout, hw, kdim, cols = std::move(saved_cols), wv = std::move(saved_w)](
          std::span<const T> g, Tape<T>& tape) {
        const RowMat<T> gm = owned(g.data(), cout, hw);
        if (auto gb = tape.grad_slot(bn); !gb.empty()) {
          for (int co = 0; co < cout; ++co) gb[static_cast<std::size_t>(co)] += row_sum(g.data(), co, hw);
        }
        if (auto gw = tape.grad_slot(wn); !gw.empty()) {
          store<T>(gm * owned(cols.data(), kdim, hw).transpose(), gw.data(), true);
        }
        if (auto gx = tape.grad_slot(xn); !gx.empty()) {
          const RowMat<T> dcols = owned(wv.data(), cout, kdim).transpose() * gm;
          col2im3x3(dcols.data(), cin, h, wd, gx.data());
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(w.shape, 2, "linear weight");
  require_rank(b.shape, 1, "linear bias");
  const int din = w.dim(0), dout = w.dim(1);
  require(x.shape.back() == din && b.dim(0) == dout, ErrorKind::ShapeMismatch,
          "linear: input " + shape_string(x.shape) + ", weight " + shape_string(w.shape) + ", bias " +
              shape_string(b.shape));
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(din));
  Shape out_shape = x.shape;
  out_shape.back() = dout;
  std::vector<T> out(static_cast<std::size_t>(rows) * dout);
  {
    store<T>(owned(x.data.data(), rows, din) * owned(w.data.data(), din, dout), out.data(), false);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < dout; ++j) out[static_cast<std::size_t>(r) * dout + j] += b.data[static_cast<std::size_t>(j)];
  }
  const int xn = x.node, wn = w.node, bn = b.node;
  std::vector<T> xv = w.tracked() ? x.data : std::vector<T>{};
  std::vector<T> wv = x.tracked() ? w.data : std::vector<T>{};
  return record_op<T>(OpKind::Linear, std::move(out_shape), std::move(out), {&x, &w, &b},
                      [xn, wn, bn, rows, din, dout, xv = std::move(xv), wv = std::move(wv)](std::span<const T> g,
                                                                                           Tape<T>& tape) {
                        const RowMat<T> gm = owned(g.data(), rows, dout);
                        if (auto gb = tape.grad_slot(bn); !gb.empty()) {
                          for (int r = 0; r < rows; ++r)
                            for (int j = 0; j < dout; ++j)
                              gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(r) * dout + j];
                        }
                        if (auto gw = tape.grad_slot(wn); !gw.empty()) {
                          store<T>(owned(xv.data(), rows, din).transpose() * gm, gw.data(), true);
                        }
                        if (auto gx = tape.grad_slot(xn); !gx.empty()) {
                          store<T>(gm * owned(wv.data(), din, dout).transpose(), gx.data(), true);
                        }
                      });
}

template <typename T>
Tensor<T> channel_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(w.shape, 2, "channel_linear weight");
  require_rank(b.shape, 1, "channel_linear bias");
  const int cin = w.dim(0), cout = w.dim(1);
  require(x.dim(0) == cin && b.dim(0) == cout, ErrorKind::ShapeMismatch,
          "channel_linear: input " + shape_string(x.shape) + ", weight " + shape_string(w.shape) + ", bias " +
              shape_string(b.shape));
  const int n = static_cast<int>(x.numel() / static_cast<std::size_t>(cin));
  Shape out_shape = x.shape;
  out_shape.front() = cout;
  std::vector<T> out(static_cast<std::size_t>(cout) * n);
  {
    store<T>(owned(w.data.data(), cin, cout).transpose() * owned(x.data.data(), cin, n), out.data(), false);
    for (int co = 0; co < cout; ++co) {
      T* row = out.data() + static_cast<std::size_t>(co) * n;
      for (int j = 0; j < n; ++j) row[j] += b.data[static_cast<std::size_t>(co)];
    }
  }
  const int xn = x.node, wn = w.node, bn = b.node;
  std::vector<T> xv = w.tracked() ? x.data : std::vector<T>{};
  std::vector<T> wv = x.tracked() ? w.data : std::vector<T>{};
  return record_op<T>(OpKind::ChannelLinear, std::move(out_shape), std::move(out), {&x, &w, &b},
                      [xn, wn, bn, n, cin, cout, xv = std::move(xv), wv = std::move(wv)](std::span<const T> g,
                                                                                        Tape<T>& tape) {
                        const RowMat<T> gm = owned(g.data(), cout, n);
                        if (auto gb = tape.grad_slot(bn); !gb.empty()) {
                          for (int co = 0; co < cout; ++co) gb[static_cast<std::size_t>(co)] += row_sum(g.data(), co, n);
                        }
                        if (auto gw = tape.grad_slot(wn); !gw.empty()) {
                          store<T>(owned(xv.data(), cin, n) * gm.transpose(), gw.data(), true);
                        }
                        if (auto gx = tape.grad_slot(xn); !gx.empty()) {
                          store<T>(owned(wv.data(), cin, cout) * gm, gx.data(), true);
                        }
                      });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data[i] * sigmoid(x.data[i]);
  const int xn = x.node;
  std::vector<T> xv = x.tracked() ? x.data : std::vector<T>{};
  return record_op<T>(OpKind::Silu, x.shape, std::move(out), {&x}, [xn, xv = std::move(xv)](std::span<const T> g, Tape<T>& tape) {
    auto gx = tape.grad_slot(xn);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T s = sigmoid(xv[i]);
      gx[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int out_h, int out_w) {
  require_rank(x.shape, 3, "adaptive_avg_pool2d");
  require(out_h >= 1 && out_w >= 1 && out_h <= x.dim(1) && out_w <= x.dim(2), ErrorKind::InvalidTargetSize,
          "adaptive_avg_pool2d target " + std::to_string(out_h) + "x" + std::to_string(out_w) + " for input " +
              shape_string(x.shape));
  return pool_impl(x, out_h, out_w);
}

template <typename T>
Tensor<T> adaptive_avg_resize(const Tensor<T>& x, int out_h, int out_w) {
  require_rank(x.shape, 3, "adaptive_avg_resize");
  require(out_h >= 1 && out_w >= 1, ErrorKind::InvalidTargetSize,
          "adaptive_avg_resize target " + std::to_string(out_h) + "x" + std::to_string(out_w));
  return pool_impl(x, out_h, out_w);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data) acc += v;
  const int xn = x.node;
  return record_op<T>(OpKind::Sum, {1}, std::vector<T>{acc}, {&x}, [xn](std::span<const T> g, Tape<T>& tape) {
    auto gx = tape.grad_slot(xn);
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> concat0(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == b.rank() && std::equal(a.shape.begin() + 1, a.shape.end(), b.shape.begin() + 1),
          ErrorKind::ShapeMismatch, "concat0: " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  Shape shape = a.shape;
  shape[0] += b.dim(0);
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data.begin(), a.data.end());
  out.insert(out.end(), b.data.begin(), b.data.end());
  const int an = a.node, bn = b.node;
  const std::size_t na = a.numel();
  return record_op<T>(OpKind::Concat, std::move(shape), std::move(out), {&a, &b},
                      [an, bn, na](std::span<const T> g, Tape<T>& tape) {
                        auto ga = tape.grad_slot(an);
                        auto gb = tape.grad_slot(bn);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                      });
}

template <typename T>
Tensor<T> slice0(const Tensor<T>& x, int begin, int end) {
  require(begin >= 0 && end <= x.dim(0) && begin < end, ErrorKind::IndexOutOfRange,
          "slice0 [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_string(x.shape));
  const std::size_t stride = x.numel() / static_cast<std::size_t>(x.dim(0));
  Shape shape = x.shape;
  shape[0] = end - begin;
  const std::size_t off = static_cast<std::size_t>(begin) * stride;
  std::vector<T> out(x.data.begin() + static_cast<std::ptrdiff_t>(off),
                     x.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(end) * stride));
  const int xn = x.node;
  return record_op<T>(OpKind::Slice, std::move(shape), std::move(out), {&x}, [xn, off](std::span<const T> g, Tape<T>& tape) {
    auto gx = tape.grad_slot(xn);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  });
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int n_heads) {
  require_rank(x.shape, 2, "split_heads");
  const int n = x.dim(0), d = x.dim(1);
  require(n_heads >= 1 && d % n_heads == 0, ErrorKind::IndivisibleHeads,
          "embedding dim " + std::to_string(d) + " is not divisible by " + std::to_string(n_heads) + " heads");
  const int hd = d / n_heads;
  std::vector<T> out(x.numel());
  for (int h = 0; h < n_heads; ++h)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < hd; ++c)
        out[(static_cast<std::size_t>(h) * n + i) * hd + c] = x.data[static_cast<std::size_t>(i) * d + h * hd + c];
  const int xn = x.node;
  return record_op<T>(OpKind::SplitHeads, {n_heads, n, hd}, std::move(out), {&x},
                      [xn, n_heads, n, hd, d](std::span<const T> g, Tape<T>& tape) {
                        auto gx = tape.grad_slot(xn);
                        if (gx.empty()) return;
                        for (int h = 0; h < n_heads; ++h)
                          for (int i = 0; i < n; ++i)
                            for (int c = 0; c < hd; ++c)
                              gx[static_cast<std::size_t>(i) * d + h * hd + c] +=
                                  g[(static_cast<std::size_t>(h) * n + i) * hd + c];
                      });
}

#define JAFAR_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> elementwise(const Tensor<T>&, const Tensor<T>&, ElementwiseKind);     \
  template Tensor<T> elementwise(const Tensor<T>&, T, ElementwiseKind);                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose(const Tensor<T>&);                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                       \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> channel_linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> activation(const Tensor<T>&);                                         \
  template Tensor<T> adaptive_avg_pool2d(const Tensor<T>&, int, int);                      \
  template Tensor<T> adaptive_avg_resize(const Tensor<T>&, int, int);                      \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> mean(const Tensor<T>&);                                               \
  template Tensor<T> concat0(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> slice0(const Tensor<T>&, int, int);                                   \
  template Tensor<T> split_heads(const Tensor<T>&, int);

JAFAR_INSTANTIATE_OPS(float)
JAFAR_INSTANTIATE_OPS(double)

}  // namespace jafar
