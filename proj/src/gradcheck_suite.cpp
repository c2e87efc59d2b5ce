#include "jafar/gradcheck_suite.hpp"

#include "jafar/model.hpp"
#include "jafar/nn_blocks.hpp"
#include "jafar/ops.hpp"
#include "jafar/training.hpp"

namespace jafar {
namespace {

Tensor<float> normal_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(scale * rng.normal());
  return t;
}

// Values in +-[0.5, 1.5], safely away from zero for division.
Tensor<float> away_from_zero(Rng& rng, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>((rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5));
  return t;
}

// sum(weights * y) with weights fixed per case.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& y, const Tensor<float>& weights) {
  return sum(mul(y, weights.cast<T>()));
}

}  // namespace

template <typename T>
Tensor<T> sign_flipped_square(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data[i] * x.data[i];
  const int xn = x.node;
  std::vector<T> xv = x.data;
  return record_op<T>(OpKind::Custom, x.shape, std::move(out), {&x}, [xn, xv](std::span<const T> g, Tape<T>& tape) {
    auto gx = tape.grad_slot(xn);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= T(2) * xv[i] * g[i];
  });
}

template Tensor<float> sign_flipped_square(const Tensor<float>&);
template Tensor<double> sign_flipped_square(const Tensor<double>&);

std::vector<GradCase> op_gradient_cases(uint64_t seed) {
  Rng rng(seed * 7919 + 1);
  std::vector<GradCase> cases;

  auto unary = [&](std::string name, Shape in, Shape out, auto op) {
    auto w = normal_tensor(rng, std::move(out));
    cases.push_back({std::move(name), make_dual([w, op](auto& p) { return weighted_sum(op(p[0]), w); }),
                     {{"x", normal_tensor(rng, std::move(in))}}});
  };
  auto binary = [&](std::string name, Tensor<float> a, Tensor<float> b, Shape out, auto op) {
    auto w = normal_tensor(rng, std::move(out));
    cases.push_back({std::move(name), make_dual([w, op](auto& p) { return weighted_sum(op(p[0], p[1]), w); }),
                     {{"a", std::move(a)}, {"b", std::move(b)}}});
  };

  binary("add", normal_tensor(rng, {3, 4}), normal_tensor(rng, {3, 4}), {3, 4},
         [](const auto& a, const auto& b) { return add(a, b); });
  binary("sub", normal_tensor(rng, {3, 4}), normal_tensor(rng, {3, 4}), {3, 4},
         [](const auto& a, const auto& b) { return sub(a, b); });
  binary("mul", normal_tensor(rng, {3, 4}), normal_tensor(rng, {3, 4}), {3, 4},
         [](const auto& a, const auto& b) { return mul(a, b); });
  binary("div", normal_tensor(rng, {3, 4}), away_from_zero(rng, {3, 4}), {3, 4},
         [](const auto& a, const auto& b) { return div(a, b); });
  unary("scalar_ops", {5}, {5}, [](const auto& x) {
    using T = typename std::decay_t<decltype(x.data)>::value_type;
    return elementwise(elementwise(mul(add(x, T(0.5)), T(-1.5)), T(2), ElementwiseKind::Div), T(1),
                       ElementwiseKind::Sub);
  });
  binary("matmul", normal_tensor(rng, {4, 5}), normal_tensor(rng, {5, 3}), {4, 3},
         [](const auto& a, const auto& b) { return matmul(a, b); });
  unary("transpose", {3, 5}, {5, 3}, [](const auto& x) { return transpose(x); });
  unary("softmax_rows", {3, 4}, {3, 4}, [](const auto& x) { return softmax_rows(x); });
  unary("activation", {2, 3, 3}, {2, 3, 3}, [](const auto& x) { return activation(x); });
  unary("adaptive_avg_pool2d", {2, 7, 5}, {2, 3, 2}, [](const auto& x) { return adaptive_avg_pool2d(x, 3, 2); });
  unary("concat_slice", {4, 3}, {5, 3}, [](const auto& x) { return concat0(slice0(x, 1, 3), slice0(x, 0, 3)); });
  unary("split_heads", {3, 8}, {2, 3, 4}, [](const auto& x) { return split_heads(x, 2); });

  {
    auto w = normal_tensor(rng, {3, 5, 5});
    cases.push_back({"conv2d",
                     make_dual([w](auto& p) { return weighted_sum(conv2d(p[0], p[1], p[2]), w); }),
                     {{"x", normal_tensor(rng, {2, 5, 5})},
                      {"w", normal_tensor(rng, {3, 2, 3, 3}, 0.5)},
                      {"b", normal_tensor(rng, {3})}}});
  }
  {
    auto w = normal_tensor(rng, {2, 3, 2});
    cases.push_back({"linear",
                     make_dual([w](auto& p) { return weighted_sum(linear(p[0], p[1], p[2]), w); }),
                     {{"x", normal_tensor(rng, {2, 3, 4})}, {"w", normal_tensor(rng, {4, 2})}, {"b", normal_tensor(rng, {2})}}});
  }
  {
    auto w = normal_tensor(rng, {2, 3, 3});
    cases.push_back({"channel_linear",
                     make_dual([w](auto& p) { return weighted_sum(channel_linear(p[0], p[1], p[2]), w); }),
                     {{"x", normal_tensor(rng, {4, 3, 3})}, {"w", normal_tensor(rng, {4, 2})}, {"b", normal_tensor(rng, {2})}}});
  }
  {
    const auto positions = grid_positions(2, 3);
    auto w = normal_tensor(rng, {2, 6, 8});
    cases.push_back({"rope_apply",
                     make_dual([w, positions](auto& p) {
                       return weighted_sum(rope_apply(p[0], positions, RopeConfig{8, 100.0}), w);
                     }),
                     {{"x", normal_tensor(rng, {2, 6, 8})}}});
  }
  {
    auto w = normal_tensor(rng, {4, 2, 3});
    cases.push_back({"sft_modulate",
                     make_dual([w](auto& p) {
                       using T = typename std::decay_t<decltype(p[0].data)>::value_type;
                       SftParams<T> sft{p[2], p[3], p[4], p[5]};
                       return weighted_sum(sft_modulate(p[0], p[1], sft), w);
                     }),
                     {{"k_tilde", normal_tensor(rng, {4, 2, 3})},
                      {"f_lr", normal_tensor(rng, {3, 2, 3})},
                      {"gamma_w", normal_tensor(rng, {3, 4}, 0.5)},
                      {"gamma_b", normal_tensor(rng, {4})},
                      {"beta_w", normal_tensor(rng, {3, 4}, 0.5)},
                      {"beta_b", normal_tensor(rng, {4})}}});
  }
  {
    // 2 queries attending over 3 keys with d = 4, one head.
    auto w = normal_tensor(rng, {2, 3});
    cases.push_back({"attention_toy",
                     make_dual([w](auto& p) {
                       return weighted_sum(attention_kernel(p[0], p[1], 1, RopeConfig{4, 100.0}).a, w);
                     }),
                     {{"q", normal_tensor(rng, {4, 1, 2})}, {"k", normal_tensor(rng, {4, 1, 3})}}});
  }
  {
    auto w = normal_tensor(rng, {3, 4, 4});
    cases.push_back({"attention_multihead_apply",
                     make_dual([w](auto& p) {
                       auto kernel = attention_kernel(p[0], p[1], 2, RopeConfig{4, 100.0});
                       return weighted_sum(kernel_apply(kernel, p[2]), w);
                     }),
                     {{"q", normal_tensor(rng, {8, 4, 4})},
                      {"k", normal_tensor(rng, {8, 2, 2})},
                      {"f_lr", normal_tensor(rng, {3, 2, 2})}}});
  }
  cases.push_back({"loss_cos_l2", make_dual([](auto& p) { return loss_cos_l2(p[0], p[1]); }),
                   {{"pred", normal_tensor(rng, {4, 3, 3})}, {"target", normal_tensor(rng, {4, 3, 3})}}});
  return cases;
}

GradCase composite_gradient_case(uint64_t seed, const std::string& key_strategy) {
  Rng rng(seed * 104729 + 3);
  ModelConfig cfg;
  cfg.feature_channels = 3;
  cfg.d = 8;
  cfg.n_heads = 2;
  cfg.key_strategy = parse_key_strategy(key_strategy);
  const JafarParams init = init_params(rng, cfg);

  Tensor<float> guidance({3, 16, 16});
  for (auto& v : guidance.data) v = static_cast<float>(rng.uniform());
  const Tensor<float> f_lr = normal_tensor(rng, {3, 2, 2});
  const Tensor<float> target = normal_tensor(rng, {3, 4, 4});

  GradCase c;
  c.name = "composite_" + key_strategy;
  c.params = init.named();
  c.fn = make_dual([cfg, guidance, f_lr, target](auto& p) {
    using T = typename std::decay_t<decltype(p)>::value_type::value_type;
    const auto w = weights_from_list<T>(cfg, p);
    const Tensor<T> pred = forward_graph(cfg, w, guidance.cast<T>(), f_lr.cast<T>(), 4, 4);
    return loss_cos_l2(pred, target.cast<T>());
  });
  return c;
}

}  // namespace jafar
