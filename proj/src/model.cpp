#include "jafar/model.hpp"

#include <algorithm>
#include <cmath>

#include "jafar/ops.hpp"

namespace jafar {
namespace {

bool uses_key_encoder(KeyStrategy s) { return s != KeyStrategy::LinearProjection; }

template <typename T>
void check_strategy(const ModelConfig& cfg, const JafarWeights<T>& w) {
  const bool has_key = !w.key_w.empty();
  const bool has_sft = !w.gamma_w.empty() && !w.beta_w.empty();
  const bool has_proj = !w.key_proj_w.empty();
  bool ok = true;
  switch (cfg.key_strategy) {
    case KeyStrategy::Sft: ok = has_key && has_sft && !has_proj; break;
    case KeyStrategy::NoSft: ok = has_key && !has_sft && !has_proj; break;
    case KeyStrategy::Concat: ok = has_key && !has_sft && has_proj; break;
    case KeyStrategy::LinearProjection: ok = !has_key && !has_sft && has_proj; break;
  }
  if (!ok) {
    fail(ErrorKind::StrategyMismatch,
         "weights do not match key strategy " + std::string(to_string(cfg.key_strategy)));
  }
}

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return activation(conv2d(x, w, b));
}

FeatureMap tokens_to_feature_map(const Tensor<float>& cols, int c, int h, int w) {
  FeatureMap out(c, h, w);
  out.data = cols.data;
  return out;
}

}  // namespace

std::string_view to_string(KeyStrategy s) {
  switch (s) {
    case KeyStrategy::Sft: return "sft";
    case KeyStrategy::NoSft: return "no_sft";
    case KeyStrategy::Concat: return "concat";
    case KeyStrategy::LinearProjection: return "linear_projection";
  }
  return "unknown";
}

KeyStrategy parse_key_strategy(std::string_view s) {
  if (s == "sft") return KeyStrategy::Sft;
  if (s == "no_sft") return KeyStrategy::NoSft;
  if (s == "concat") return KeyStrategy::Concat;
  if (s == "linear_projection") return KeyStrategy::LinearProjection;
  fail(ErrorKind::InvalidConfig, "unknown key strategy '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (feature_channels < 1 || d < 1) fail(ErrorKind::InvalidConfig, "feature_channels and d must be positive");
  if (n_heads < 1 || d % n_heads != 0) {
    fail(ErrorKind::IndivisibleHeads, "d=" + std::to_string(d) + " is not divisible by n_heads=" + std::to_string(n_heads));
  }
  rope().validate();
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
  const int d = cfg.d, c = cfg.feature_channels;
  std::vector<std::pair<std::string, Shape>> layout{
      {"in.weight", {3, d}},          {"in.bias", {d}},
      {"encoder.0.weight", {d, d, 3, 3}}, {"encoder.0.bias", {d}},
      {"encoder.1.weight", {d, d, 3, 3}}, {"encoder.1.bias", {d}},
      {"query.weight", {d, d, 3, 3}},     {"query.bias", {d}},
  };
  if (uses_key_encoder(cfg.key_strategy)) {
    layout.push_back({"key.weight", {d, d, 3, 3}});
    layout.push_back({"key.bias", {d}});
  }
  switch (cfg.key_strategy) {
    case KeyStrategy::Sft:
      layout.push_back({"sft.gamma.weight", {c, d}});
      layout.push_back({"sft.gamma.bias", {d}});
      layout.push_back({"sft.beta.weight", {c, d}});
      layout.push_back({"sft.beta.bias", {d}});
      break;
    case KeyStrategy::Concat:
      layout.push_back({"key_proj.weight", {d + c, d}});
      layout.push_back({"key_proj.bias", {d}});
      break;
    case KeyStrategy::LinearProjection:
      layout.push_back({"key_proj.weight", {c, d}});
      layout.push_back({"key_proj.bias", {d}});
      break;
    case KeyStrategy::NoSft:
      break;
  }
  return layout;
}

std::size_t JafarParams::parameter_count() const {
  std::size_t n = 0;
  weights.visit([&](std::string_view, const Tensor<float>& t) { n += t.numel(); });
  return n;
}

std::vector<NamedTensor> JafarParams::named() const {
  std::vector<NamedTensor> out;
  weights.visit([&](std::string_view name, const Tensor<float>& t) { out.push_back({std::string(name), t.detached()}); });
  return out;
}

void JafarParams::assign(const std::vector<NamedTensor>& tensors) {
  const auto layout = parameter_layout(config);
  if (tensors.size() != layout.size()) {
    fail(ErrorKind::StrategyMismatch, "expected " + std::to_string(layout.size()) + " parameter tensors for strategy " +
                                          std::string(to_string(config.key_strategy)) + ", got " +
                                          std::to_string(tensors.size()));
  }
  JafarWeights<float> w;
  std::size_t i = 0;
  for (const auto& [name, shape] : layout) {
    const NamedTensor& t = tensors[i++];
    if (t.name != name || t.value.shape != shape) {
      fail(ErrorKind::ShapeMismatch, "parameter " + t.name + " " + shape_string(t.value.shape) + " does not match " +
                                         name + " " + shape_string(shape));
    }
    *w.find(name) = t.value.detached();
  }
  weights = std::move(w);
}

template <typename T>
JafarWeights<T> weights_from_list(const ModelConfig& cfg, const std::vector<Tensor<T>>& tensors) {
  const auto layout = parameter_layout(cfg);
  if (tensors.size() != layout.size()) {
    fail(ErrorKind::StrategyMismatch, "expected " + std::to_string(layout.size()) + " tensors, got " +
                                          std::to_string(tensors.size()));
  }
  JafarWeights<T> w;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tensors[i].shape != layout[i].second) {
      fail(ErrorKind::ShapeMismatch, layout[i].first + ": " + shape_string(tensors[i].shape) + " vs " +
                                         shape_string(layout[i].second));
    }
    *w.find(layout[i].first) = tensors[i];
  }
  return w;
}

JafarParams init_params(Rng& rng, const ModelConfig& cfg) {
  cfg.validate();
  JafarParams p;
  p.config = cfg;
  std::vector<NamedTensor> tensors;
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    Tensor<float> t(shape, 0.0f);
    const bool is_bias = shape.size() == 1;
    if (!is_bias) {
      const int fan_in = shape.size() == 4 ? shape[1] * 9 : shape[0];
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.data) v = static_cast<float>(stddev * rng.normal());
    } else if (name == "sft.gamma.bias") {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    }
    tensors.push_back({name, std::move(t)});
  }
  p.assign(tensors);
  return p;
}

JafarParams init_params(Rng& rng, int c_in_features, int d, int n_heads, KeyStrategy strategy) {
  ModelConfig cfg;
  cfg.feature_channels = c_in_features;
  cfg.d = d;
  cfg.n_heads = n_heads;
  cfg.key_strategy = strategy;
  return init_params(rng, cfg);
}

template <typename T>
QueryKeyStage<T> build_queries_keys(const ModelConfig& cfg, const JafarWeights<T>& w, const Tensor<T>& guidance,
                                    const Tensor<T>& f_lr, int out_h, int out_w) {
  cfg.validate();
  check_strategy(cfg, w);
  if (guidance.rank() != 3 || guidance.dim(0) != 3) {
    fail(ErrorKind::ShapeMismatch, "guidance must be [3 x H x W], got " + shape_string(guidance.shape));
  }
  if (f_lr.rank() != 3 || f_lr.dim(0) != cfg.feature_channels) {
    fail(ErrorKind::ShapeMismatch, "features " + shape_string(f_lr.shape) + " do not have the model's " +
                                       std::to_string(cfg.feature_channels) + " channels");
  }
  if (out_h < 1 || out_w < 1) {
    fail(ErrorKind::InvalidTargetSize, "output grid " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const int d = cfg.d, key_h = f_lr.dim(1), key_w = f_lr.dim(2);

  const Tensor<T> image_embed = channel_linear(guidance, w.in_w, w.in_b);
  const Tensor<T> encoded = conv_block(conv_block(image_embed, w.enc1_w, w.enc1_b), w.enc2_w, w.enc2_b);
  const Tensor<T> q = adaptive_avg_resize(conv_block(encoded, w.query_w, w.query_b), out_h, out_w);

  Tensor<T> k;
  if (cfg.key_strategy == KeyStrategy::LinearProjection) {
    k = channel_linear(f_lr, w.key_proj_w, w.key_proj_b);
  } else {
    const Tensor<T> k_tilde = adaptive_avg_resize(conv_block(encoded, w.key_w, w.key_b), key_h, key_w);
    switch (cfg.key_strategy) {
      case KeyStrategy::Sft: k = sft_modulate(k_tilde, f_lr, SftParams<T>{w.gamma_w, w.gamma_b, w.beta_w, w.beta_b}); break;
      case KeyStrategy::NoSft: k = k_tilde; break;
      case KeyStrategy::Concat: k = channel_linear(concat0(k_tilde, f_lr), w.key_proj_w, w.key_proj_b); break;
      case KeyStrategy::LinearProjection: break;
    }
  }
  QueryKeyStage<T> stage;
  stage.queries = transpose(reshape(q, {d, out_h * out_w}));
  stage.keys = transpose(reshape(k, {d, key_h * key_w}));
  stage.out_h = out_h;
  stage.out_w = out_w;
  stage.key_h = key_h;
  stage.key_w = key_w;
  return stage;
}

template <typename T>
Tensor<T> forward_graph(const ModelConfig& cfg, const JafarWeights<T>& w, const Tensor<T>& guidance,
                        const Tensor<T>& f_lr, int out_h, int out_w) {
  const QueryKeyStage<T> s = build_queries_keys(cfg, w, guidance, f_lr, out_h, out_w);
  const auto q_pos = grid_positions(out_h, out_w);
  const auto k_pos = grid_positions(s.key_h, s.key_w);
  const Tensor<T> a = attention_rows(s.queries, q_pos, s.keys, k_pos, cfg.n_heads, cfg.rope());
  return reshape(apply_kernel_rows(a, f_lr), {f_lr.dim(0), out_h, out_w});
}

FeatureMap upsample_tiled(const JafarParams& p, const UpsampleRequest& req, int tile_rows, KernelStats* stats) {
  if (tile_rows < 1) fail(ErrorKind::InvalidConfig, "tile_rows must be >= 1");
  const Tensor<float> guidance = req.guidance.to_tensor<float>();
  const Tensor<float> f_lr = req.f_lr.to_tensor<float>();
  const QueryKeyStage<float> s = build_queries_keys(p.config, p.weights, guidance, f_lr, req.out_h, req.out_w);
  const auto k_pos = grid_positions(s.key_h, s.key_w);
  const int c = f_lr.dim(0), ow = req.out_w;

  FeatureMap out(c, req.out_h, req.out_w);
  const std::size_t n_out = static_cast<std::size_t>(req.out_h) * ow;
  for (int r0 = 0; r0 < req.out_h; r0 += tile_rows) {
    const int r1 = std::min(req.out_h, r0 + tile_rows);
    const Tensor<float> q_tile = slice0(s.queries, r0 * ow, r1 * ow);
    const auto q_pos = grid_positions(req.out_h, ow, r0, r1);
    const Tensor<float> a = attention_rows(q_tile, q_pos, s.keys, k_pos, p.config.n_heads, p.config.rope(), stats);
    const Tensor<float> tile = apply_kernel_rows(a, f_lr);  // [C x tile_n]
    const std::size_t tile_n = static_cast<std::size_t>(r1 - r0) * ow;
    const std::size_t offset = static_cast<std::size_t>(r0) * ow;
    for (int ch = 0; ch < c; ++ch) {
      std::copy_n(tile.data.begin() + static_cast<std::ptrdiff_t>(ch * tile_n), tile_n,
                  out.data.begin() + static_cast<std::ptrdiff_t>(ch * n_out + offset));
    }
  }
  return out;
}

FeatureMap forward(const JafarParams& p, const UpsampleRequest& req) {
  return upsample_tiled(p, req, std::max(1, req.out_h));
}

AttentionKernel<float> full_attention_kernel(const JafarParams& p, const UpsampleRequest& req) {
  const Tensor<float> guidance = req.guidance.to_tensor<float>();
  const Tensor<float> f_lr = req.f_lr.to_tensor<float>();
  const QueryKeyStage<float> s = build_queries_keys(p.config, p.weights, guidance, f_lr, req.out_h, req.out_w);
  AttentionKernel<float> k;
  k.a = attention_rows(s.queries, grid_positions(s.out_h, s.out_w), s.keys, grid_positions(s.key_h, s.key_w),
                       p.config.n_heads, p.config.rope());
  k.heads_used = p.config.n_heads;
  k.query_h = s.out_h;
  k.query_w = s.out_w;
  k.key_h = s.key_h;
  k.key_w = s.key_w;
  return k;
}

FeatureMap export_attention_row(const JafarParams& p, const UpsampleRequest& req, int i, int j) {
  if (i < 0 || j < 0 || i >= req.out_h || j >= req.out_w) {
    fail(ErrorKind::IndexOutOfRange, "query (" + std::to_string(i) + ", " + std::to_string(j) + ") outside the " +
                                         std::to_string(req.out_h) + "x" + std::to_string(req.out_w) + " output grid");
  }
  const Tensor<float> guidance = req.guidance.to_tensor<float>();
  const Tensor<float> f_lr = req.f_lr.to_tensor<float>();
  const QueryKeyStage<float> s = build_queries_keys(p.config, p.weights, guidance, f_lr, req.out_h, req.out_w);
  const int idx = i * req.out_w + j;
  const std::vector<GridPosition> q_pos{grid_positions(req.out_h, req.out_w, i, i + 1)[static_cast<std::size_t>(j)]};
  const Tensor<float> row = attention_rows(slice0(s.queries, idx, idx + 1), q_pos, s.keys,
                                           grid_positions(s.key_h, s.key_w), p.config.n_heads, p.config.rope());
  return tokens_to_feature_map(row, 1, s.key_h, s.key_w);
}

#define JAFAR_INSTANTIATE_MODEL(T)                                                                              \
  template QueryKeyStage<T> build_queries_keys(const ModelConfig&, const JafarWeights<T>&, const Tensor<T>&,   \
                                               const Tensor<T>&, int, int);                                    \
  template JafarWeights<T> weights_from_list(const ModelConfig&, const std::vector<Tensor<T>>&);               \
  template Tensor<T> forward_graph(const ModelConfig&, const JafarWeights<T>&, const Tensor<T>&,                \
                                   const Tensor<T>&, int, int);

JAFAR_INSTANTIATE_MODEL(float)
JAFAR_INSTANTIATE_MODEL(double)

}  // namespace jafar
