#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "jafar/feature_map.hpp"
#include "jafar/grad_check.hpp"
#include "jafar/nn_blocks.hpp"
#include "jafar/rng.hpp"

namespace jafar {

/// How keys are formed from the preliminary keys K~ and the encoder features.
enum class KeyStrategy {
  Sft,               // K = gamma(F) * K~ + beta(F)
  NoSft,             // K = K~
  Concat,            // K = Linear([K~; F])
  LinearProjection,  // K = Linear(F); no image-derived keys
};

std::string_view to_string(KeyStrategy s);
/// Accepts "sft", "no_sft", "concat", "linear_projection".
KeyStrategy parse_key_strategy(std::string_view s);

struct ModelConfig {
  int feature_channels = 32;
  int d = 64;
  int n_heads = 4;
  KeyStrategy key_strategy = KeyStrategy::Sft;
  double rope_base = 100.0;

  RopeConfig rope() const { return RopeConfig{d / n_heads, rope_base}; }
  /// IndivisibleHeads / OddHeadDim / InvalidConfig.
  void validate() const;
};

/// Learnable weights. Tensors not used by the configured key strategy stay
/// empty. Convolution weights are [out x in x 3 x 3]; 1x1 projections are
/// [in x out].
template <typename T>
struct JafarWeights {
  Tensor<T> in_w, in_b;              // image -> d
  Tensor<T> enc1_w, enc1_b;          // image encoder, block 1
  Tensor<T> enc2_w, enc2_b;          // image encoder, block 2
  Tensor<T> query_w, query_b;        // query encoder
  Tensor<T> key_w, key_b;            // key encoder
  Tensor<T> gamma_w, gamma_b;        // SFT scale projection, C -> d
  Tensor<T> beta_w, beta_b;          // SFT shift projection, C -> d
  Tensor<T> key_proj_w, key_proj_b;  // concat (d+C -> d) or linear projection (C -> d)

  /// Visits (name, tensor) for every present tensor in checkpoint order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  /// Tensor slot for a checkpoint name, or nullptr.
  Tensor<T>* find(std::string_view name) {
    Tensor<T>* hit = nullptr;
    visit_all(*this, [&](std::string_view n, Tensor<T>& t) {
      if (n == name) hit = &t;
    });
    return hit;
  }

  template <typename U>
  JafarWeights<U> cast() const {
    JafarWeights<U> out;
    auto conv = [](const Tensor<T>& t) { return t.empty() ? Tensor<U>() : t.template cast<U>(); };
    out.in_w = conv(in_w), out.in_b = conv(in_b);
    out.enc1_w = conv(enc1_w), out.enc1_b = conv(enc1_b);
    out.enc2_w = conv(enc2_w), out.enc2_b = conv(enc2_b);
    out.query_w = conv(query_w), out.query_b = conv(query_b);
    out.key_w = conv(key_w), out.key_b = conv(key_b);
    out.gamma_w = conv(gamma_w), out.gamma_b = conv(gamma_b);
    out.beta_w = conv(beta_w), out.beta_b = conv(beta_b);
    out.key_proj_w = conv(key_proj_w), out.key_proj_b = conv(key_proj_b);
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    visit_all(s, [&](std::string_view name, auto& t) {
      if (!t.empty()) f(name, t);
    });
  }

  template <typename Self, typename F>
  static void visit_all(Self& s, F&& f) {
    auto v = [&](const char* name, auto& t) { f(std::string_view(name), t); };
    v("in.weight", s.in_w), v("in.bias", s.in_b);
    v("encoder.0.weight", s.enc1_w), v("encoder.0.bias", s.enc1_b);
    v("encoder.1.weight", s.enc2_w), v("encoder.1.bias", s.enc2_b);
    v("query.weight", s.query_w), v("query.bias", s.query_b);
    v("key.weight", s.key_w), v("key.bias", s.key_b);
    v("sft.gamma.weight", s.gamma_w), v("sft.gamma.bias", s.gamma_b);
    v("sft.beta.weight", s.beta_w), v("sft.beta.bias", s.beta_b);
    v("key_proj.weight", s.key_proj_w), v("key_proj.bias", s.key_proj_b);
  }
};

struct JafarParams {
  ModelConfig config;
  JafarWeights<float> weights;

  std::size_t parameter_count() const;
  /// Copies of every weight tensor in checkpoint order.
  std::vector<NamedTensor> named() const;
  /// Inverse of named(); names and shapes must match the configuration.
  void assign(const std::vector<NamedTensor>& tensors);
};

/// Expected (name, shape) list for a configuration, in checkpoint order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg);

/// Builds weights from tensors listed in parameter_layout order. Tensors are
/// copied with their tape bindings, so gradients flow back to the originals.
template <typename T>
JafarWeights<T> weights_from_list(const ModelConfig& cfg, const std::vector<Tensor<T>>& tensors);

/// Weights ~ Normal(0, 2/fan_in), biases 0, SFT gamma bias 1.
JafarParams init_params(Rng& rng, const ModelConfig& cfg);
JafarParams init_params(Rng& rng, int c_in_features, int d, int n_heads, KeyStrategy strategy);

struct UpsampleRequest {
  Image guidance;
  FeatureMap f_lr;
  int out_h = 0;
  int out_w = 0;
};

/// Queries and keys flattened to token rows, ready for attention.
template <typename T>
struct QueryKeyStage {
  Tensor<T> queries;  // [out_h*out_w x d]
  Tensor<T> keys;     // [key_h*key_w x d]
  int out_h = 0, out_w = 0, key_h = 0, key_w = 0;
};

/// Image encoder, query branch (pooled to the output grid) and key branch
/// (pooled to the feature grid, then combined per the key strategy).
template <typename T>
QueryKeyStage<T> build_queries_keys(const ModelConfig& cfg, const JafarWeights<T>& w, const Tensor<T>& guidance,
                                    const Tensor<T>& f_lr, int out_h, int out_w);

/// Differentiable end-to-end forward: [C x out_h x out_w].
template <typename T>
Tensor<T> forward_graph(const ModelConfig& cfg, const JafarWeights<T>& w, const Tensor<T>& guidance,
                        const Tensor<T>& f_lr, int out_h, int out_w);

FeatureMap forward(const JafarParams& p, const UpsampleRequest& req);

/// Same result as forward, bitwise, but materialises the attention kernel
/// only tile_rows output rows at a time.
FeatureMap upsample_tiled(const JafarParams& p, const UpsampleRequest& req, int tile_rows,
                          KernelStats* stats = nullptr);

/// Full (out_h*out_w) x (h_k*w_k) kernel for inspection.
AttentionKernel<float> full_attention_kernel(const JafarParams& p, const UpsampleRequest& req);

/// Head-averaged attention of output cell (i, j) over the key grid, [1 x h_k x w_k].
FeatureMap export_attention_row(const JafarParams& p, const UpsampleRequest& req, int i, int j);

}  // namespace jafar
