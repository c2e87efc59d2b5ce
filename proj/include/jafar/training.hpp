#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "jafar/encoder.hpp"
#include "jafar/model.hpp"

namespace jafar {

struct TrainConfig {
  int steps = 2000;
  double lr = 2e-4;
  int batch = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int hr_image_size = 64;
  /// 0 means hr_image_size / 2.
  int guidance_size = 0;
  /// Low-resolution image sizes; the view factor is hr_image_size / size.
  std::vector<int> delta_set{32, 24, 16};
  uint64_t seed = 42;
  /// 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  int log_every = 50;

  int effective_guidance_size() const { return guidance_size > 0 ? guidance_size : hr_image_size / 2; }
  /// InvalidConfig unless sizes are patch-aligned and every factor lies in [2, 4].
  void validate(int patch) const;
};

/// Everything a `key = value` run file can set.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  EncoderConfig encoder;
};

/// One `key = value` pair per line, `#` starts a comment. Unknown keys and
/// unparsable values raise InvalidConfig naming the line.
RunConfig parse_run_config(std::string_view text, RunConfig defaults = {});
/// Inverse of parse_run_config for the keys it understands.
std::string format_run_config(const RunConfig& cfg);

struct ViewPair {
  Image guidance;
  FeatureMap f_lr;
  FeatureMap f_hr;
  int lr_size = 0;
};

/// Renders one synthetic scene at hr_image_size, downsizes it to a size drawn
/// uniformly from delta_set, and encodes both views.
ViewPair sample_view(Rng& rng, const TrainConfig& cfg, const StubEncoder& enc);

/// Mean over locations of (1 - cos(pred, target)) plus mean over locations of
/// ||pred - target||, both over channel vectors of [C x H x W] tensors.
/// The cosine denominator is ||pred|| ||target|| + 1e-8.
template <typename T>
Tensor<T> loss_cos_l2(const Tensor<T>& pred, const Tensor<T>& target);
double loss_cos_l2(const FeatureMap& pred, const FeatureMap& target);

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected AdamW update at step t (1-based). All gradients are
/// checked before any parameter changes; NonFiniteGradient otherwise.
void adamw_step(const std::vector<Tensor<float>*>& params, const std::vector<std::vector<float>>& grads,
                AdamWState& state, const AdamWConfig& cfg, int t);

struct TrainCallbacks {
  std::function<void(int step, double loss)> on_log;
  std::function<void(int step, const JafarParams& params)> on_checkpoint;
};

struct TrainResult {
  JafarParams params;
  /// Batch-mean loss per step.
  std::vector<double> loss_curve;
};

/// Single-threaded and deterministic given cfg.seed. The encoder is only read.
TrainResult train(const TrainConfig& cfg, const StubEncoder& enc, JafarParams params,
                  const TrainCallbacks& callbacks = {});

/// Initial weights for a run: init_params on a stream derived from train.seed,
/// kept apart from the view-sampling stream.
JafarParams initial_params(const RunConfig& run);

/// Builds the encoder and initial weights from `run` and trains them.
TrainResult train_run(const RunConfig& run, const TrainCallbacks& callbacks = {});

}  // namespace jafar
