#pragma once

#include <cstdint>

#include "jafar/feature_map.hpp"
#include "jafar/rng.hpp"

namespace jafar {

struct EncoderConfig {
  int patch = 4;
  int c_out = 32;
  uint64_t seed = 0;
};

/// Frozen stand-in for a patch-based vision backbone: non-overlapping
/// patchify, fixed projection, SiLU, then one fixed 3x3 mixing conv.
/// Weights are drawn once from the seed and never change.
class StubEncoder {
 public:
  explicit StubEncoder(EncoderConfig cfg = {});

  /// [c_out x H/patch x W/patch]. Throws IndivisibleImage when H or W is
  /// not a multiple of the patch size.
  FeatureMap encode(const Image& img) const;

  const EncoderConfig& config() const { return cfg_; }
  const Tensor<float>& patch_weights() const { return w_patch_; }
  const Tensor<float>& mix_weights() const { return w_mix_; }

 private:
  EncoderConfig cfg_;
  Tensor<float> w_patch_;  // [3*patch*patch x c_out]
  Tensor<float> w_mix_;    // [c_out x c_out x 3 x 3]
};

/// Procedural scene: a random two-colour linear gradient overlaid with 3-8
/// axis-aligned rectangles and filled circles. Geometry is drawn in
/// normalised coordinates, so the same rng state renders the same scene at
/// any size. Requires size >= 16.
Image synth_image(Rng& rng, int size);

Image image_resize(const Image& img, int out_h, int out_w, ResizeMode mode);

}  // namespace jafar
