#pragma once

#include <vector>

#include "jafar/tensor.hpp"

namespace jafar {

/// RGB image, channel-major [3 x H x W], values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>({3, height, width}, std::vector<T>(data.begin(), data.end()));
  }
};

/// C x H x W grid of feature vectors, channel-major then row-major.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, float fill = 0.0f);

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>({channels, height, width}, std::vector<T>(data.begin(), data.end()));
  }

  /// Accepts [C x H x W] tensors of either precision.
  template <typename T>
  static FeatureMap from_tensor(const Tensor<T>& t) {
    if (t.rank() != 3) fail(ErrorKind::ShapeMismatch, "feature map needs rank 3, got " + shape_string(t.shape));
    FeatureMap f(t.dim(0), t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < t.numel(); ++i) f.data[i] = static_cast<float>(t.data[i]);
    return f;
  }
};

/// H x W saliency values in [0, 1].
struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  SaliencyMap() = default;
  SaliencyMap(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}
};

enum class ResizeMode { Nearest, Bilinear };

/// Resamples `channels` planes of h x w to out_h x out_w. Bilinear uses the
/// half-pixel mapping src = (dst + 0.5) * in / out - 0.5 with edge clamping;
/// nearest takes floor((dst + 0.5) * in / out).
std::vector<float> resize_planes(const std::vector<float>& data, int channels, int h, int w, int out_h, int out_w,
                                 ResizeMode mode);

}  // namespace jafar
