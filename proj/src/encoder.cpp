#include "jafar/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "jafar/ops.hpp"

namespace jafar {

Image::Image(int h, int w, float fill)
    : height(h), width(w), data(3 * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

FeatureMap::FeatureMap(int c, int h, int w, float fill)
    : channels(c),
      height(h),
      width(w),
      data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

std::vector<float> resize_planes(const std::vector<float>& data, int channels, int h, int w, int out_h, int out_w,
                                 ResizeMode mode) {
  if (out_h < 1 || out_w < 1) {
    fail(ErrorKind::InvalidTargetSize, "resize target " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  std::vector<float> out(static_cast<std::size_t>(channels) * out_h * out_w);
  if (mode == ResizeMode::Nearest) {
    std::vector<int> ys(static_cast<std::size_t>(out_h)), xs(static_cast<std::size_t>(out_w));
    for (int i = 0; i < out_h; ++i)
      ys[static_cast<std::size_t>(i)] = std::min(h - 1, static_cast<int>(std::floor((i + 0.5) * h / out_h)));
    for (int j = 0; j < out_w; ++j)
      xs[static_cast<std::size_t>(j)] = std::min(w - 1, static_cast<int>(std::floor((j + 0.5) * w / out_w)));
    for (int c = 0; c < channels; ++c)
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j)
          out[(static_cast<std::size_t>(c) * out_h + i) * out_w + j] =
              data[(static_cast<std::size_t>(c) * h + ys[static_cast<std::size_t>(i)]) * w + xs[static_cast<std::size_t>(j)]];
    return out;
  }

  struct Tap {
    int i0, i1;
    double t;
  };
  auto taps = [](int in, int n_out) {
    std::vector<Tap> result(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * static_cast<double>(in) / n_out - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, in - 1);
      result[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return result;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  for (int c = 0; c < channels; ++c) {
    const float* plane = data.data() + static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < out_h; ++i) {
      const Tap& a = ty[static_cast<std::size_t>(i)];
      for (int j = 0; j < out_w; ++j) {
        const Tap& b = tx[static_cast<std::size_t>(j)];
        const double v00 = plane[static_cast<std::size_t>(a.i0) * w + b.i0];
        const double v01 = plane[static_cast<std::size_t>(a.i0) * w + b.i1];
        const double v10 = plane[static_cast<std::size_t>(a.i1) * w + b.i0];
        const double v11 = plane[static_cast<std::size_t>(a.i1) * w + b.i1];
        const double top = v00 + (v01 - v00) * b.t;
        const double bottom = v10 + (v11 - v10) * b.t;
        out[(static_cast<std::size_t>(c) * out_h + i) * out_w + j] = static_cast<float>(top + (bottom - top) * a.t);
      }
    }
  }
  return out;
}

Image image_resize(const Image& img, int out_h, int out_w, ResizeMode mode) {
  Image out;
  out.height = out_h;
  out.width = out_w;
  out.data = resize_planes(img.data, 3, img.height, img.width, out_h, out_w, mode);
  return out;
}

StubEncoder::StubEncoder(EncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.patch < 1 || cfg_.c_out < 1) fail(ErrorKind::InvalidConfig, "encoder patch and c_out must be positive");
  Rng rng(cfg_.seed);
  const int fan_patch = 3 * cfg_.patch * cfg_.patch;
  w_patch_ = Tensor<float>({fan_patch, cfg_.c_out});
  const double s_patch = std::sqrt(2.0 / fan_patch);
  for (auto& v : w_patch_.data) v = static_cast<float>(s_patch * rng.normal());
  w_mix_ = Tensor<float>({cfg_.c_out, cfg_.c_out, 3, 3});
  const double s_mix = std::sqrt(2.0 / (cfg_.c_out * 9));
  for (auto& v : w_mix_.data) v = static_cast<float>(s_mix * rng.normal());
}

FeatureMap StubEncoder::encode(const Image& img) const {
  const int p = cfg_.patch;
  if (img.height < p || img.width < p || img.height % p != 0 || img.width % p != 0) {
    fail(ErrorKind::IndivisibleImage, std::to_string(img.height) + "x" + std::to_string(img.width) +
                                          " image is not divisible by patch " + std::to_string(p));
  }
  const int hp = img.height / p, wp = img.width / p;
  const int fan = 3 * p * p;
  // Patch vector layout: (channel, dy, dx).
  Tensor<float> patches({fan, hp, wp});
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < p; ++dy)
      for (int dx = 0; dx < p; ++dx) {
        const int row = (c * p + dy) * p + dx;
        for (int i = 0; i < hp; ++i)
          for (int j = 0; j < wp; ++j)
            patches.data[(static_cast<std::size_t>(row) * hp + i) * wp + j] = img.at(c, i * p + dy, j * p + dx);
      }
  const Tensor<float> zero_bias({cfg_.c_out}, 0.0f);
  const Tensor<float> projected = activation(channel_linear(patches, w_patch_, zero_bias));
  return FeatureMap::from_tensor(conv2d(projected, w_mix_, zero_bias));
}

Image synth_image(Rng& rng, int size) {
  if (size < 16) fail(ErrorKind::InvalidTargetSize, "synthetic images need size >= 16");
  Image img(size, size);
  float c0[3], c1[3];
  for (float& v : c0) v = static_cast<float>(rng.uniform());
  for (float& v : c1) v = static_cast<float>(rng.uniform());
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(theta), dy = std::sin(theta);

  // Projection of the unit square onto the gradient direction spans [lo, hi].
  const double lo = std::min(0.0, dx) + std::min(0.0, dy);
  const double hi = std::max(0.0, dx) + std::max(0.0, dy);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      const double t = (u * dx + v * dy - lo) / (hi - lo);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>((1.0 - t) * c0[c] + t * c1[c]);
    }
  }

  const int n_shapes = rng.uniform_int(3, 8);
  for (int s = 0; s < n_shapes; ++s) {
    const bool circle = rng.uniform() < 0.5;
    float color[3];
    for (float& v : color) v = static_cast<float>(rng.uniform());
    const double cx = rng.uniform(), cy = rng.uniform();
    const double a = circle ? rng.uniform(0.05, 0.25) : rng.uniform(0.05, 0.3);
    const double b = circle ? a : rng.uniform(0.05, 0.3);
    for (int y = 0; y < size; ++y) {
      const double v = (y + 0.5) / size;
      for (int x = 0; x < size; ++x) {
        const double u = (x + 0.5) / size;
        const bool inside = circle ? (u - cx) * (u - cx) + (v - cy) * (v - cy) <= a * a
                                   : std::abs(u - cx) <= a && std::abs(v - cy) <= b;
        if (inside)
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
      }
    }
  }
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

}  // namespace jafar
