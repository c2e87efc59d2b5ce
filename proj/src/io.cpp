#include "jafar/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string_view>

#include <unistd.h>

namespace jafar {
namespace {

constexpr uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}

  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      fail(ErrorKind::TruncatedFile, std::string(what) + ": need " + std::to_string(n) + " bytes at offset " +
                                         std::to_string(pos_) + ", " + std::to_string(remaining()) + " left");
    }
  }
  std::string_view chars(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void f32s(std::vector<float>& out, std::size_t n, const char* what) {
    need(n * 4, what);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(u32(what));
  }

 private:
  std::span<const uint8_t> b_;
  std::size_t pos_ = 0;
};

void check_magic(Reader& r, std::string_view magic) {
  if (r.remaining() < magic.size()) {
    fail(ErrorKind::BadMagic, "file is too short to carry the '" + std::string(magic) + "' magic");
  }
  const std::string_view got = r.chars(magic.size(), "magic");
  if (got != magic) fail(ErrorKind::BadMagic, "expected magic '" + std::string(magic) + "'");
}

void check_version(Reader& r) {
  const uint32_t v = r.u32("version");
  if (v != kVersion) fail(ErrorKind::UnsupportedVersion, "format version " + std::to_string(v) + " (supported: 1)");
}

void require_finite(const std::vector<float>& data, const std::string& what) {
  for (float v : data) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteInput, what + " contains a non-finite value");
  }
}

uint8_t quantize(float v) {
  const double q = std::round(static_cast<double>(v) * 255.0);
  return static_cast<uint8_t>(std::clamp(std::isnan(q) ? 0.0 : q, 0.0, 255.0));
}

// Netpbm header tokens: whitespace separated, `#` comments run to end of line.
class PnmHeader {
 public:
  explicit PnmHeader(std::span<const uint8_t> b) : b_(b) {}

  int number(const char* what) {
    skip_space();
    if (pos_ >= b_.size()) fail(ErrorKind::TruncatedFile, std::string("image header ends before ") + what);
    if (b_[pos_] < '0' || b_[pos_] > '9') fail(ErrorKind::HeaderPayloadMismatch, std::string("bad ") + what);
    long v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > (1 << 24)) fail(ErrorKind::HeaderPayloadMismatch, std::string(what) + " is too large");
    }
    return static_cast<int>(v);
  }
  // The single whitespace byte separating maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size()) fail(ErrorKind::TruncatedFile, "image header ends before the raster");
    if (!std::isspace(b_[pos_])) fail(ErrorKind::HeaderPayloadMismatch, "missing whitespace after maxval");
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const uint8_t> b_;
  std::size_t pos_ = 2;
};

struct PnmRaster {
  int width, height, maxval;
  std::span<const uint8_t> raster;
};

PnmRaster parse_pnm(std::span<const uint8_t> bytes, std::string_view magic, int channels) {
  if (bytes.size() < 2 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 2) != magic) {
    fail(ErrorKind::BadMagic, "expected a binary netpbm file starting with '" + std::string(magic) + "'");
  }
  PnmHeader h(bytes);
  PnmRaster r{};
  r.width = h.number("width");
  r.height = h.number("height");
  r.maxval = h.number("maxval");
  if (r.width < 1 || r.height < 1) fail(ErrorKind::HeaderPayloadMismatch, "image dimensions must be positive");
  if (r.maxval < 1 || r.maxval > 255) {
    fail(ErrorKind::HeaderPayloadMismatch, "maxval " + std::to_string(r.maxval) + " (only 8-bit rasters are read)");
  }
  const std::size_t start = h.raster_start();
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height * channels;
  const std::size_t have = bytes.size() - start;
  if (have < n) fail(ErrorKind::TruncatedFile, "raster has " + std::to_string(have) + " of " + std::to_string(n) + " bytes");
  if (have > n) fail(ErrorKind::HeaderPayloadMismatch, "raster has " + std::to_string(have - n) + " trailing bytes");
  r.raster = bytes.subspan(start, n);
  return r;
}

std::vector<uint8_t> pnm_header(std::string_view magic, int w, int h) {
  const std::string s = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return {s.begin(), s.end()};
}

}  // namespace

std::vector<uint8_t> encode_feature_file(const FeatureMap& f) {
  if (f.channels < 1 || f.height < 1 || f.width < 1 ||
      f.data.size() != static_cast<std::size_t>(f.channels) * f.height * f.width) {
    fail(ErrorKind::ShapeMismatch, "feature map header and payload disagree");
  }
  require_finite(f.data, "feature map");
  Writer w;
  w.bytes("JFAR", 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(f.channels));
  w.u32(static_cast<uint32_t>(f.height));
  w.u32(static_cast<uint32_t>(f.width));
  for (float v : f.data) w.f32(v);
  return w.take();
}

FeatureMap decode_feature_file(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r, "JFAR");
  check_version(r);
  const uint32_t c = r.u32("channels"), h = r.u32("height"), w = r.u32("width");
  if (c == 0 || h == 0 || w == 0 || c > (1u << 24) || h > (1u << 24) || w > (1u << 24)) {
    fail(ErrorKind::HeaderPayloadMismatch, "feature header has invalid dimensions");
  }
  const uint64_t n = static_cast<uint64_t>(c) * h * w;
  if (n * 4 > r.remaining()) {
    fail(ErrorKind::TruncatedFile, "payload has " + std::to_string(r.remaining()) + " of " + std::to_string(n * 4) +
                                       " bytes");
  }
  if (n * 4 < r.remaining()) {
    fail(ErrorKind::HeaderPayloadMismatch, std::to_string(r.remaining() - n * 4) + " bytes beyond the declared payload");
  }
  FeatureMap f;
  f.channels = static_cast<int>(c);
  f.height = static_cast<int>(h);
  f.width = static_cast<int>(w);
  r.f32s(f.data, static_cast<std::size_t>(n), "payload");
  return f;
}

void write_feature_file(const std::string& path, const FeatureMap& f) { write_file_atomic(path, encode_feature_file(f)); }
FeatureMap read_feature_file(const std::string& path) { return decode_feature_file(read_file(path)); }

std::vector<uint8_t> encode_checkpoint(const JafarParams& params, const RunConfig& run) {
  const auto tensors = params.named();
  Writer w;
  w.bytes("JFCK", 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    require_finite(t.value.data, "parameter " + t.name);
    w.u16(static_cast<uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<uint8_t>(t.value.rank()));
    for (int d : t.value.shape) w.u32(static_cast<uint32_t>(d));
    for (float v : t.value.data) w.f32(v);
  }
  RunConfig cfg = run;
  cfg.model = params.config;
  cfg.encoder.c_out = params.config.feature_channels;
  const std::string text = format_run_config(cfg);
  w.u32(static_cast<uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r, "JFCK");
  check_version(r);
  const uint32_t count = r.u32("parameter count");
  if (count > 4096) fail(ErrorKind::HeaderPayloadMismatch, "implausible parameter count " + std::to_string(count));
  std::vector<NamedTensor> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = r.u16("name length");
    std::string name(r.chars(len, "parameter name"));
    const uint8_t rank = r.u8("rank");
    if (rank < 1 || rank > 4) fail(ErrorKind::HeaderPayloadMismatch, name + ": rank " + std::to_string(rank));
    Shape shape;
    uint64_t n = 1;
    for (uint8_t k = 0; k < rank; ++k) {
      const uint32_t d = r.u32("dimension");
      if (d == 0 || d > (1u << 24)) fail(ErrorKind::HeaderPayloadMismatch, name + ": invalid dimension");
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    if (n * 4 > r.remaining()) fail(ErrorKind::TruncatedFile, name + ": payload is truncated");
    std::vector<float> data;
    r.f32s(data, static_cast<std::size_t>(n), "parameter data");
    tensors.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  const uint32_t text_len = r.u32("config length");
  const std::string text(r.chars(text_len, "config block"));
  if (r.remaining() != 0) {
    fail(ErrorKind::HeaderPayloadMismatch, std::to_string(r.remaining()) + " bytes after the config block");
  }
  Checkpoint ck;
  ck.run = parse_run_config(text);
  ck.params.config = ck.run.model;
  ck.params.assign(tensors);
  return ck;
}

void write_checkpoint(const std::string& path, const JafarParams& params, const RunConfig& run) {
  write_file_atomic(path, encode_checkpoint(params, run));
}
Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

std::vector<uint8_t> encode_ppm(const Image& img) {
  auto out = pnm_header("P6", img.width, img.height);
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out.push_back(quantize(img.data[c * plane + i]));
  return out;
}

Image decode_ppm(std::span<const uint8_t> bytes) {
  const PnmRaster r = parse_pnm(bytes, "P6", 3);
  Image img(r.height, r.width);
  const std::size_t plane = static_cast<std::size_t>(r.height) * r.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) img.data[c * plane + i] = static_cast<float>(r.raster[3 * i + c]) / r.maxval;
  return img;
}

void write_ppm(const std::string& path, const Image& img) { write_file_atomic(path, encode_ppm(img)); }
Image read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

std::vector<uint8_t> encode_pgm(const SaliencyMap& map) {
  auto out = pnm_header("P5", map.width, map.height);
  for (float v : map.values) out.push_back(quantize(v));
  return out;
}

SaliencyMap decode_pgm(std::span<const uint8_t> bytes) {
  const PnmRaster r = parse_pnm(bytes, "P5", 1);
  SaliencyMap m(r.height, r.width);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<float>(r.raster[i]) / r.maxval;
  return m;
}

void write_pgm(const std::string& path, const SaliencyMap& map) { write_file_atomic(path, encode_pgm(map)); }
SaliencyMap read_pgm(const std::string& path) { return decode_pgm(read_file(path)); }

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open '" + path + "' for reading");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoError, "error while reading '" + path + "'");
  return bytes;
}

void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(ErrorKind::IoError, "short write to '" + tmp + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::IoError, "cannot move output into place at '" + path + "'");
  }
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

}  // namespace jafar
