#include "jafar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace jafar {
namespace {

void require_same_shape(const SaliencyMap& a, const SaliencyMap& b) {
  if (a.height != b.height || a.width != b.width) {
    fail(ErrorKind::ShapeMismatch, "saliency maps " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                       " and " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

void require_positive_scores(const std::vector<ScorePair>& pairs) {
  for (const auto& p : pairs) {
    if (!(p.y > 0.0)) fail(ErrorKind::NonPositiveFullScore, "full-image score " + std::to_string(p.y) + " is not positive");
  }
}

std::string fmt(double v, const char* pattern = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

FeatureMap feature_resize(const FeatureMap& f, int out_h, int out_w, ResizeMode mode) {
  FeatureMap out;
  out.channels = f.channels;
  out.height = out_h;
  out.width = out_w;
  out.data = resize_planes(f.data, f.channels, f.height, f.width, out_h, out_w, mode);
  return out;
}

ReconScore recon_score(const FeatureMap& pred, const FeatureMap& target) {
  if (pred.channels != target.channels || pred.height != target.height || pred.width != target.width) {
    fail(ErrorKind::ShapeMismatch, "recon_score: prediction and target shapes differ");
  }
  const std::size_t locs = static_cast<std::size_t>(pred.height) * pred.width;
  double cos_sum = 0.0, l2_sum = 0.0;
  for (std::size_t l = 0; l < locs; ++l) {
    double dot = 0, pp = 0, tt = 0, dd = 0;
    for (int c = 0; c < pred.channels; ++c) {
      const double p = pred.data[c * locs + l], t = target.data[c * locs + l];
      dot += p * t;
      pp += p * p;
      tt += t * t;
      dd += (p - t) * (p - t);
    }
    cos_sum += dot / (std::sqrt(pp) * std::sqrt(tt) + 1e-8);
    l2_sum += std::sqrt(dd);
  }
  return {cos_sum / static_cast<double>(locs), l2_sum / static_cast<double>(locs)};
}

PcaProjection pca_rgb(const std::vector<FeatureMap>& maps) {
  if (maps.empty()) fail(ErrorKind::ShapeMismatch, "pca_rgb needs at least one feature map");
  const int c = maps.front().channels;
  if (c < 3) fail(ErrorKind::ShapeMismatch, "pca_rgb needs at least 3 channels, got " + std::to_string(c));
  for (const auto& m : maps) {
    if (m.channels != c) fail(ErrorKind::ShapeMismatch, "pca_rgb: maps disagree on channel count");
  }
  const std::size_t cc = static_cast<std::size_t>(c);

  std::vector<double> mean(cc, 0.0);
  std::size_t n = 0;
  for (const auto& m : maps) {
    const std::size_t locs = static_cast<std::size_t>(m.height) * m.width;
    for (std::size_t ch = 0; ch < cc; ++ch)
      for (std::size_t l = 0; l < locs; ++l) mean[ch] += m.data[ch * locs + l];
    n += locs;
  }
  for (auto& v : mean) v /= static_cast<double>(n);

  std::vector<double> cov(cc * cc, 0.0);
  std::vector<double> x(cc);
  for (const auto& m : maps) {
    const std::size_t locs = static_cast<std::size_t>(m.height) * m.width;
    for (std::size_t l = 0; l < locs; ++l) {
      for (std::size_t ch = 0; ch < cc; ++ch) x[ch] = m.data[ch * locs + l] - mean[ch];
      for (std::size_t i = 0; i < cc; ++i)
        for (std::size_t j = 0; j < cc; ++j) cov[i * cc + j] += x[i] * x[j];
    }
  }
  double trace = 0.0;
  for (std::size_t i = 0; i < cc; ++i) trace += cov[i * cc + i];

  // Top three eigenvectors by power iteration, deflating after each.
  std::vector<std::vector<double>> components;
  Rng rng(0x9ca);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> v(cc), w(cc);
    for (auto& e : v) e = rng.normal();
    auto normalize = [](std::vector<double>& u) {
      double s = 0;
      for (double e : u) s += e * e;
      s = std::sqrt(s);
      if (s > 0)
        for (double& e : u) e /= s;
      return s;
    };
    normalize(v);
    double lambda = 0.0;
    for (int it = 0; it < 100; ++it) {
      for (std::size_t i = 0; i < cc; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < cc; ++j) s += cov[i * cc + j] * v[j];
        w[i] = s;
      }
      lambda = normalize(w);
      if (lambda == 0.0) break;
      double diff = 0;
      for (std::size_t i = 0; i < cc; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
      v = w;
      if (diff < 1e-7) break;
    }
    if (!(lambda > 1e-12 * std::max(1.0, trace))) break;
    // Rayleigh quotient for the deflation weight.
    double rq = 0;
    for (std::size_t i = 0; i < cc; ++i)
      for (std::size_t j = 0; j < cc; ++j) rq += v[i] * cov[i * cc + j] * v[j];
    const auto peak = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (*peak < 0)
      for (double& e : v) e = -e;
    for (std::size_t i = 0; i < cc; ++i)
      for (std::size_t j = 0; j < cc; ++j) cov[i * cc + j] -= rq * v[i] * v[j];
    components.push_back(std::move(v));
  }

  PcaProjection out;
  out.rank = static_cast<int>(components.size());
  out.degenerate = out.rank < 3;
  std::vector<std::vector<float>> proj;
  double lo[3], hi[3];
  std::fill(lo, lo + 3, std::numeric_limits<double>::infinity());
  std::fill(hi, hi + 3, -std::numeric_limits<double>::infinity());
  for (const auto& m : maps) {
    const std::size_t locs = static_cast<std::size_t>(m.height) * m.width;
    std::vector<float> p(3 * locs, 0.0f);
    for (std::size_t k = 0; k < components.size(); ++k) {
      for (std::size_t l = 0; l < locs; ++l) {
        double s = 0;
        for (std::size_t ch = 0; ch < cc; ++ch) s += (m.data[ch * locs + l] - mean[ch]) * components[k][ch];
        p[k * locs + l] = static_cast<float>(s);
        lo[k] = std::min(lo[k], s);
        hi[k] = std::max(hi[k], s);
      }
    }
    proj.push_back(std::move(p));
  }
  for (std::size_t mi = 0; mi < maps.size(); ++mi) {
    const FeatureMap& m = maps[mi];
    const std::size_t locs = static_cast<std::size_t>(m.height) * m.width;
    Image img(m.height, m.width, 0.5f);
    for (std::size_t k = 0; k < components.size(); ++k) {
      const double range = hi[k] - lo[k];
      if (!(range > 0)) continue;
      for (std::size_t l = 0; l < locs; ++l) {
        img.data[k * locs + l] = static_cast<float>(std::clamp((proj[mi][k * locs + l] - lo[k]) / range, 0.0, 1.0));
      }
    }
    out.images.push_back(std::move(img));
  }
  return out;
}

double avg_drop(const std::vector<ScorePair>& pairs) {
  if (pairs.empty()) return 0.0;
  require_positive_scores(pairs);
  double s = 0.0;
  for (const auto& p : pairs) s += std::max(0.0, p.y - p.o) / p.y;
  return 100.0 * s / static_cast<double>(pairs.size());
}

double avg_increase(const std::vector<ScorePair>& pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.y < p.o ? 1 : 0;
  return 100.0 * static_cast<double>(n) / static_cast<double>(pairs.size());
}

GainResult avg_gain(const std::vector<ScorePair>& pairs) {
  GainResult r;
  double s = 0.0;
  std::size_t used = 0;
  for (const auto& p : pairs) {
    if (1.0 - p.y < 1e-8) {
      ++r.skipped;
      continue;
    }
    s += std::max(0.0, p.o - p.y) / (1.0 - p.y);
    ++used;
  }
  r.percent = used == 0 ? 0.0 : 100.0 * s / static_cast<double>(used);
  return r;
}

double coherency(const SaliencyMap& a, const SaliencyMap& b) {
  require_same_shape(a, b);
  const std::size_t n = a.values.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) ma += a.values[i], mb += b.values[i];
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.values[i] - ma, db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const double sd_a = std::sqrt(saa / static_cast<double>(n));
  const double sd_b = std::sqrt(sbb / static_cast<double>(n));
  if (sd_a <= 1e-8 || sd_b <= 1e-8) fail(ErrorKind::ConstantMap, "coherency is undefined for a constant map");
  const double r = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
  return 100.0 * (r + 1.0) / 2.0;
}

double complexity(const SaliencyMap& a) {
  if (a.values.empty()) return 0.0;
  std::size_t active = 0;
  for (float v : a.values) active += v > 1e-8f ? 1 : 0;
  return 100.0 * static_cast<double>(active) / static_cast<double>(a.values.size());
}

double adcc(double coh, double cplx, double ad) {
  if (!(coh > 0.0) || !(cplx < 100.0) || !(ad < 100.0)) {
    fail(ErrorKind::UndefinedHarmonicMean, "adcc needs coh > 0, cplx < 100, ad < 100 (got " + fmt(coh, "%g") + ", " +
                                               fmt(cplx, "%g") + ", " + fmt(ad, "%g") + ")");
  }
  return 100.0 * 3.0 / (1.0 / (coh / 100.0) + 1.0 / (1.0 - cplx / 100.0) + 1.0 / (1.0 - ad / 100.0));
}

Image mask_by_saliency(const Image& img, const SaliencyMap& cam) {
  if (cam.height != img.height || cam.width != img.width) {
    fail(ErrorKind::ShapeMismatch, "saliency map does not match the image size");
  }
  Image out = img;
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < plane; ++i) {
    if (!(cam.values[i] > 0.0f))
      for (int c = 0; c < 3; ++c) out.data[c * plane + i] = 0.0f;
  }
  return out;
}

const MethodScore& FactorResult::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.method == name) return m;
  fail(ErrorKind::IndexOutOfRange, "no method '" + name + "' in the report");
}

const FactorResult& GeneralizationReport::at_factor(int factor) const {
  for (const auto& f : factors)
    if (f.factor == factor) return f;
  fail(ErrorKind::IndexOutOfRange, "no factor " + std::to_string(factor) + " in the report");
}

std::string GeneralizationReport::table() const {
  std::ostringstream os;
  os << "factor  method     mean_cos   mean_l2    jafar>bilinear\n";
  for (const auto& f : factors) {
    for (const auto& m : f.methods) {
      char line[128];
      std::snprintf(line, sizeof line, "%-7d %-10s %-10.5f %-10.5f", f.factor, m.method.c_str(), m.mean_cos, m.mean_l2);
      os << line;
      if (m.method == "jafar") os << " " << fmt(100.0 * f.jafar_win_fraction, "%.1f") << "%";
      os << "\n";
    }
  }
  return os.str();
}

std::string GeneralizationReport::csv() const {
  std::ostringstream os;
  os << "factor,method,mean_cos,mean_l2\n";
  for (const auto& f : factors)
    for (const auto& m : f.methods)
      os << f.factor << "," << m.method << "," << fmt(m.mean_cos, "%.9g") << "," << fmt(m.mean_l2, "%.9g") << "\n";
  return os.str();
}

GeneralizationReport generalization_eval(const JafarParams& params, const StubEncoder& enc,
                                         const std::vector<Image>& held_out, const GeneralizationConfig& cfg) {
  if (held_out.empty()) fail(ErrorKind::InvalidConfig, "generalization_eval needs held-out images");
  GeneralizationReport report;
  for (int s : cfg.factors) {
    if (s < 1) fail(ErrorKind::InvalidConfig, "factor must be >= 1, got " + std::to_string(s));
    FactorResult fr;
    fr.factor = s;
    MethodScore jafar, bilinear, nearest;
    jafar.method = "jafar";
    bilinear.method = "bilinear";
    nearest.method = "nearest";
    std::size_t wins = 0;
    const int hr_size = s * cfg.base;
    for (const Image& img : held_out) {
      const Image hr = img.height == hr_size && img.width == hr_size
                           ? img
                           : image_resize(img, hr_size, hr_size, ResizeMode::Bilinear);
      const FeatureMap target = enc.encode(hr);
      const FeatureMap f_lr = enc.encode(image_resize(hr, cfg.base, cfg.base, ResizeMode::Bilinear));
      const int g = std::max(1, hr_size / 2);
      const UpsampleRequest req{image_resize(hr, g, g, ResizeMode::Bilinear), f_lr, target.height, target.width};
      const FeatureMap up = cfg.tile_rows > 0 ? upsample_tiled(params, req, cfg.tile_rows) : forward(params, req);

      auto score = [&](MethodScore& m, const FeatureMap& pred) {
        const ReconScore r = recon_score(pred, target);
        m.per_image_cos.push_back(r.mean_cos);
        m.mean_cos += r.mean_cos;
        m.mean_l2 += r.mean_l2;
        return r.mean_cos;
      };
      const double cj = score(jafar, up);
      const double cb = score(bilinear, feature_resize(f_lr, target.height, target.width, ResizeMode::Bilinear));
      score(nearest, feature_resize(f_lr, target.height, target.width, ResizeMode::Nearest));
      wins += cj > cb ? 1 : 0;
    }
    const double n = static_cast<double>(held_out.size());
    for (MethodScore* m : {&jafar, &bilinear, &nearest}) {
      m->mean_cos /= n;
      m->mean_l2 /= n;
      fr.methods.push_back(std::move(*m));
    }
    fr.jafar_win_fraction = static_cast<double>(wins) / n;
    report.factors.push_back(std::move(fr));
  }
  return report;
}

std::vector<Image> held_out_images(uint64_t seed, int count, int size) {
  Rng rng(seed);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(synth_image(rng, size));
  return out;
}

}  // namespace jafar
