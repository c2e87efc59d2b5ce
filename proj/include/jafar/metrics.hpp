#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jafar/encoder.hpp"
#include "jafar/feature_map.hpp"
#include "jafar/model.hpp"

namespace jafar {

/// Channel-wise image_resize rules; the nearest and bilinear baselines.
FeatureMap feature_resize(const FeatureMap& f, int out_h, int out_w, ResizeMode mode);

struct ReconScore {
  double mean_cos = 0.0;
  double mean_l2 = 0.0;
};

/// Cosine and Euclidean distance of channel vectors per location, averaged.
/// Cosine uses the same 1e-8 guarded denominator as the training loss.
ReconScore recon_score(const FeatureMap& pred, const FeatureMap& target);

struct PcaProjection {
  std::vector<Image> images;
  /// Number of principal directions with non-zero variance (at most 3).
  int rank = 0;
  /// Set when rank < 3; missing output channels are filled with 0.5.
  bool degenerate = false;
};

/// Shared 3-component PCA over every location of every map, min-max scaled
/// per output channel jointly over all maps. Power iteration with deflation.
PcaProjection pca_rgb(const std::vector<FeatureMap>& maps);

/// y: full-image class score, o: score of the masked image.
struct ScorePair {
  double y = 0.0;
  double o = 0.0;
};

double avg_drop(const std::vector<ScorePair>& pairs);
double avg_increase(const std::vector<ScorePair>& pairs);

struct GainResult {
  double percent = 0.0;
  /// Pairs left out because 1 - y < 1e-8.
  std::size_t skipped = 0;
};
GainResult avg_gain(const std::vector<ScorePair>& pairs);

/// 100 * (pearson(a, b) + 1) / 2. ConstantMap when either map has sd <= 1e-8.
double coherency(const SaliencyMap& a, const SaliencyMap& b);
/// Percentage of entries above 1e-8.
double complexity(const SaliencyMap& a);
/// Harmonic mean of coh, 100 - cplx and 100 - ad, all in percent.
double adcc(double coh, double cplx, double ad);

/// Keeps pixels where cam > 0 and zeroes the rest.
Image mask_by_saliency(const Image& img, const SaliencyMap& cam);

struct GeneralizationConfig {
  /// Side of the low-resolution view the encoder sees.
  int base = 32;
  std::vector<int> factors{2, 4, 8};
  /// Tile rows for JAFAR inference; 0 runs monolithic.
  int tile_rows = 0;
};

struct MethodScore {
  std::string method;
  double mean_cos = 0.0;
  double mean_l2 = 0.0;
  std::vector<double> per_image_cos;
};

struct FactorResult {
  int factor = 0;
  std::vector<MethodScore> methods;  // jafar, bilinear, nearest
  /// Fraction of images where JAFAR's mean cosine beats bilinear's.
  double jafar_win_fraction = 0.0;

  const MethodScore& method(const std::string& name) const;
};

struct GeneralizationReport {
  std::vector<FactorResult> factors;

  const FactorResult& at_factor(int factor) const;
  std::string table() const;
  /// Header `factor,method,mean_cos,mean_l2`, one row per cell.
  std::string csv() const;
};

/// For each factor s and image: the high-resolution view is the image resized
/// to s*base, the low-resolution view is that resized to base, and the target
/// is encode(high-res view). JAFAR gets the high-res view downsized by 2 as
/// guidance, matching training.
GeneralizationReport generalization_eval(const JafarParams& params, const StubEncoder& enc,
                                         const std::vector<Image>& held_out, const GeneralizationConfig& cfg = {});

/// Synthetic held-out scenes rendered at `size`.
std::vector<Image> held_out_images(uint64_t seed, int count, int size);

}  // namespace jafar
