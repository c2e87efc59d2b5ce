#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jafar/metrics.hpp"
#include "test_util.hpp"

using namespace jafar;

namespace {

FeatureMap random_map(uint64_t seed, int c, int h, int w) {
  return FeatureMap::from_tensor(test::random_tensor<float>({c, h, w}, seed));
}

SaliencyMap random_saliency(uint64_t seed, int h, int w) {
  Rng rng(seed);
  SaliencyMap m(h, w);
  for (auto& v : m.values) v = static_cast<float>(rng.uniform());
  return m;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// toy scorer: sigmoid of a fixed projection of pooled stub features
double toy_score(const StubEncoder& enc, const Image& img) {
  const FeatureMap f = enc.encode(img);
  const int n = f.height * f.width;
  double z = 0;
  for (int c = 0; c < f.channels; ++c) {
    double s = 0;
    for (int l = 0; l < n; ++l) s += f.data[static_cast<std::size_t>(c) * n + l];
    z += (c % 2 == 0 ? 1.0 : -0.5) * s / n;
  }
  return 1.0 / (1.0 + std::exp(-z));
}

JafarParams small_params(uint64_t seed) {
  Rng rng(seed);
  return init_params(rng, 32, 16, 2, KeyStrategy::Sft);
}

}  // namespace

TEST(FeatureResize, IdentityAndConstant) {
  const FeatureMap f = random_map(1, 4, 5, 6);
  for (auto mode : {ResizeMode::Bilinear, ResizeMode::Nearest}) {
    EXPECT_EQ(feature_resize(f, 5, 6, mode).data, f.data);
    const FeatureMap c(3, 4, 4, -1.25f);
    for (float v : feature_resize(c, 9, 3, mode).data) EXPECT_FLOAT_EQ(v, -1.25f);
  }
  test::expect_error(ErrorKind::InvalidTargetSize, [&] { feature_resize(f, 0, 2, ResizeMode::Nearest); });
}

TEST(FeatureResize, BilinearIsSeparableHalfPixel) {
  FeatureMap f(1, 2, 2);
  f.at(0, 0, 0) = 1;
  f.at(0, 0, 1) = 2;
  f.at(0, 1, 0) = 3;
  f.at(0, 1, 1) = 4;
  // per axis the 1D weights for 2 -> 4 are {1,0}, {.75,.25}, {.25,.75}, {0,1}
  const double wts[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
  const FeatureMap up = feature_resize(f, 4, 4, ResizeMode::Bilinear);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      double want = 0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) want += wts[y][a] * wts[x][b] * f.at(0, a, b);
      EXPECT_NEAR(up.at(0, y, x), want, 1e-6) << y << "," << x;
    }
  }
}

TEST(FeatureResize, BilinearCommutesWithChannelPermutation) {
  const FeatureMap f = random_map(2, 3, 4, 5);
  FeatureMap p(3, 4, 5);
  const int perm[] = {2, 0, 1};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) p.at(c, y, x) = f.at(perm[c], y, x);
  const FeatureMap a = feature_resize(f, 7, 9, ResizeMode::Bilinear);
  const FeatureMap b = feature_resize(p, 7, 9, ResizeMode::Bilinear);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x) EXPECT_EQ(b.at(c, y, x), a.at(perm[c], y, x));
}

TEST(ReconScore, IdentityAndOrthogonal) {
  const FeatureMap f = random_map(3, 6, 3, 3);
  const ReconScore s = recon_score(f, f);
  EXPECT_NEAR(s.mean_cos, 1.0, 1e-6);
  EXPECT_NEAR(s.mean_l2, 0.0, 1e-9);

  FeatureMap a(2, 2, 3), b(2, 2, 3);
  Rng rng(4);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 3; ++x) {
      const double u = rng.normal(), v = rng.normal();
      a.at(0, y, x) = static_cast<float>(u);
      a.at(1, y, x) = static_cast<float>(v);
      b.at(0, y, x) = static_cast<float>(-v);
      b.at(1, y, x) = static_cast<float>(u);
    }
  }
  EXPECT_NEAR(recon_score(a, b).mean_cos, 0.0, 1e-6);
  test::expect_error(ErrorKind::ShapeMismatch, [&] { recon_score(a, f); });
}

TEST(ReconScore, MatchesBruteForceReference) {
  const FeatureMap a = random_map(5, 7, 4, 6), b = random_map(6, 7, 4, 6);
  double cs = 0, ls = 0;
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 6; ++x) {
      double dot = 0, na = 0, nb = 0, d2 = 0;
      for (int c = 0; c < 7; ++c) {
        const double u = a.at(c, y, x), v = b.at(c, y, x);
        dot += u * v;
        na += u * u;
        nb += v * v;
        d2 += (u - v) * (u - v);
      }
      cs += dot / (std::sqrt(na) * std::sqrt(nb));
      ls += std::sqrt(d2);
    }
  }
  const ReconScore s = recon_score(a, b);
  EXPECT_NEAR(s.mean_cos, cs / 24, 1e-6);
  EXPECT_NEAR(s.mean_l2, ls / 24, 1e-6);
}

TEST(Pca, RecoversAxisAlignedComponents) {
  std::vector<FeatureMap> maps;
  const double scale[3] = {3.0, 2.0, 1.0};
  for (uint64_t s = 0; s < 2; ++s) {
    FeatureMap m(3, 12, 12);
    Rng rng(100 + s);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 144; ++i) m.data[static_cast<std::size_t>(c) * 144 + i] = static_cast<float>(scale[c] * rng.normal());
    maps.push_back(m);
  }
  const PcaProjection p = pca_rgb(maps);
  EXPECT_EQ(p.rank, 3);
  EXPECT_FALSE(p.degenerate);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> in, out;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      for (int i = 0; i < 144; ++i) {
        in.push_back(maps[k].data[static_cast<std::size_t>(c) * 144 + i]);
        out.push_back(p.images[k].data[static_cast<std::size_t>(c) * 144 + i]);
      }
    }
    EXPECT_GT(std::abs(pearson(in, out)), 0.99) << "channel " << c;
  }
}

TEST(Pca, ConstantFeaturesGiveGray) {
  const PcaProjection p = pca_rgb({FeatureMap(5, 4, 4, 0.7f), FeatureMap(5, 2, 3, 0.7f)});
  EXPECT_TRUE(p.degenerate);
  EXPECT_EQ(p.rank, 0);
  for (const Image& img : p.images)
    for (float v : img.data) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Pca, OutputWithinUnitInterval) {
  const PcaProjection p = pca_rgb({random_map(7, 8, 5, 5), random_map(8, 8, 6, 4)});
  ASSERT_EQ(p.images.size(), 2u);
  EXPECT_EQ(p.images[1].height, 6);
  for (const Image& img : p.images) {
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    EXPECT_GE(*lo, 0.0f);
    EXPECT_LE(*hi, 1.0f);
  }
  test::expect_error(ErrorKind::ShapeMismatch, [] { pca_rgb({random_map(1, 2, 3, 3)}); });
}

TEST(AvgDrop, Examples) {
  EXPECT_NEAR(avg_drop({{0.8, 0.6}}), 25.0, 1e-12);
  EXPECT_EQ(avg_drop({{0.5, 0.7}, {0.3, 0.3}}), 0.0);
  EXPECT_NEAR(avg_drop({{0.5, 0.0}, {0.9, 0.0}}), 100.0, 1e-12);
  test::expect_error(ErrorKind::NonPositiveFullScore, [] { avg_drop({{0.0, 0.1}}); });
}

TEST(AvgIncrease, Examples) {
  EXPECT_EQ(avg_increase({{0.2, 0.3}, {0.1, 0.9}}), 100.0);
  EXPECT_EQ(avg_increase({{0.4, 0.4}, {0.6, 0.6}}), 0.0);
  EXPECT_NEAR(avg_increase({{0.5, 0.6}, {0.5, 0.4}}), 50.0, 1e-12);
}

TEST(AvgGain, Examples) {
  EXPECT_EQ(avg_gain({{0.5, 0.4}, {0.3, 0.3}}).percent, 0.0);
  EXPECT_NEAR(avg_gain({{0.5, 0.75}}).percent, 50.0, 1e-12);
  EXPECT_NEAR(avg_gain({{0.1, 1.0}, {0.7, 1.0}}).percent, 100.0, 1e-12);
  const GainResult g = avg_gain({{1.0, 1.0}, {0.5, 0.75}});
  EXPECT_EQ(g.skipped, 1u);
  EXPECT_NEAR(g.percent, 50.0, 1e-12);
}

TEST(CamScores, IdentityScorerIsZeroAndBoundsHold) {
  std::vector<ScorePair> same;
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    const double y = 0.05 + 0.9 * rng.uniform();
    same.push_back({y, y});
  }
  EXPECT_EQ(avg_drop(same), 0.0);
  EXPECT_EQ(avg_increase(same), 0.0);
  EXPECT_EQ(avg_gain(same).percent, 0.0);

  std::vector<ScorePair> mixed;
  for (int i = 0; i < 30; ++i) mixed.push_back({0.05 + 0.9 * rng.uniform(), rng.uniform()});
  for (double v : {avg_drop(mixed), avg_increase(mixed), avg_gain(mixed).percent}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST(CamScores, ToyScorerPipeline) {
  const StubEncoder enc;
  Rng rng(10);
  std::vector<ScorePair> pairs;
  for (int i = 0; i < 6; ++i) {
    const Image img = synth_image(rng, 32);
    SaliencyMap cam(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) cam.values[static_cast<std::size_t>(y) * 32 + x] = x < 16 + i ? 0.8f : 0.0f;
    pairs.push_back({toy_score(enc, img), toy_score(enc, mask_by_saliency(img, cam))});
  }
  const double ad = avg_drop(pairs), ai = avg_increase(pairs);
  EXPECT_TRUE(ad >= 0 && ad <= 100);
  EXPECT_TRUE(ai >= 0 && ai <= 100);
}

TEST(Coherency, Examples) {
  const SaliencyMap a = random_saliency(11, 8, 8);
  EXPECT_NEAR(coherency(a, a), 100.0, 1e-9);
  SaliencyMap inv = a;
  for (auto& v : inv.values) v = 1.0f - v;
  EXPECT_NEAR(coherency(a, inv), 0.0, 1e-6);
  const SaliencyMap b = random_saliency(12, 8, 8);
  EXPECT_DOUBLE_EQ(coherency(a, b), coherency(b, a));
  test::expect_error(ErrorKind::ConstantMap, [&] { coherency(a, SaliencyMap(8, 8, 0.3f)); });
  test::expect_error(ErrorKind::ShapeMismatch, [&] { coherency(a, random_saliency(1, 4, 4)); });
}

TEST(Coherency, IndependentMapsNearFifty) {
  for (uint64_t s = 0; s < 20; ++s) {
    const double c = coherency(random_saliency(1000 + s, 32, 32), random_saliency(2000 + s, 32, 32));
    EXPECT_GE(c, 30.0);
    EXPECT_LE(c, 70.0);
  }
}

TEST(Complexity, Examples) {
  EXPECT_EQ(complexity(SaliencyMap(4, 4, 0.0f)), 0.0);
  EXPECT_EQ(complexity(SaliencyMap(4, 4, 0.2f)), 100.0);
  SaliencyMap half(4, 6, 0.0f);
  for (std::size_t i = 0; i < half.values.size(); i += 2) half.values[i] = 0.9f;
  EXPECT_DOUBLE_EQ(complexity(half), 50.0);
}

TEST(Adcc, Examples) {
  EXPECT_NEAR(adcc(100, 0, 0), 100.0, 1e-12);
  EXPECT_NEAR(adcc(50, 50, 50), 50.0, 1e-12);
  EXPECT_NEAR(adcc(91.4, 44.1, 17.4), 73.3, 0.05);
  test::expect_error(ErrorKind::UndefinedHarmonicMean, [] { adcc(0, 10, 10); });
  test::expect_error(ErrorKind::UndefinedHarmonicMean, [] { adcc(80, 100, 10); });
  test::expect_error(ErrorKind::UndefinedHarmonicMean, [] { adcc(80, 10, 100); });
}

TEST(Adcc, SymmetricInTransformedTerms) {
  // terms are coh, 100 - cplx, 100 - ad
  const double t[3] = {70, 40, 85};
  const double ref = adcc(t[0], 100 - t[1], 100 - t[2]);
  EXPECT_NEAR(adcc(t[1], 100 - t[2], 100 - t[0]), ref, 1e-12);
  EXPECT_NEAR(adcc(t[2], 100 - t[0], 100 - t[1]), ref, 1e-12);
  for (double v : {10.0, 37.5, 99.0}) EXPECT_NEAR(adcc(v, 100 - v, 100 - v), v, 1e-12);
}

TEST(MaskBySaliency, Examples) {
  Rng rng(13);
  const Image img = synth_image(rng, 16);
  EXPECT_EQ(mask_by_saliency(img, SaliencyMap(16, 16, 0.5f)).data, img.data);
  for (float v : mask_by_saliency(img, SaliencyMap(16, 16, 0.0f)).data) EXPECT_EQ(v, 0.0f);

  Image ones(16, 16, 1.0f);
  SaliencyMap checker(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) checker.values[static_cast<std::size_t>(y) * 16 + x] = (x + y) % 2 ? 1.0f : 0.0f;
  const Image m = mask_by_saliency(ones, checker);
  int zeroed = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) zeroed += m.at(0, y, x) == 0.0f;
  EXPECT_EQ(zeroed, 128);
  test::expect_error(ErrorKind::ShapeMismatch, [&] { mask_by_saliency(img, SaliencyMap(8, 16)); });
}

TEST(Generalization, BoundsAndBaselineIndependence) {
  const StubEncoder enc;
  const std::vector<Image> imgs = held_out_images(3, 2, 64);
  GeneralizationConfig cfg;
  cfg.base = 16;
  cfg.factors = {1, 2};
  const GeneralizationReport a = generalization_eval(small_params(1), enc, imgs, cfg);
  const GeneralizationReport b = generalization_eval(small_params(2), enc, imgs, cfg);
  for (int s : {1, 2}) {
    for (const char* m : {"jafar", "bilinear", "nearest"}) {
      const double c = a.at_factor(s).method(m).mean_cos;
      EXPECT_GE(c, -1.0);
      EXPECT_LE(c, 1.0);
    }
    EXPECT_EQ(a.at_factor(s).method("bilinear").mean_cos, b.at_factor(s).method("bilinear").mean_cos);
    EXPECT_EQ(a.at_factor(s).method("nearest").mean_cos, b.at_factor(s).method("nearest").mean_cos);
    EXPECT_EQ(a.at_factor(s).method("jafar").per_image_cos.size(), 2u);
  }
  // identical grids: the baselines reproduce the target exactly
  EXPECT_NEAR(a.at_factor(1).method("bilinear").mean_cos, 1.0, 1e-6);
  EXPECT_EQ(a.csv().rfind("factor,method,mean_cos,mean_l2\n", 0), 0u);
  test::expect_error(ErrorKind::IndexOutOfRange, [&] { a.at_factor(8); });
}

TEST(Generalization, TiledMatchesMonolithic) {
  const StubEncoder enc;
  const std::vector<Image> imgs = held_out_images(4, 1, 64);
  GeneralizationConfig cfg;
  cfg.base = 16;
  cfg.factors = {2};
  const double mono = generalization_eval(small_params(1), enc, imgs, cfg).at_factor(2).method("jafar").mean_cos;
  cfg.tile_rows = 5;
  EXPECT_EQ(generalization_eval(small_params(1), enc, imgs, cfg).at_factor(2).method("jafar").mean_cos, mono);
}
