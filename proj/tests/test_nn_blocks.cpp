#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "jafar/grad_check.hpp"
#include "jafar/nn_blocks.hpp"
#include "jafar/ops.hpp"
#include "test_util.hpp"

using namespace jafar;

namespace {

// Independent evaluation of the rotation angle for channel pair p.
double oracle_angle(const GridPosition& pos, int p, int head_dim, double base) {
  const int quarter = head_dim / 4;
  const double coord = p < quarter ? pos.row : pos.col;
  return coord * std::pow(base, -4.0 * (p % quarter) / head_dim);
}

// Sum over pairs of (q0k0 + q1k1) cos(d) + (q1k0 - q0k1) sin(d), d = key angle - query angle.
double relative_formula(const std::vector<double>& q, const std::vector<double>& k, const GridPosition& pq,
                        const GridPosition& pk, int hd, double base) {
  double s = 0.0;
  for (int p = 0; p < hd / 2; ++p) {
    const double d = oracle_angle(pk, p, hd, base) - oracle_angle(pq, p, hd, base);
    const double q0 = q[2 * p], q1 = q[2 * p + 1], k0 = k[2 * p], k1 = k[2 * p + 1];
    s += (q0 * k0 + q1 * k1) * std::cos(d) + (q1 * k0 - q0 * k1) * std::sin(d);
  }
  return s;
}

GridPosition random_position(Rng& rng) { return {rng.uniform(), rng.uniform()}; }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Dense softmax(Q K^T / sqrt(d)) with the oracle rotation, all in double.
std::vector<double> dense_reference(const Tensor<double>& q, const std::vector<GridPosition>& qp,
                                    const Tensor<double>& k, const std::vector<GridPosition>& kp, double base) {
  const int n = q.dim(0), m = k.dim(0), d = q.dim(1);
  auto rotate = [&](const Tensor<double>& x, int row, const GridPosition& pos) {
    std::vector<double> out(static_cast<std::size_t>(d));
    for (int p = 0; p < d / 2; ++p) {
      const double a = oracle_angle(pos, p, d, base);
      const double x0 = x.data[row * d + 2 * p], x1 = x.data[row * d + 2 * p + 1];
      out[2 * p] = x0 * std::cos(a) - x1 * std::sin(a);
      out[2 * p + 1] = x0 * std::sin(a) + x1 * std::cos(a);
    }
    return out;
  };
  std::vector<double> a(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    const auto qi = rotate(q, i, qp[i]);
    double mx = -1e300;
    for (int j = 0; j < m; ++j) {
      a[i * m + j] = dot(qi, rotate(k, j, kp[j])) / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, a[i * m + j]);
    }
    double z = 0;
    for (int j = 0; j < m; ++j) z += (a[i * m + j] = std::exp(a[i * m + j] - mx));
    for (int j = 0; j < m; ++j) a[i * m + j] /= z;
  }
  return a;
}

}  // namespace

TEST(GridPositions, HalfPixelCentres) {
  const auto p = grid_positions(2, 4);
  ASSERT_EQ(p.size(), 8u);
  EXPECT_DOUBLE_EQ(p[0].row, 0.25);
  EXPECT_DOUBLE_EQ(p[0].col, 0.125);
  EXPECT_DOUBLE_EQ(p[7].row, 0.75);
  EXPECT_DOUBLE_EQ(p[7].col, 0.875);
  const auto tail = grid_positions(2, 4, 1, 2);
  ASSERT_EQ(tail.size(), 4u);
  EXPECT_DOUBLE_EQ(tail[0].row, 0.75);
}

TEST(Rope, PreservesNormPerToken) {
  Rng rng(3);
  const RopeConfig cfg{16, 100.0};
  auto x = test::random_tensor<float>({2, 5, 16}, 11);
  std::vector<GridPosition> pos;
  for (int i = 0; i < 5; ++i) pos.push_back(random_position(rng));
  const auto y = rope_apply(x, pos, cfg);
  for (int t = 0; t < 10; ++t) {
    double nx = 0, ny = 0;
    for (int c = 0; c < 16; ++c) {
      nx += x.data[t * 16 + c] * x.data[t * 16 + c];
      ny += y.data[t * 16 + c] * y.data[t * 16 + c];
    }
    EXPECT_NEAR(std::sqrt(nx), std::sqrt(ny), 1e-5);
  }
}

TEST(Rope, SamePositionCancelsInInnerProduct) {
  Rng rng(5);
  const RopeConfig cfg{8, 100.0};
  for (int trial = 0; trial < 20; ++trial) {
    auto q = test::random_tensor<double>({1, 8}, 100 + trial);
    auto k = test::random_tensor<double>({1, 8}, 200 + trial);
    const std::vector<GridPosition> pos{random_position(rng)};
    const auto rq = rope_apply(q, pos, cfg), rk = rope_apply(k, pos, cfg);
    const double before = dot({q.data.begin(), q.data.end()}, {k.data.begin(), k.data.end()});
    const double after = dot({rq.data.begin(), rq.data.end()}, {rk.data.begin(), rk.data.end()});
    EXPECT_NEAR(before, after, 1e-5);
  }
}

TEST(Rope, MatchesExplicitRelativeRotation) {
  Rng rng(17);
  for (int hd : {4, 8, 16}) {
    const RopeConfig cfg{hd, 100.0};
    for (int trial = 0; trial < 20; ++trial) {
      auto q = test::random_tensor<float>({1, hd}, 1000 + trial);
      auto k = test::random_tensor<float>({1, hd}, 2000 + trial);
      const GridPosition pq = random_position(rng), pk = random_position(rng);
      const auto rq = rope_apply(q, std::vector<GridPosition>{pq}, cfg);
      const auto rk = rope_apply(k, std::vector<GridPosition>{pk}, cfg);
      const double got = dot({rq.data.begin(), rq.data.end()}, {rk.data.begin(), rk.data.end()});
      const double want = relative_formula({q.data.begin(), q.data.end()}, {k.data.begin(), k.data.end()}, pq, pk, hd, 100.0);
      EXPECT_NEAR(got, want, 1e-5) << "hd=" << hd << " trial=" << trial;
    }
  }
}

TEST(Rope, RejectsHeadDimNotMultipleOfFour) {
  auto x = test::random_tensor<float>({1, 2, 6}, 1);
  const auto pos = grid_positions(1, 2);
  test::expect_error(ErrorKind::OddHeadDim, [&] { rope_apply(x, pos, RopeConfig{6, 100.0}); });
  test::expect_error(ErrorKind::OddHeadDim, [&] { RopeConfig{10, 100.0}.validate(); });
}

TEST(Rope, BackwardIsInverseRotation) {
  const RopeConfig cfg{8, 100.0};
  const auto pos = grid_positions(2, 2);
  std::vector<NamedTensor> params{{"x", test::random_tensor<float>({2, 4, 8}, 9)}};
  auto fn = [&](auto& p) { return sum(mul(rope_apply(p[0], pos, cfg), p[0])); };
  EXPECT_TRUE(grad_check(fn, params).passed);
}

namespace {

SftParams<float> identity_sft(int c, int d) {
  return {Tensor<float>({c, d}, 0.f), Tensor<float>({d}, 1.f), Tensor<float>({c, d}, 0.f), Tensor<float>({d}, 0.f)};
}

}  // namespace

TEST(Sft, IdentityModulationReturnsKeys) {
  auto k = test::random_tensor<float>({6, 3, 4}, 2);
  auto f = test::random_tensor<float>({5, 3, 4}, 3);
  const auto out = sft_modulate(k, f, identity_sft(5, 6));
  EXPECT_EQ(out.data, k.data);
}

TEST(Sft, ZeroKeysGiveBeta) {
  Tensor<float> k({6, 3, 4}, 0.f);
  auto f = test::random_tensor<float>({5, 3, 4}, 3);
  SftParams<float> p{test::random_tensor<float>({5, 6}, 4), test::random_tensor<float>({6}, 5),
                     test::random_tensor<float>({5, 6}, 6), test::random_tensor<float>({6}, 7)};
  const auto out = sft_modulate(k, f, p);
  const auto beta = channel_linear(f, p.beta_w, p.beta_b);
  EXPECT_EQ(out.data, beta.data);
}

TEST(Sft, GradientCheck) {
  std::vector<NamedTensor> params{{"k", test::random_tensor<float>({4, 2, 3}, 1)},
                                  {"f", test::random_tensor<float>({3, 2, 3}, 2)},
                                  {"gw", test::random_tensor<float>({3, 4}, 3)},
                                  {"gb", test::random_tensor<float>({4}, 4)},
                                  {"bw", test::random_tensor<float>({3, 4}, 5)},
                                  {"bb", test::random_tensor<float>({4}, 6)}};
  const auto w = test::random_tensor<float>({4, 2, 3}, 7);
  auto fn = [&](auto& p) {
    using T = typename std::decay_t<decltype(p)>::value_type::value_type;
    return sum(mul(sft_modulate(p[0], p[1], SftParams<T>{p[2], p[3], p[4], p[5]}), w.cast<T>()));
  };
  const auto r = grad_check(fn, params);
  EXPECT_TRUE(r.passed) << r.max_rel_err();
}

TEST(Sft, ShapeMismatch) {
  auto k = test::random_tensor<float>({6, 3, 4}, 2);
  auto f = test::random_tensor<float>({5, 3, 3}, 3);
  test::expect_error(ErrorKind::ShapeMismatch, [&] { sft_modulate(k, f, identity_sft(5, 6)); });
}

TEST(AttentionKernel, SingleKeyGivesAllOnesColumn) {
  auto q = test::random_tensor<float>({8, 5, 3}, 1, 10.0);
  auto k = test::random_tensor<float>({8, 1, 1}, 2, 10.0);
  const auto a = attention_kernel(q, k, 2, RopeConfig{4, 100.0});
  ASSERT_EQ(a.a.shape, (Shape{15, 1}));
  for (float v : a.a.data) EXPECT_EQ(v, 1.0f);
}

TEST(AttentionKernel, RowsSumToOneForEveryHeadCount) {
  for (int heads : {1, 2, 4, 8}) {
    const int d = 4 * heads * 2;
    auto q = test::random_tensor<float>({d, 6, 7}, 10 + heads, 3.0);
    auto k = test::random_tensor<float>({d, 3, 2}, 20 + heads, 3.0);
    const auto a = attention_kernel(q, k, heads, RopeConfig{d / heads, 100.0});
    ASSERT_EQ(a.a.shape, (Shape{42, 6}));
    EXPECT_EQ(a.heads_used, heads);
    for (int i = 0; i < 42; ++i) {
      double s = 0;
      for (int j = 0; j < 6; ++j) {
        EXPECT_GE(a.a.data[i * 6 + j], 0.0f);
        s += a.a.data[i * 6 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-5) << "heads=" << heads;
    }
  }
}

TEST(AttentionKernel, SingleHeadMatchesDenseReference) {
  const int d = 8;
  auto q = test::random_tensor<double>({7, d}, 31);
  auto k = test::random_tensor<double>({5, d}, 32);
  Rng rng(4);
  std::vector<GridPosition> qp, kp;
  for (int i = 0; i < 7; ++i) qp.push_back(random_position(rng));
  for (int i = 0; i < 5; ++i) kp.push_back(random_position(rng));
  const auto a = attention_rows(q, qp, k, kp, 1, RopeConfig{d, 100.0});
  const auto ref = dense_reference(q, qp, k, kp, 100.0);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(a.data[i], ref[i], 1e-6);

  const auto af = attention_rows(q.cast<float>(), qp, k.cast<float>(), kp, 1, RopeConfig{d, 100.0});
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(af.data[i], ref[i], 1e-6);
}

TEST(AttentionKernel, IdenticalHeadsAverageToSingleHead) {
  // Two heads carrying the same 4 channels reproduce the one-head kernel.
  auto q4 = test::random_tensor<float>({6, 4}, 41);
  auto k4 = test::random_tensor<float>({3, 4}, 42);
  Tensor<float> q8({6, 8}), k8({3, 8});
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 8; ++c) q8.data[i * 8 + c] = q4.data[i * 4 + c % 4];
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 8; ++c) k8.data[i * 8 + c] = k4.data[i * 4 + c % 4];
  const auto qp = grid_positions(2, 3), kp = grid_positions(1, 3);
  const auto one = attention_rows(q4, qp, k4, kp, 1, RopeConfig{4, 100.0});
  const auto two = attention_rows(q8, qp, k8, kp, 2, RopeConfig{4, 100.0});
  EXPECT_EQ(one.data, two.data);
}

TEST(AttentionKernel, RowSubsetsAreBitwiseSlices) {
  auto q = test::random_tensor<float>({20, 16}, 51);
  auto k = test::random_tensor<float>({6, 16}, 52);
  const auto qp = grid_positions(4, 5), kp = grid_positions(2, 3);
  const RopeConfig rope{4, 100.0};
  const auto full = attention_rows(q, qp, k, kp, 4, rope);
  const auto part = attention_rows(slice0(q, 10, 15), grid_positions(4, 5, 2, 3), k, kp, 4, rope);
  EXPECT_EQ(0, std::memcmp(part.data.data(), full.data.data() + 60, part.numel() * sizeof(float)));
}

TEST(AttentionKernel, KernelStatsTrackPeak) {
  auto q = test::random_tensor<float>({12, 8}, 1);
  auto k = test::random_tensor<float>({5, 8}, 2);
  KernelStats stats;
  attention_rows(q, grid_positions(3, 4), k, grid_positions(1, 5), 2, RopeConfig{4, 100.0}, &stats);
  EXPECT_EQ(stats.peak_kernel_floats, 60u);
}

TEST(AttentionKernel, IndivisibleHeads) {
  auto q = test::random_tensor<float>({12, 2, 2}, 1);
  test::expect_error(ErrorKind::IndivisibleHeads, [&] { attention_kernel(q, q, 5, RopeConfig{4, 100.0}); });
}

TEST(KernelApply, IdentityKernelReturnsFeatures) {
  AttentionKernel<float> a;
  a.a = Tensor<float>({6, 6}, 0.f);
  for (int i = 0; i < 6; ++i) a.a.data[i * 6 + i] = 1.f;
  a.query_h = a.key_h = 2;
  a.query_w = a.key_w = 3;
  auto f = test::random_tensor<float>({4, 2, 3}, 5);
  EXPECT_EQ(kernel_apply(a, f).data, f.data);
}

TEST(KernelApply, OutputsStayInChannelConvexHull) {
  auto q = test::random_tensor<float>({8, 9, 9}, 61, 4.0);
  auto k = test::random_tensor<float>({8, 3, 3}, 62, 4.0);
  auto f = test::random_tensor<float>({5, 3, 3}, 63);
  const auto out = kernel_apply(attention_kernel(q, k, 2, RopeConfig{4, 100.0}), f);
  for (int c = 0; c < 5; ++c) {
    const auto b = f.data.begin() + c * 9;
    const float lo = *std::min_element(b, b + 9), hi = *std::max_element(b, b + 9);
    for (int i = 0; i < 81; ++i) {
      EXPECT_GE(out.data[c * 81 + i], lo - 1e-5f);
      EXPECT_LE(out.data[c * 81 + i], hi + 1e-5f);
    }
  }
}

TEST(KernelApply, UniformKernelGivesSpatialMean) {
  AttentionKernel<float> a;
  a.a = Tensor<float>({4, 6}, 1.f / 6.f);
  a.query_h = a.query_w = 2;
  a.key_h = 2;
  a.key_w = 3;
  auto f = test::random_tensor<float>({3, 2, 3}, 7);
  const auto out = kernel_apply(a, f);
  for (int c = 0; c < 3; ++c) {
    double mean = 0;
    for (int j = 0; j < 6; ++j) mean += f.data[c * 6 + j];
    mean /= 6;
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data[c * 4 + i], mean, 1e-6);
  }
}

TEST(KernelApply, ShapeMismatch) {
  AttentionKernel<float> a;
  a.a = Tensor<float>({4, 6}, 1.f / 6.f);
  a.query_h = a.query_w = 2;
  a.key_h = 2;
  a.key_w = 3;
  auto f = test::random_tensor<float>({3, 3, 3}, 7);
  test::expect_error(ErrorKind::ShapeMismatch, [&] { kernel_apply(a, f); });
}
