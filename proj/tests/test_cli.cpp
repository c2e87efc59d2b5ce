#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "jafar/cli.hpp"
#include "jafar/io.hpp"
#include "test_util.hpp"

using namespace jafar;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "jafar");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("jafar_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string file(const std::string& name) const { return (dir_ / name).string(); }

  // 8-channel model, 2x2 features and a 16x16 guidance image
  void write_inputs(int ckpt_channels = 8) {
    Rng rng(5);
    const JafarParams p = init_params(rng, ckpt_channels, 16, 2, KeyStrategy::Sft);
    RunConfig run;
    run.encoder.c_out = ckpt_channels;
    write_checkpoint(file("m.ck"), p, run);
    write_feature_file(file("f.jfar"), FeatureMap::from_tensor(test::random_tensor<float>({8, 2, 2}, 6)));
    Rng img_rng(7);
    write_ppm(file("g.ppm"), synth_image(img_rng, 16));
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UnknownSubcommandAndMissingFlag) {
  Result r = run({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("UnknownSubcommand"), std::string::npos) << r.err;
  r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  r = run({"baseline", "--mode", "bilinear"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("MissingFlag"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
}

TEST_F(CliTest, BaselineOnConstantMapIsConstant) {
  write_feature_file(file("c.jfar"), FeatureMap(4, 3, 3, 0.25f));
  for (const char* mode : {"bilinear", "nearest"}) {
    const Result r = run({"baseline", "--mode", mode, "--features", file("c.jfar"), "--out-h", "7", "--out-w", "5",
                          "--out", file("o.jfar")});
    ASSERT_EQ(r.code, 0) << r.err;
    const FeatureMap o = read_feature_file(file("o.jfar"));
    EXPECT_EQ(o.height, 7);
    EXPECT_EQ(o.width, 5);
    for (float v : o.data) EXPECT_EQ(v, 0.25f);
  }
}

TEST_F(CliTest, MissingInputIsIoExit) {
  const Result r = run({"baseline", "--mode", "nearest", "--features", file("none.jfar"), "--out-h", "2", "--out-w",
                        "2", "--out", file("o.jfar")});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(file("o.jfar")));
}

TEST_F(CliTest, CorruptInputIsIoExit) {
  write_text_atomic(file("bad.jfar"), "JFAR but not really");
  const Result r = run({"baseline", "--mode", "nearest", "--features", file("bad.jfar"), "--out-h", "2", "--out-w",
                        "2", "--out", file("o.jfar")});
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST_F(CliTest, UpsampleChannelMismatchIsValidationExit) {
  write_inputs(16);
  const Result r = run({"upsample", "--ckpt", file("m.ck"), "--features", file("f.jfar"), "--image", file("g.ppm"),
                        "--out-h", "8", "--out-w", "8", "--out", file("u.jfar")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("ShapeMismatch"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(file("u.jfar")));
}

TEST_F(CliTest, UpsampleTiledMatchesMonolithic) {
  write_inputs();
  std::vector<std::string> base{"upsample", "--ckpt", file("m.ck"), "--features", file("f.jfar"), "--image",
                                file("g.ppm"), "--out-h", "8", "--out-w", "8", "--out"};
  auto mono = base, tiled = base;
  mono.push_back(file("a.jfar"));
  tiled.insert(tiled.end(), {file("b.jfar"), "--tile-rows", "3"});
  ASSERT_EQ(run(mono).code, 0);
  ASSERT_EQ(run(tiled).code, 0);
  EXPECT_EQ(read_file(file("a.jfar")), read_file(file("b.jfar")));
  EXPECT_EQ(read_feature_file(file("a.jfar")).channels, 8);
}

TEST_F(CliTest, VizAttnWritesNormalisedMap) {
  write_inputs();
  const Result r = run({"viz-attn", "--ckpt", file("m.ck"), "--features", file("f.jfar"), "--image", file("g.ppm"),
                        "--query", "3,4", "--out", file("a.pgm")});
  ASSERT_EQ(r.code, 0) << r.err;
  const SaliencyMap m = read_pgm(file("a.pgm"));
  EXPECT_EQ(m.height, 2);
  EXPECT_EQ(m.width, 2);
  EXPECT_EQ(*std::max_element(m.values.begin(), m.values.end()), 1.0f);
  EXPECT_EQ(run({"viz-attn", "--ckpt", file("m.ck"), "--features", file("f.jfar"), "--image", file("g.ppm"),
                 "--query", "16,0", "--out", file("b.pgm")})
                .code,
            1);
}

TEST_F(CliTest, VizPcaWritesOneImagePerInput) {
  write_feature_file(file("x.jfar"), FeatureMap::from_tensor(test::random_tensor<float>({5, 4, 4}, 1)));
  write_feature_file(file("y.jfar"), FeatureMap::from_tensor(test::random_tensor<float>({5, 3, 6}, 2)));
  const Result r = run({"viz-pca", "--inputs", file("x.jfar"), file("y.jfar"), "--out-prefix", file("pca")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_ppm(file("pca_0.ppm")).height, 4);
  EXPECT_EQ(read_ppm(file("pca_1.ppm")).width, 6);
}

TEST_F(CliTest, CamMetricsReportsAllScores) {
  write_text_atomic(file("s.csv"), "y,o\n0.8,0.6\n0.5,0.75\n");
  SaliencyMap a(4, 4), b(4, 4);
  for (int i = 0; i < 16; ++i) {
    a.values[i] = (i % 3) / 2.0f;
    b.values[i] = (i % 5) / 4.0f;
  }
  write_pgm(file("a.pgm"), a);
  write_pgm(file("b.pgm"), b);
  const Result r = run({"cam-metrics", "--scores", file("s.csv"), "--maps", file("a.pgm"), file("b.pgm")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* key : {"avg_drop", "avg_increase", "avg_gain", "coherency", "complexity", "adcc"}) {
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  }
  EXPECT_EQ(run({"cam-metrics", "--scores", file("s.csv"), "--maps", file("a.pgm")}).code, 1);
}

TEST_F(CliTest, TrainIsDeterministicAndCheckpoints) {
  write_text_atomic(file("t.cfg"),
                    "steps = 4\nbatch = 1\nhr_image_size = 32\ndelta_set = 16, 8\nd = 16\nn_heads = 2\n"
                    "checkpoint_every = 2\nlog_every = 2\n");
  const Result a = run({"--quiet", "train", "--config", file("t.cfg"), "--out", file("a.ck"), "--loss-csv", file("l.csv")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("final_loss"), std::string::npos);
  EXPECT_TRUE(fs::exists(file("a.ck.step2")));
  EXPECT_TRUE(fs::exists(file("l.csv")));
  ASSERT_EQ(run({"--quiet", "train", "--config", file("t.cfg"), "--out", file("b.ck")}).code, 0);
  EXPECT_EQ(read_file(file("a.ck")), read_file(file("b.ck")));
  ASSERT_EQ(run({"--quiet", "--seed", "43", "train", "--config", file("t.cfg"), "--out", file("c.ck")}).code, 0);
  EXPECT_NE(read_file(file("a.ck")), read_file(file("c.ck")));
  EXPECT_EQ(read_checkpoint(file("a.ck")).params.config.d, 16);
}

TEST_F(CliTest, GradcheckPasses) {
  const Result r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}
