#include "jafar/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "jafar/gradcheck_suite.hpp"
#include "jafar/io.hpp"
#include "jafar/metrics.hpp"

namespace jafar {
namespace {

constexpr uint64_t kHeldOutSeedOffset = 1000003;

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::IoError:
    case ErrorKind::BadMagic:
    case ErrorKind::TruncatedFile:
    case ErrorKind::UnsupportedVersion:
    case ErrorKind::HeaderPayloadMismatch:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

std::string text_of(const std::vector<uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

std::vector<int> parse_int_list(const std::string& s, const char* flag) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data() + pos, s.data() + comma, v);
    if (ec != std::errc() || p != s.data() + comma) {
      fail(ErrorKind::InvalidConfig, std::string(flag) + ": expected comma-separated integers, got '" + s + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

std::string fmt(double v, const char* pattern = "%.6g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::vector<ScorePair> parse_scores(const std::string& text) {
  std::vector<ScorePair> pairs;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      fail(ErrorKind::InvalidConfig, "scores line " + std::to_string(line_no) + ": expected y,o");
    }
    try {
      pairs.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    } catch (const std::logic_error&) {
      if (line_no == 1) continue;  // header row
      fail(ErrorKind::InvalidConfig, "scores line " + std::to_string(line_no) + ": not numeric");
    }
  }
  return pairs;
}

struct Globals {
  uint64_t seed = 42;
  bool quiet = false;
};

int cmd_train(const Globals& g, const std::string& config_path, const std::string& out_path,
              const std::string& loss_csv, std::ostream& out, std::ostream& err) {
  RunConfig defaults;
  defaults.train.seed = g.seed;
  const RunConfig run = parse_run_config(text_of(read_file(config_path)), defaults);
  TrainCallbacks cb;
  if (!g.quiet) cb.on_log = [&err](int step, double loss) { err << "step " << step << " loss " << fmt(loss) << "\n"; };
  cb.on_checkpoint = [&](int step, const JafarParams& p) {
    write_checkpoint(out_path + ".step" + std::to_string(step), p, run);
  };
  const TrainResult r = train_run(run, cb);
  write_checkpoint(out_path, r.params, run);
  if (!loss_csv.empty()) {
    std::ostringstream os;
    os << "step,loss\n";
    for (std::size_t i = 0; i < r.loss_curve.size(); ++i) os << i + 1 << "," << fmt(r.loss_curve[i], "%.9g") << "\n";
    write_text_atomic(loss_csv, os.str());
  }
  if (!r.loss_curve.empty()) out << "final_loss " << fmt(r.loss_curve.back(), "%.9g") << "\n";
  return kExitOk;
}

int cmd_upsample(const std::string& ckpt, const std::string& features, const std::string& image, int out_h, int out_w,
                 int tile_rows, const std::string& out_path) {
  const Checkpoint ck = read_checkpoint(ckpt);
  const UpsampleRequest req{read_ppm(image), read_feature_file(features), out_h, out_w};
  write_feature_file(out_path, tile_rows > 0 ? upsample_tiled(ck.params, req, tile_rows) : forward(ck.params, req));
  return kExitOk;
}

int cmd_baseline(const std::string& mode, const std::string& features, int out_h, int out_w,
                 const std::string& out_path) {
  const ResizeMode m = mode == "nearest" ? ResizeMode::Nearest : ResizeMode::Bilinear;
  write_feature_file(out_path, feature_resize(read_feature_file(features), out_h, out_w, m));
  return kExitOk;
}

int cmd_eval_gen(const Globals& g, const std::string& ckpt, int images, const std::string& factors_s, int base,
                 int tile_rows, const std::string& csv, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = read_checkpoint(ckpt);
  GeneralizationConfig cfg;
  cfg.base = base;
  cfg.factors = parse_int_list(factors_s, "--factors");
  cfg.tile_rows = tile_rows;
  if (images < 1) fail(ErrorKind::InvalidConfig, "--images must be >= 1");
  const int max_factor = *std::max_element(cfg.factors.begin(), cfg.factors.end());
  if (!g.quiet) err << "rendering " << images << " held-out scenes at " << max_factor * base << "px\n";
  const auto held_out = held_out_images(g.seed + kHeldOutSeedOffset, images, std::max(16, max_factor * base));
  const GeneralizationReport rep = generalization_eval(ck.params, StubEncoder(ck.run.encoder), held_out, cfg);
  out << rep.table();
  if (!csv.empty()) write_text_atomic(csv, rep.csv());
  return kExitOk;
}

int cmd_gradcheck(const Globals& g, double tol, double composite_tol, std::ostream& out) {
  bool ok = true;
  auto report = [&](const std::string& name, const GradCheckReport& r) {
    out << (r.passed ? "PASS " : "FAIL ") << name << " max_rel_err=" << fmt(r.max_rel_err(), "%.3e") << "\n";
    ok = ok && r.passed;
  };
  for (const GradCase& c : op_gradient_cases(g.seed)) {
    GradCheckOptions opts;
    opts.tol = tol;
    opts.max_entries = c.max_entries;
    opts.seed = g.seed;
    report(c.name, grad_check(c.fn, c.params, opts));
  }
  for (const char* s : {"sft", "no_sft", "concat", "linear_projection"}) {
    const GradCase c = composite_gradient_case(g.seed, s);
    GradCheckOptions opts;
    opts.tol = composite_tol;
    opts.seed = g.seed;
    report(c.name, grad_check(c.fn, c.params, opts));
  }
  return ok ? kExitOk : kExitValidation;
}

int cmd_viz_pca(const std::vector<std::string>& inputs, const std::string& prefix, std::ostream& err, bool quiet) {
  std::vector<FeatureMap> maps;
  for (const auto& p : inputs) maps.push_back(read_feature_file(p));
  const PcaProjection proj = pca_rgb(maps);
  if (proj.degenerate && !quiet) {
    err << "DegenerateCovariance: only " << proj.rank << " principal directions; missing channels set to 0.5\n";
  }
  for (std::size_t i = 0; i < proj.images.size(); ++i) {
    write_ppm(prefix + "_" + std::to_string(i) + ".ppm", proj.images[i]);
  }
  return kExitOk;
}

int cmd_viz_attn(const std::string& ckpt, const std::string& features, const std::string& image,
                 const std::string& query, int out_h, int out_w, const std::string& out_path) {
  const Checkpoint ck = read_checkpoint(ckpt);
  const Image guidance = read_ppm(image);
  const auto q = parse_int_list(query, "--query");
  if (q.size() != 2) fail(ErrorKind::InvalidConfig, "--query expects i,j");
  const UpsampleRequest req{guidance, read_feature_file(features), out_h > 0 ? out_h : guidance.height,
                            out_w > 0 ? out_w : guidance.width};
  const FeatureMap row = export_attention_row(ck.params, req, q[0], q[1]);
  SaliencyMap map(row.height, row.width);
  const float peak = *std::max_element(row.data.begin(), row.data.end());
  for (std::size_t i = 0; i < map.values.size(); ++i) map.values[i] = peak > 0 ? row.data[i] / peak : 0.0f;
  write_pgm(out_path, map);
  return kExitOk;
}

int cmd_cam_metrics(const std::string& scores_path, const std::vector<std::string>& maps, std::ostream& out) {
  const auto pairs = parse_scores(text_of(read_file(scores_path)));
  if (pairs.empty()) fail(ErrorKind::InvalidConfig, "no score pairs in " + scores_path);
  if (maps.empty() || maps.size() % 2 != 0) {
    fail(ErrorKind::InvalidConfig, "--maps takes CAM / re-CAM pairs: cam0 recam0 cam1 recam1 ...");
  }
  double coh = 0, cplx = 0;
  const std::size_t n_pairs = maps.size() / 2;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const SaliencyMap cam = read_pgm(maps[2 * i]);
    const SaliencyMap recam = read_pgm(maps[2 * i + 1]);
    coh += coherency(cam, recam);
    cplx += complexity(cam);
  }
  coh /= static_cast<double>(n_pairs);
  cplx /= static_cast<double>(n_pairs);
  const double ad = avg_drop(pairs);
  const GainResult gain = avg_gain(pairs);
  out << "avg_drop " << fmt(ad, "%.4f") << "\n";
  out << "avg_increase " << fmt(avg_increase(pairs), "%.4f") << "\n";
  out << "avg_gain " << fmt(gain.percent, "%.4f") << " (skipped " << gain.skipped << ")\n";
  out << "coherency " << fmt(coh, "%.4f") << "\n";
  out << "complexity " << fmt(cplx, "%.4f") << "\n";
  out << "adcc " << fmt(adcc(coh, cplx, ad), "%.4f") << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"JAFAR feature upsampler"};
  app.name("jafar");
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic path")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  std::string config, out_path, ckpt, features, image, mode = "bilinear", factors = "2,4,8", csv, query, prefix,
                                                          scores, loss_csv;
  int out_h = 0, out_w = 0, tile_rows = 0, images = 50, base = 32;
  double tol = 1e-4, composite_tol = 1e-3;
  std::vector<std::string> inputs, maps;

  auto* train = app.add_subcommand("train", "Train on synthetic multi-resolution views");
  train->add_option("--config", config, "key = value run file")->required();
  train->add_option("--out", out_path, "Checkpoint path")->required();
  train->add_option("--loss-csv", loss_csv, "Optional per-step loss curve");

  auto* upsample = app.add_subcommand("upsample", "Upsample a feature file with a trained model");
  upsample->add_option("--ckpt", ckpt)->required();
  upsample->add_option("--features", features)->required();
  upsample->add_option("--image", image, "Guidance image (PPM)")->required();
  upsample->add_option("--out-h", out_h)->required()->check(CLI::PositiveNumber);
  upsample->add_option("--out-w", out_w)->required()->check(CLI::PositiveNumber);
  upsample->add_option("--out", out_path)->required();
  upsample->add_option("--tile-rows", tile_rows, "Query rows per tile (0 = monolithic)")->check(CLI::NonNegativeNumber);

  auto* baseline = app.add_subcommand("baseline", "Training-free resize baseline");
  baseline->add_option("--mode", mode)->required()->check(CLI::IsMember({"nearest", "bilinear"}));
  baseline->add_option("--features", features)->required();
  baseline->add_option("--out-h", out_h)->required()->check(CLI::PositiveNumber);
  baseline->add_option("--out-w", out_w)->required()->check(CLI::PositiveNumber);
  baseline->add_option("--out", out_path)->required();

  auto* eval_gen = app.add_subcommand("eval-gen", "Compare JAFAR with baselines across upsampling factors");
  eval_gen->add_option("--ckpt", ckpt)->required();
  eval_gen->add_option("--images", images)->capture_default_str();
  eval_gen->add_option("--factors", factors)->capture_default_str();
  eval_gen->add_option("--base", base, "Low-resolution image side")->capture_default_str()->check(CLI::PositiveNumber);
  eval_gen->add_option("--tile-rows", tile_rows)->check(CLI::NonNegativeNumber);
  eval_gen->add_option("--csv", csv);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and the full model");
  gradcheck->add_option("--tol", tol, "Per-op tolerance")->capture_default_str();
  gradcheck->add_option("--composite-tol", composite_tol, "Full-model tolerance")->capture_default_str();

  auto* viz_pca = app.add_subcommand("viz-pca", "Shared 3-component PCA of feature files as PPM");
  viz_pca->add_option("--inputs", inputs)->required()->expected(1, -1);
  viz_pca->add_option("--out-prefix", prefix)->required();

  auto* viz_attn = app.add_subcommand("viz-attn", "Attention of one output cell over the key grid as PGM");
  viz_attn->add_option("--ckpt", ckpt)->required();
  viz_attn->add_option("--features", features)->required();
  viz_attn->add_option("--image", image)->required();
  viz_attn->add_option("--query", query, "i,j in the output grid")->required();
  viz_attn->add_option("--out-h", out_h, "Output grid height (default: image height)");
  viz_attn->add_option("--out-w", out_w, "Output grid width (default: image width)");
  viz_attn->add_option("--out", out_path)->required();

  auto* cam = app.add_subcommand("cam-metrics", "CAM faithfulness scores from score pairs and maps");
  cam->add_option("--scores", scores, "CSV with columns y,o")->required();
  cam->add_option("--maps", maps, "CAM / re-CAM PGM pairs")->required()->expected(1, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::RequiredError& e) {
    const bool no_sub = app.get_subcommands().empty();
    err << (no_sub ? "UnknownSubcommand: " : "MissingFlag: ") << e.what() << "\n";
    return kExitValidation;
  } catch (const CLI::ExtrasError& e) {
    err << (app.get_subcommands().empty() ? "UnknownSubcommand: " : "InvalidConfig: ") << e.what() << "\n";
    return kExitValidation;
  } catch (const CLI::ParseError& e) {
    err << "InvalidConfig: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (train->parsed()) return cmd_train(g, config, out_path, loss_csv, out, err);
    if (upsample->parsed()) return cmd_upsample(ckpt, features, image, out_h, out_w, tile_rows, out_path);
    if (baseline->parsed()) return cmd_baseline(mode, features, out_h, out_w, out_path);
    if (eval_gen->parsed()) return cmd_eval_gen(g, ckpt, images, factors, base, tile_rows, csv, out, err);
    if (gradcheck->parsed()) return cmd_gradcheck(g, tol, composite_tol, out);
    if (viz_pca->parsed()) return cmd_viz_pca(inputs, prefix, err, g.quiet);
    if (viz_attn->parsed()) return cmd_viz_attn(ckpt, features, image, query, out_h, out_w, out_path);
    if (cam->parsed()) return cmd_cam_metrics(scores, maps, out);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  err << "UnknownSubcommand: no subcommand given\n";
  return kExitValidation;
}

}  // namespace jafar
