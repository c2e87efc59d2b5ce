#include "jafar/training.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "jafar/ops.hpp"

namespace jafar {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view v, std::string_view key, int line) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    fail(ErrorKind::InvalidConfig,
         "line " + std::to_string(line) + ": bad value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

std::vector<int> parse_int_list(std::string_view v, std::string_view key, int line) {
  std::vector<int> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_number<int>(trim(v.substr(0, comma)), key, line));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) fail(ErrorKind::InvalidConfig, "line " + std::to_string(line) + ": empty list for " + std::string(key));
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate(int patch) const {
  auto bad = [](const std::string& m) { fail(ErrorKind::InvalidConfig, m); };
  if (steps < 0) bad("steps must be >= 0");
  if (batch < 1) bad("batch must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("betas must lie in [0, 1)");
  if (!(eps > 0.0)) bad("eps must be positive");
  if (weight_decay < 0.0) bad("weight_decay must be >= 0");
  if (checkpoint_every < 0 || log_every < 0) bad("checkpoint_every and log_every must be >= 0");
  if (hr_image_size < 16 || hr_image_size % patch != 0) {
    bad("hr_image_size " + std::to_string(hr_image_size) + " must be >= 16 and divisible by patch " +
        std::to_string(patch));
  }
  if (effective_guidance_size() < 1) bad("guidance_size must be >= 1");
  if (delta_set.empty()) bad("delta_set is empty");
  for (int lr_size : delta_set) {
    if (lr_size < patch || lr_size % patch != 0) {
      bad("delta_set size " + std::to_string(lr_size) + " is not a positive multiple of patch " + std::to_string(patch));
    }
    const double factor = static_cast<double>(hr_image_size) / lr_size;
    if (factor < 2.0 || factor > 4.0) {
      bad("delta_set size " + std::to_string(lr_size) + " gives factor " + fmt_double(factor) + " outside [2, 4]");
    }
  }
}

RunConfig parse_run_config(std::string_view text, RunConfig cfg) {
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view v = trim(line.substr(eq + 1));
    auto num_i = [&] { return parse_number<int>(v, key, line_no); };
    auto num_d = [&] { return parse_number<double>(v, key, line_no); };
    TrainConfig& t = cfg.train;
    if (key == "steps") t.steps = num_i();
    else if (key == "lr") t.lr = num_d();
    else if (key == "batch") t.batch = num_i();
    else if (key == "beta1") t.beta1 = num_d();
    else if (key == "beta2") t.beta2 = num_d();
    else if (key == "eps") t.eps = num_d();
    else if (key == "weight_decay") t.weight_decay = num_d();
    else if (key == "hr_image_size") t.hr_image_size = num_i();
    else if (key == "guidance_size") t.guidance_size = num_i();
    else if (key == "delta_set") t.delta_set = parse_int_list(v, key, line_no);
    else if (key == "seed") t.seed = parse_number<uint64_t>(v, key, line_no);
    else if (key == "checkpoint_every") t.checkpoint_every = num_i();
    else if (key == "log_every") t.log_every = num_i();
    else if (key == "d") cfg.model.d = num_i();
    else if (key == "n_heads") cfg.model.n_heads = num_i();
    else if (key == "key_strategy") cfg.model.key_strategy = parse_key_strategy(v);
    else if (key == "rope_base") cfg.model.rope_base = num_d();
    else if (key == "patch") cfg.encoder.patch = num_i();
    else if (key == "c_out") cfg.encoder.c_out = num_i();
    else if (key == "encoder_seed") cfg.encoder.seed = parse_number<uint64_t>(v, key, line_no);
    else fail(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
  }
  cfg.model.feature_channels = cfg.encoder.c_out;
  return cfg;
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  const TrainConfig& t = cfg.train;
  os << "steps = " << t.steps << "\nlr = " << fmt_double(t.lr) << "\nbatch = " << t.batch
     << "\nbeta1 = " << fmt_double(t.beta1) << "\nbeta2 = " << fmt_double(t.beta2) << "\neps = " << fmt_double(t.eps)
     << "\nweight_decay = " << fmt_double(t.weight_decay) << "\nhr_image_size = " << t.hr_image_size
     << "\nguidance_size = " << t.guidance_size << "\ndelta_set = ";
  for (std::size_t i = 0; i < t.delta_set.size(); ++i) os << (i ? "," : "") << t.delta_set[i];
  os << "\nseed = " << t.seed << "\ncheckpoint_every = " << t.checkpoint_every << "\nlog_every = " << t.log_every
     << "\nd = " << cfg.model.d << "\nn_heads = " << cfg.model.n_heads
     << "\nkey_strategy = " << to_string(cfg.model.key_strategy) << "\nrope_base = " << fmt_double(cfg.model.rope_base)
     << "\npatch = " << cfg.encoder.patch << "\nc_out = " << cfg.encoder.c_out
     << "\nencoder_seed = " << cfg.encoder.seed << "\n";
  return os.str();
}

ViewPair sample_view(Rng& rng, const TrainConfig& cfg, const StubEncoder& enc) {
  const Image hr = synth_image(rng, cfg.hr_image_size);
  const int last = static_cast<int>(cfg.delta_set.size()) - 1;
  const int lr_size = cfg.delta_set[static_cast<std::size_t>(rng.uniform_int(0, last))];
  ViewPair v;
  v.lr_size = lr_size;
  v.f_lr = enc.encode(image_resize(hr, lr_size, lr_size, ResizeMode::Bilinear));
  v.f_hr = enc.encode(hr);
  const int g = cfg.effective_guidance_size();
  v.guidance = image_resize(hr, g, g, ResizeMode::Bilinear);
  return v;
}

template <typename T>
Tensor<T> loss_cos_l2(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape != target.shape || pred.rank() < 2) {
    fail(ErrorKind::ShapeMismatch, "loss: prediction " + shape_string(pred.shape) + " vs target " +
                                       shape_string(target.shape));
  }
  const int c = pred.dim(0);
  const std::size_t locs = pred.numel() / static_cast<std::size_t>(c);
  constexpr double kEps = 1e-8;

  // Per-location quantities kept for the backward pass.
  struct Loc {
    double dot, np, nt, dist;
  };
  auto stats = std::make_shared<std::vector<Loc>>(locs);
  double total = 0.0;
  for (std::size_t l = 0; l < locs; ++l) {
    double dot = 0, pp = 0, tt = 0, dd = 0;
    for (int ch = 0; ch < c; ++ch) {
      const double p = pred.data[ch * locs + l], t = target.data[ch * locs + l];
      dot += p * t;
      pp += p * p;
      tt += t * t;
      dd += (p - t) * (p - t);
    }
    Loc s{dot, std::sqrt(pp), std::sqrt(tt), std::sqrt(dd)};
    (*stats)[l] = s;
    total += 1.0 - dot / (s.np * s.nt + kEps) + s.dist;
  }
  const double inv_locs = 1.0 / static_cast<double>(locs);

  const int pn = pred.node, tn = target.node;
  auto p_data = std::make_shared<std::vector<T>>(pred.data);
  auto t_data = std::make_shared<std::vector<T>>(target.data);
  return record_op<T>(
      OpKind::Custom, {1}, {static_cast<T>(total * inv_locs)}, {&pred, &target},
      [pn, tn, c, locs, inv_locs, stats, p_data, t_data](std::span<const T> g, Tape<T>& tape) {
        auto gp = tape.grad_slot(pn);
        auto gt = tape.grad_slot(tn);
        const double scale = static_cast<double>(g[0]) * inv_locs;
        for (std::size_t l = 0; l < locs; ++l) {
          const Loc& s = (*stats)[l];
          const double den = s.np * s.nt + kEps;
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t i = ch * locs + l;
            const double p = (*p_data)[i], t = (*t_data)[i];
            // d(-cos)/dp and d(dist)/dp; the norm terms vanish at zero vectors.
            double dp = -t / den;
            double dt = -p / den;
            if (s.np > 0) dp += s.dot * s.nt * (p / s.np) / (den * den);
            if (s.nt > 0) dt += s.dot * s.np * (t / s.nt) / (den * den);
            if (s.dist > 0) {
              dp += (p - t) / s.dist;
              dt -= (p - t) / s.dist;
            }
            if (!gp.empty()) gp[i] += static_cast<T>(scale * dp);
            if (!gt.empty()) gt[i] += static_cast<T>(scale * dt);
          }
        }
      });
}

double loss_cos_l2(const FeatureMap& pred, const FeatureMap& target) {
  return loss_cos_l2(pred.to_tensor<double>(), target.to_tensor<double>()).item();
}

template Tensor<float> loss_cos_l2(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> loss_cos_l2(const Tensor<double>&, const Tensor<double>&);

void adamw_step(const std::vector<Tensor<float>*>& params, const std::vector<std::vector<float>>& grads,
                AdamWState& state, const AdamWConfig& cfg, int t) {
  if (t < 1) fail(ErrorKind::InvalidConfig, "adamw step index must be >= 1");
  if (grads.size() != params.size()) {
    fail(ErrorKind::ShapeMismatch, std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                                       " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->numel()) {
      fail(ErrorKind::ShapeMismatch, "gradient " + std::to_string(i) + " has the wrong size");
    }
    for (float g : grads[i]) {
      if (!std::isfinite(g)) fail(ErrorKind::NonFiniteGradient, "non-finite gradient in parameter " + std::to_string(i));
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->numel(), 0.0);
      state.v[i].assign(params[i]->numel(), 0.0);
    }
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grads[i][k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      const double old = theta[k];
      theta[k] = static_cast<float>(old - cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps)) - cfg.lr * cfg.weight_decay * old);
    }
  }
}

TrainResult train(const TrainConfig& cfg, const StubEncoder& enc, JafarParams params,
                  const TrainCallbacks& callbacks) {
  cfg.validate(enc.config().patch);
  params.config.validate();
  if (params.config.feature_channels != enc.config().c_out) {
    fail(ErrorKind::ShapeMismatch, "model expects " + std::to_string(params.config.feature_channels) +
                                       " feature channels, encoder produces " + std::to_string(enc.config().c_out));
  }
  Rng rng(cfg.seed);
  const AdamWConfig opt{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
  AdamWState state;
  std::vector<Tensor<float>*> slots;
  params.weights.visit([&](std::string_view, Tensor<float>& t) { slots.push_back(&t); });

  TrainResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    Tape<float> tape;
    JafarWeights<float> w = params.weights;
    w.visit([&](std::string_view, Tensor<float>& t) { tape.watch(t); });

    Tensor<float> total;
    for (int b = 0; b < cfg.batch; ++b) {
      const ViewPair vp = sample_view(rng, cfg, enc);
      try {
        const Tensor<float> pred = forward_graph(params.config, w, vp.guidance.to_tensor<float>(),
                                                 vp.f_lr.to_tensor<float>(), vp.f_hr.height, vp.f_hr.width);
        const Tensor<float> l = loss_cos_l2(pred, vp.f_hr.to_tensor<float>());
        total = b == 0 ? l : add(total, l);
      } catch (const Error& e) {
        // a diverged model trips the softmax guard before the loss exists
        if (e.kind() != ErrorKind::NonFiniteInput) throw;
        fail(ErrorKind::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step) + " (" + e.what() + ")");
      }
    }
    const Tensor<float> loss = cfg.batch == 1 ? total : mul(total, 1.0f / static_cast<float>(cfg.batch));
    const double value = loss.item();
    if (!std::isfinite(value)) fail(ErrorKind::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step));
    result.loss_curve.push_back(value);
    tape.backward(loss);

    std::vector<std::vector<float>> grads;
    w.visit([&](std::string_view, const Tensor<float>& t) { grads.push_back(tape.grad(t).data); });
    adamw_step(slots, grads, state, opt, step);

    if (callbacks.on_log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps)) {
      callbacks.on_log(step, value);
    }
    if (callbacks.on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      callbacks.on_checkpoint(step, params);
    }
  }
  result.params = std::move(params);
  return result;
}

JafarParams initial_params(const RunConfig& run) {
  Rng rng(run.train.seed ^ 0xA5A5F00DCAFEBEEFull);
  ModelConfig model = run.model;
  model.feature_channels = run.encoder.c_out;
  return init_params(rng, model);
}

TrainResult train_run(const RunConfig& run, const TrainCallbacks& callbacks) {
  const StubEncoder enc(run.encoder);
  return train(run.train, enc, initial_params(run), callbacks);
}

}  // namespace jafar
