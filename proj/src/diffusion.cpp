#include "lopr/diffusion.hpp"

#include <cmath>

#include "lopr/checkpoint.hpp"
#include "lopr/predictor.hpp"

namespace lopr::diffusion {

NoiseSchedule NoiseSchedule::linear(int t_steps, double beta_lo, double beta_hi) {
  if (t_steps < 1) throw ContractError("schedule needs at least one step");
  NoiseSchedule s;
  s.t_steps = t_steps;
  s.betas.resize(static_cast<size_t>(t_steps));
  s.alphas.resize(static_cast<size_t>(t_steps));
  s.alpha_bars.resize(static_cast<size_t>(t_steps));
  double bar = 1.0;
  for (int t = 0; t < t_steps; ++t) {
    const double frac = t_steps > 1 ? static_cast<double>(t) / (t_steps - 1) : 0.0;
    const double beta = beta_lo + (beta_hi - beta_lo) * frac;
    s.betas[static_cast<size_t>(t)] = beta;
    s.alphas[static_cast<size_t>(t)] = 1.0 - beta;
    bar *= 1.0 - beta;
    s.alpha_bars[static_cast<size_t>(t)] = bar;
  }
  return s;
}

std::pair<Tensor, Tensor> forward_diffuse(const Tensor& x0, int t,
                                          const NoiseSchedule& schedule, RandomStream& rng) {
  if (t < 0 || t >= schedule.t_steps) {
    throw ContractError("diffusion step " + std::to_string(t) + " outside [0, " +
                        std::to_string(schedule.t_steps) + ")");
  }
  const double abar = schedule.alpha_bars[static_cast<size_t>(t)];
  Tensor eps = Tensor::randn(x0.shape(), rng);
  Tensor x_t = add(mul_scalar(x0, std::sqrt(abar)), mul_scalar(eps, std::sqrt(1.0 - abar)));
  return {x_t, eps};
}

DenoiseNet::DenoiseNet(RefinerConfig cfg, RandomStream& rng) : cfg_(std::move(cfg)) {
  const int b = cfg_.base_channels;
  in_conv_ = nn::Conv2d(3, b, 3, 1, 1, rng);
  down_ = nn::Conv2d(b, 2 * b, 4, 2, 1, rng);
  t_prev_ = nn::Conv2d(2 * b, 2 * b, 1, 1, 0, rng);
  t_same_ = nn::Conv2d(2 * b, 2 * b, 1, 1, 0, rng);
  t_next_ = nn::Conv2d(2 * b, 2 * b, 1, 1, 0, rng);
  up_ = nn::ConvT2d(2 * b, b, 4, 2, 1, rng);
  out_conv_ = nn::Conv2d(b, 1, 3, 1, 1, rng);
  temb_in_ = nn::Linear(cfg_.time_embed_dim, cfg_.time_embed_dim, rng);
  temb_b0_ = nn::Linear(cfg_.time_embed_dim, b, rng);
  temb_b1_ = nn::Linear(cfg_.time_embed_dim, 2 * b, rng);
  temb_b2_ = nn::Linear(cfg_.time_embed_dim, 2 * b, rng);
}

Tensor DenoiseNet::time_bias(int t, const nn::Linear& head) const {
  Tensor pe = pred::positional_encoding(t, cfg_.time_embed_dim);
  Tensor h = gelu(temb_in_.forward(pe));
  Tensor bias = head.forward(h);  // [1, channels]
  return reshape(bias, {bias.dim(1)});
}

Tensor DenoiseNet::forward(const Tensor& x_t, int t, const Tensor& cond,
                           const Tensor& anchor) const {
  const int delta = cfg_.delta, h = cfg_.grid_h, w = cfg_.grid_w;
  if (x_t.shape() != Shape{delta, h, w} || cond.shape() != Shape{delta, h, w}) {
    throw DimensionError("denoise_net expects windows of shape [" + std::to_string(delta) +
                         "," + std::to_string(h) + "," + std::to_string(w) + "], got " +
                         shape_str(x_t.shape()) + " and " + shape_str(cond.shape()));
  }
  if (anchor.size() != static_cast<std::int64_t>(h) * w) {
    throw DimensionError("anchor shape " + shape_str(anchor.shape()) + " does not match grid");
  }
  Tensor anchor_plane = reshape(anchor, {1, h, w});
  Tensor bias0 = time_bias(t, temb_b0_);
  Tensor bias1 = time_bias(t, temb_b1_);
  Tensor bias2 = time_bias(t, temb_b2_);

  std::vector<Tensor> skips, coarse;
  for (int f = 0; f < delta; ++f) {
    Tensor stack = concat({narrow(x_t, 0, f, 1), narrow(cond, 0, f, 1), anchor_plane}, 0);
    Tensor h0 = gelu(nn::add_channel_bias(in_conv_.forward(stack), bias0));
    skips.push_back(h0);
    coarse.push_back(gelu(nn::add_channel_bias(down_.forward(h0), bias1)));
  }
  std::vector<Tensor> mixed(static_cast<size_t>(delta));
  for (int f = 0; f < delta; ++f) {
    Tensor acc = t_same_.forward(coarse[static_cast<size_t>(f)]);
    if (f > 0) acc = add(acc, t_prev_.forward(coarse[static_cast<size_t>(f) - 1]));
    if (f + 1 < delta) acc = add(acc, t_next_.forward(coarse[static_cast<size_t>(f) + 1]));
    mixed[static_cast<size_t>(f)] = gelu(nn::add_channel_bias(acc, bias2));
  }
  std::vector<Tensor> outs;
  for (int f = 0; f < delta; ++f) {
    Tensor u = gelu(add(up_.forward(mixed[static_cast<size_t>(f)]),
                        skips[static_cast<size_t>(f)]));
    outs.push_back(out_conv_.forward(u));
  }
  return concat(outs, 0);  // [delta, h, w]
}

ParamMap DenoiseNet::parameters() {
  ParamMap p;
  in_conv_.collect(p, "unet.in");
  down_.collect(p, "unet.down");
  t_prev_.collect(p, "unet.t_prev");
  t_same_.collect(p, "unet.t_same");
  t_next_.collect(p, "unet.t_next");
  up_.collect(p, "unet.up");
  out_conv_.collect(p, "unet.out");
  temb_in_.collect(p, "unet.temb_in");
  temb_b0_.collect(p, "unet.temb_b0");
  temb_b1_.collect(p, "unet.temb_b1");
  temb_b2_.collect(p, "unet.temb_b2");
  return p;
}

void DenoiseNet::save(const std::string& path) const {
  std::vector<std::pair<std::string, Tensor>> tensors;
  auto* self = const_cast<DenoiseNet*>(this);
  for (const Param& p : self->parameters()) tensors.emplace_back(p.name, p.tensor);
  std::vector<double> meta{static_cast<double>(cfg_.grid_h),
                           static_cast<double>(cfg_.grid_w),
                           static_cast<double>(cfg_.delta),
                           static_cast<double>(cfg_.t_steps),
                           static_cast<double>(cfg_.base_channels),
                           static_cast<double>(cfg_.time_embed_dim)};
  tensors.emplace_back("config.meta", Tensor::from_data({static_cast<int>(meta.size())}, meta));
  save_checkpoint(path, tensors);
}

DenoiseNet DenoiseNet::load(const std::string& path) {
  auto tensors = load_checkpoint(path);
  const Tensor* meta = nullptr;
  for (const auto& [n, t] : tensors) {
    if (n == "config.meta") meta = &t;
  }
  if (!meta) throw FormatError("refiner checkpoint missing config.meta", 0);
  RefinerConfig cfg;
  cfg.grid_h = static_cast<int>(meta->at(0));
  cfg.grid_w = static_cast<int>(meta->at(1));
  cfg.delta = static_cast<int>(meta->at(2));
  cfg.t_steps = static_cast<int>(meta->at(3));
  cfg.base_channels = static_cast<int>(meta->at(4));
  cfg.time_embed_dim = static_cast<int>(meta->at(5));
  RandomStream rng(0);
  DenoiseNet net(cfg, rng);
  ParamMap params = net.parameters();
  load_into(path, params);
  return net;
}

std::vector<RefTrainRow> train_refiner(DenoiseNet& net, const NoiseSchedule& schedule,
                                       const std::vector<RefinerWindow>& windows,
                                       RandomStream& rng) {
  if (windows.empty()) throw ContractError("train_refiner requires windows");
  for (const RefinerWindow& w : windows) {
    if (!w.target.defined()) throw ContractError("training windows need ground-truth targets");
  }
  const RefinerConfig& cfg = net.config();
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  AdamW opt(net.parameters(), opt_cfg);
  std::vector<RefTrainRow> curve;
  curve.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    ComputationTape tape;
    TapeGuard guard(tape);
    std::vector<Tensor> losses;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const RefinerWindow& w = windows[static_cast<size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(windows.size()) - 1))];
      const int t = static_cast<int>(rng.uniform_int(0, cfg.t_steps - 1));
      auto [x_t, eps] = forward_diffuse(w.target, t, schedule, rng);
      Tensor pred = net.forward(x_t, t, w.frames, w.anchor);
      losses.push_back(reshape(mse(pred, eps), {1, 1}));
    }
    Tensor objective =
        mul_scalar(sum_all(concat(losses, 0)), 1.0 / static_cast<double>(losses.size()));
    const double loss_val = objective.item();
    if (!std::isfinite(loss_val)) {
      throw TrainingError("non-finite refiner loss at step " + std::to_string(step), "eps_mse",
                          step);
    }
    opt.zero_grad();
    tape.backward(objective);
    opt.step();
    curve.push_back({step, loss_val});
  }
  return curve;
}

std::vector<Tensor> refine(const DenoiseNet& net, const NoiseSchedule& schedule,
                           const std::vector<RefinerWindow>& windows, RandomStream& rng,
                           RefineStats* stats) {
  NoGradGuard ng;
  const RefinerConfig& cfg = net.config();
  std::vector<Tensor> out;
  std::int64_t clamped = 0, total = 0;
  for (const RefinerWindow& w : windows) {
    Tensor x = Tensor::randn({cfg.delta, cfg.grid_h, cfg.grid_w}, rng);
    for (int t = schedule.t_steps - 1; t >= 0; --t) {
      const double beta = schedule.betas[static_cast<size_t>(t)];
      const double alpha = schedule.alphas[static_cast<size_t>(t)];
      const double abar = schedule.alpha_bars[static_cast<size_t>(t)];
      Tensor eps_hat = net.forward(x, t, w.frames, w.anchor);
      Tensor mean = mul_scalar(sub(x, mul_scalar(eps_hat, beta / std::sqrt(1.0 - abar))),
                               1.0 / std::sqrt(alpha));
      if (t > 0) {
        const double abar_prev = schedule.alpha_bars[static_cast<size_t>(t) - 1];
        const double var = beta * (1.0 - abar_prev) / (1.0 - abar);
        x = add(mean, mul_scalar(Tensor::randn(mean.shape(), rng), std::sqrt(var)));
      } else {
        x = mean;
      }
    }
    // back to probabilities
    Tensor p = mul_scalar(add_scalar(x, 1.0), 0.5);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      double& v = p.data()[i];
      if (v < 0.0 || v > 1.0) {
        v = std::min(1.0, std::max(0.0, v));
        ++clamped;
      }
      ++total;
    }
    out.push_back(p);
  }
  if (stats) stats->clamp_rate = total ? static_cast<double>(clamped) / total : 0.0;
  return out;
}

Tensor grid_plane(const ogm::OccupancyGrid& g) {
  std::vector<double> v(g.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = 2.0 * g.values[i] - 1.0;
  return Tensor::from_data({g.spec.h, g.spec.w}, std::move(v));
}

Tensor grids_window(const std::vector<ogm::OccupancyGrid>& frames, int from, int delta) {
  if (frames.empty() || from < 0 || from >= static_cast<int>(frames.size())) {
    throw ContractError("grids_window: bad frame range");
  }
  std::vector<Tensor> planes;
  for (int f = 0; f < delta; ++f) {
    // partial windows pad by repeating the final frame
    const int idx = std::min<int>(from + f, static_cast<int>(frames.size()) - 1);
    const ogm::OccupancyGrid& g = frames[static_cast<size_t>(idx)];
    planes.push_back(reshape(grid_plane(g), {1, g.spec.h, g.spec.w}));
  }
  return concat(planes, 0);
}

ogm::OccupancyGrid plane_to_grid(const Tensor& plane, const ogm::GridSpec& spec) {
  ogm::OccupancyGrid g(spec);
  for (std::int64_t i = 0; i < plane.size(); ++i) {
    g.values[static_cast<size_t>(i)] = std::min(1.0, std::max(0.0, 0.5 * (plane.at(i) + 1.0)));
  }
  return g;
}

}  // namespace lopr::diffusion
