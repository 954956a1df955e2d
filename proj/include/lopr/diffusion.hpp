#pragma once

#include <string>
#include <vector>

#include "lopr/grid.hpp"
#include "lopr/layers.hpp"

namespace lopr::diffusion {

struct NoiseSchedule {
  int t_steps = 100;
  std::vector<double> betas;       // linear in [1e-4, 0.02]
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // running product, strictly decreasing

  static NoiseSchedule linear(int t_steps = 100, double beta_lo = 1e-4,
                              double beta_hi = 0.02);
};

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, eps ~ N(0, I).
// Returns (x_t, eps).
std::pair<Tensor, Tensor> forward_diffuse(const Tensor& x0, int t,
                                          const NoiseSchedule& schedule, RandomStream& rng);

// One refinement window: delta decoded frames plus the rasterized frame that
// precedes them. `target` carries the ground-truth frames during training.
// All planes live in the [-1, 1] diffusion scale.
struct RefinerWindow {
  Tensor frames;  // [delta, H, W] decoded conditioning
  Tensor anchor;  // [H, W]
  Tensor target;  // [delta, H, W]; undefined outside training
};

struct RefinerConfig {
  int grid_h = 128, grid_w = 128;
  int delta = 4;
  int t_steps = 100;
  int base_channels = 8;
  int time_embed_dim = 32;
  double lr = 4e-4;
  int batch_size = 2;
  int steps = 1200;
  std::uint64_t seed = 1;
};

// Small spatiotemporal U-Net (two resolutions); per-frame spatial convs with
// shared weights, a kernel-3 convolution along the temporal axis at the
// coarse resolution, conditioning concatenated channel-wise.
class DenoiseNet {
 public:
  DenoiseNet(RefinerConfig cfg, RandomStream& rng);

  const RefinerConfig& config() const { return cfg_; }

  Tensor forward(const Tensor& x_t, int t, const Tensor& cond, const Tensor& anchor) const;

  ParamMap parameters();
  void save(const std::string& path) const;
  static DenoiseNet load(const std::string& path);

 private:
  RefinerConfig cfg_;
  nn::Conv2d in_conv_;   // 3 -> b
  nn::Conv2d down_;      // b -> 2b, stride 2
  nn::Conv2d t_prev_, t_same_, t_next_;  // 1x1 temporal taps, 2b -> 2b
  nn::ConvT2d up_;       // 2b -> b
  nn::Conv2d out_conv_;  // b -> 1
  nn::Linear temb_in_;
  nn::Linear temb_b0_, temb_b1_, temb_b2_;

  Tensor time_bias(int t, const nn::Linear& head) const;
};

struct RefTrainRow {
  long step;
  double loss;
};

// Noise-prediction MSE over random (window, t) draws.
std::vector<RefTrainRow> train_refiner(DenoiseNet& net, const NoiseSchedule& schedule,
                                       const std::vector<RefinerWindow>& windows,
                                       RandomStream& rng);

struct RefineStats {
  double clamp_rate = 0.0;  // fraction of output cells clipped into [0,1]
};

// Ancestral DDPM sampling from pure noise, one window at a time. Outputs are
// mapped back to probabilities and clamped to [0,1].
std::vector<Tensor> refine(const DenoiseNet& net, const NoiseSchedule& schedule,
                           const std::vector<RefinerWindow>& windows, RandomStream& rng,
                           RefineStats* stats = nullptr);

// [0,1] probability grid -> [-1,1] plane and back.
Tensor grid_plane(const ogm::OccupancyGrid& g);
Tensor grids_window(const std::vector<ogm::OccupancyGrid>& frames, int from, int delta);
ogm::OccupancyGrid plane_to_grid(const Tensor& plane, const ogm::GridSpec& spec);

}  // namespace lopr::diffusion
