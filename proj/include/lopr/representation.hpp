#pragma once

#include <string>
#include <vector>

#include "lopr/grid.hpp"
#include "lopr/layers.hpp"
#include "lopr/ogm.hpp"

namespace lopr::rep {

struct VaeGanConfig {
  int grid_h = 128;
  int grid_w = 128;
  int latent_c = 8;  // paper-scale: 64
  std::vector<int> enc_channels = {8, 16, 24, 32, 48};  // one stride-2 stage each
  std::vector<int> disc_channels = {8, 16, 24, 32};
  double beta = 0.01;       // KL weight
  double adv_weight = 0.1;  // GAN loss weight on the generator
  double r1_weight = 10.0;
  int r1_interval = 8;  // lazy regularization: penalty applied every k-th D step
  double lr = 2e-4;
  int batch_size = 4;
  int steps = 2000;
  bool use_gan = true;
  std::uint64_t seed = 1;

  int latent_h() const { return grid_h >> static_cast<int>(enc_channels.size()); }
  int latent_w() const { return grid_w >> static_cast<int>(enc_channels.size()); }
};

struct GaussianPosterior {
  Tensor mu;       // [c, h, w]
  Tensor log_var;  // [c, h, w]
};

struct VaeLossParts {
  Tensor total, recon, kl;
};

class VaeGan {
 public:
  VaeGan(VaeGanConfig cfg, RandomStream& rng);

  const VaeGanConfig& config() const { return cfg_; }

  GaussianPosterior encode(const Tensor& grid) const;  // [1,H,W]
  Tensor decode(const Tensor& z) const;                // -> [1,H,W], values in (0,1)
  // One-scale discriminator logit (mean over patch responses); callers
  // average across scales.
  Tensor discriminator_logit(const Tensor& grid) const;

  ParamMap generator_params();
  ParamMap discriminator_params();

  void save(const std::string& path) const;
  static VaeGan load(const std::string& path);

 private:
  VaeGanConfig cfg_;
  std::vector<nn::Conv2d> enc_;
  nn::Conv2d enc_mu_, enc_log_var_;
  nn::Conv2d dec_in_;
  std::vector<nn::ConvT2d> dec_;
  nn::Conv2d dec_out_;
  std::vector<nn::Conv2d> disc_;
  nn::Conv2d disc_out_;
};

// Reparameterized draw: mu + exp(log_var/2) * eps. Gradients flow to both
// parameters.
Tensor sample_posterior(const GaussianPosterior& p, RandomStream& rng);

// recon = MSE + 0.5 * (MSE at /2 + MSE at /4); kl = closed-form
// KL(N(mu, sigma^2) || N(0, I)) averaged over latent elements;
// total = recon + beta * kl.
VaeLossParts vae_loss(const Tensor& x, const Tensor& xhat, const GaussianPosterior& p,
                      double beta);

// Non-saturating losses over a batch, discriminator applied at two input
// scales (full and /2) with the per-scale losses averaged. loss_D sees the
// fakes detached; loss_G differentiates through them.
std::pair<Tensor, Tensor> gan_losses(const std::vector<Tensor>& real,
                                     const std::vector<Tensor>& fake, const VaeGan& model);

struct RepTrainRow {
  long step;
  double recon, kl, loss_d, loss_g;
};

// Alternating updates: one discriminator step (with lazy R1 on real data),
// then one encoder/decoder step on L_VAE + adv_weight * loss_G. Aborts with
// TrainingError on non-finite losses. Returns the loss curve.
std::vector<RepTrainRow> train_representation(VaeGan& model,
                                              const std::vector<ogm::OccupancyGrid>& grids,
                                              RandomStream& rng);

Tensor grid_to_tensor(const ogm::OccupancyGrid& g);
ogm::OccupancyGrid tensor_to_grid(const Tensor& t, const ogm::GridSpec& spec);

}  // namespace lopr::rep
