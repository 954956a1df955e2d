#include "lopr/representation.hpp"

#include <cmath>

#include "lopr/checkpoint.hpp"

namespace lopr::rep {

namespace {

void validate(const VaeGanConfig& cfg) {
  const int n = static_cast<int>(cfg.enc_channels.size());
  if (n < 1) throw ContractError("VaeGan needs at least one encoder stage");
  if ((cfg.grid_h >> n) < 1 || (cfg.grid_h % (1 << n)) != 0 ||
      (cfg.grid_w % (1 << n)) != 0) {
    throw ContractError("grid extent must be divisible by 2^stages");
  }
  if (cfg.beta < 0.0) throw ContractError("beta must be >= 0");
}

}  // namespace

VaeGan::VaeGan(VaeGanConfig cfg, RandomStream& rng) : cfg_(std::move(cfg)) {
  validate(cfg_);
  int cin = 1;
  for (int cout : cfg_.enc_channels) {
    enc_.emplace_back(cin, cout, 4, 2, 1, rng);
    cin = cout;
  }
  enc_mu_ = nn::Conv2d(cin, cfg_.latent_c, 3, 1, 1, rng);
  enc_log_var_ = nn::Conv2d(cin, cfg_.latent_c, 3, 1, 1, rng);
  // start with a tight posterior (sigma ~ 0.14) so early reconstructions
  // aren't drowned in sampling noise
  std::fill(enc_log_var_.b.data(), enc_log_var_.b.data() + enc_log_var_.b.size(), -4.0);

  dec_in_ = nn::Conv2d(cfg_.latent_c, cin, 3, 1, 1, rng);
  const int n = static_cast<int>(cfg_.enc_channels.size());
  for (int i = n - 1; i >= 0; --i) {
    const int from = cfg_.enc_channels[static_cast<size_t>(i)];
    const int to = i > 0 ? cfg_.enc_channels[static_cast<size_t>(i) - 1] : cfg_.enc_channels[0];
    dec_.emplace_back(from, to, 4, 2, 1, rng);
  }
  dec_out_ = nn::Conv2d(cfg_.enc_channels[0], 1, 3, 1, 1, rng);

  cin = 1;
  for (int cout : cfg_.disc_channels) {
    disc_.emplace_back(cin, cout, 4, 2, 1, rng);
    cin = cout;
  }
  disc_out_ = nn::Conv2d(cin, 1, 1, 1, 0, rng);
}

GaussianPosterior VaeGan::encode(const Tensor& grid) const {
  if (grid.rank() != 3 || grid.dim(0) != 1 || grid.dim(1) != cfg_.grid_h ||
      grid.dim(2) != cfg_.grid_w) {
    throw DimensionError("encode expects [1," + std::to_string(cfg_.grid_h) + "," +
                         std::to_string(cfg_.grid_w) + "], got " + shape_str(grid.shape()));
  }
  Tensor h = grid;
  for (const nn::Conv2d& layer : enc_) h = gelu(layer.forward(h));
  return {enc_mu_.forward(h), enc_log_var_.forward(h)};
}

Tensor VaeGan::decode(const Tensor& z) const {
  if (z.rank() != 3 || z.dim(0) != cfg_.latent_c || z.dim(1) != cfg_.latent_h() ||
      z.dim(2) != cfg_.latent_w()) {
    throw DimensionError("decode expects [" + std::to_string(cfg_.latent_c) + "," +
                         std::to_string(cfg_.latent_h()) + "," +
                         std::to_string(cfg_.latent_w()) + "], got " + shape_str(z.shape()));
  }
  Tensor h = gelu(dec_in_.forward(z));
  for (const nn::ConvT2d& layer : dec_) h = gelu(layer.forward(h));
  return sigmoid(dec_out_.forward(h));
}

Tensor VaeGan::discriminator_logit(const Tensor& grid) const {
  Tensor h = grid;
  for (const nn::Conv2d& layer : disc_) h = relu(layer.forward(h));
  return mean_all(disc_out_.forward(h));
}

ParamMap VaeGan::generator_params() {
  ParamMap p;
  for (size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(p, "enc." + std::to_string(i));
  enc_mu_.collect(p, "enc.mu");
  enc_log_var_.collect(p, "enc.log_var");
  dec_in_.collect(p, "dec.in");
  for (size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(p, "dec." + std::to_string(i));
  dec_out_.collect(p, "dec.out");
  return p;
}

ParamMap VaeGan::discriminator_params() {
  ParamMap p;
  for (size_t i = 0; i < disc_.size(); ++i) disc_[i].collect(p, "disc." + std::to_string(i));
  disc_out_.collect(p, "disc.out");
  return p;
}

void VaeGan::save(const std::string& path) const {
  std::vector<std::pair<std::string, Tensor>> tensors;
  auto* self = const_cast<VaeGan*>(this);
  for (const Param& p : self->generator_params()) tensors.emplace_back(p.name, p.tensor);
  for (const Param& p : self->discriminator_params()) tensors.emplace_back(p.name, p.tensor);
  std::vector<double> meta{static_cast<double>(cfg_.grid_h), static_cast<double>(cfg_.grid_w),
                           static_cast<double>(cfg_.latent_c), cfg_.beta, cfg_.adv_weight};
  tensors.emplace_back("config.meta", Tensor::from_data({5}, meta));
  std::vector<double> ec, dc;
  for (int c : cfg_.enc_channels) ec.push_back(c);
  for (int c : cfg_.disc_channels) dc.push_back(c);
  tensors.emplace_back("config.enc_channels",
                       Tensor::from_data({static_cast<int>(ec.size())}, ec));
  tensors.emplace_back("config.disc_channels",
                       Tensor::from_data({static_cast<int>(dc.size())}, dc));
  save_checkpoint(path, tensors);
}

VaeGan VaeGan::load(const std::string& path) {
  auto tensors = load_checkpoint(path);
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw FormatError("checkpoint missing " + name, 0);
  };
  const Tensor& meta = find("config.meta");
  VaeGanConfig cfg;
  cfg.grid_h = static_cast<int>(meta.at(0));
  cfg.grid_w = static_cast<int>(meta.at(1));
  cfg.latent_c = static_cast<int>(meta.at(2));
  cfg.beta = meta.at(3);
  cfg.adv_weight = meta.at(4);
  cfg.enc_channels.clear();
  const Tensor& ec = find("config.enc_channels");
  for (std::int64_t i = 0; i < ec.size(); ++i) cfg.enc_channels.push_back(static_cast<int>(ec.at(i)));
  cfg.disc_channels.clear();
  const Tensor& dc = find("config.disc_channels");
  for (std::int64_t i = 0; i < dc.size(); ++i) cfg.disc_channels.push_back(static_cast<int>(dc.at(i)));
  RandomStream rng(0);
  VaeGan model(cfg, rng);
  ParamMap params = model.generator_params();
  ParamMap disc = model.discriminator_params();
  params.insert(params.end(), disc.begin(), disc.end());
  load_into(path, params);
  return model;
}

Tensor sample_posterior(const GaussianPosterior& p, RandomStream& rng) {
  Tensor eps = Tensor::randn(p.mu.shape(), rng);
  return add(p.mu, mul(exp(mul_scalar(p.log_var, 0.5)), eps));
}

VaeLossParts vae_loss(const Tensor& x, const Tensor& xhat, const GaussianPosterior& p,
                      double beta) {
  if (x.shape() != xhat.shape()) {
    throw DimensionError("vae_loss: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(xhat.shape()));
  }
  Tensor recon = mse(xhat, x);
  recon = add(recon, mul_scalar(add(mse(avg_pool2d(xhat, 2), avg_pool2d(x, 2)),
                                    mse(avg_pool2d(xhat, 4), avg_pool2d(x, 4))),
                                0.5));
  // 0.5 * (mu^2 + sigma^2 - 1 - log sigma^2), averaged over latent elements
  Tensor kl_terms = sub(sub(add(square(p.mu), exp(p.log_var)), Tensor::ones(p.mu.shape())),
                        p.log_var);
  Tensor kl = mul_scalar(mean_all(kl_terms), 0.5);
  Tensor total = add(recon, mul_scalar(kl, beta));
  return {total, recon, kl};
}

namespace {

Tensor mean_of(std::vector<Tensor> terms) {
  const double inv = 1.0 / static_cast<double>(terms.size());
  return mul_scalar(sum_all(concat(std::move(terms), 0)), inv);
}

// -log D(real) - log(1 - D(fake)) over both scales, in logit form.
Tensor disc_loss(const std::vector<Tensor>& real, const std::vector<Tensor>& fake,
                 const VaeGan& model) {
  std::vector<Tensor> terms;
  for (size_t i = 0; i < real.size(); ++i) {
    for (int scale = 0; scale < 2; ++scale) {
      const Tensor r = scale == 0 ? real[i] : avg_pool2d(real[i], 2);
      const Tensor f = (scale == 0 ? fake[i] : avg_pool2d(fake[i], 2)).detach();
      Tensor ld = add(softplus(neg(model.discriminator_logit(r))),
                      softplus(model.discriminator_logit(f)));
      terms.push_back(reshape(ld, {1, 1}));
    }
  }
  return mean_of(std::move(terms));
}

// -log D(fake), differentiable through the generator.
Tensor gen_adv_loss(const std::vector<Tensor>& fake, const VaeGan& model) {
  std::vector<Tensor> terms;
  for (const Tensor& f : fake) {
    for (int scale = 0; scale < 2; ++scale) {
      const Tensor fs = scale == 0 ? f : avg_pool2d(f, 2);
      terms.push_back(reshape(softplus(neg(model.discriminator_logit(fs))), {1, 1}));
    }
  }
  return mean_of(std::move(terms));
}

}  // namespace

std::pair<Tensor, Tensor> gan_losses(const std::vector<Tensor>& real,
                                     const std::vector<Tensor>& fake, const VaeGan& model) {
  if (real.size() != fake.size() || real.empty()) {
    throw DimensionError("gan_losses requires equal non-empty batches");
  }
  return {disc_loss(real, fake, model), gen_adv_loss(fake, model)};
}

std::vector<RepTrainRow> train_representation(VaeGan& model,
                                              const std::vector<ogm::OccupancyGrid>& grids,
                                              RandomStream& rng) {
  if (grids.empty()) throw ContractError("train_representation requires a non-empty dataset");
  const VaeGanConfig& cfg = model.config();

  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  AdamW gen_opt(model.generator_params(), opt_cfg);
  AdamW disc_opt(model.discriminator_params(), opt_cfg);

  std::vector<RepTrainRow> curve;
  curve.reserve(static_cast<size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(grids.size()) - 1));
      batch.push_back(grid_to_tensor(grids[idx]));
    }

    double loss_d_val = 0.0, loss_g_val = 0.0;

    if (cfg.use_gan) {
      ComputationTape tape;
      TapeGuard guard(tape);
      std::vector<Tensor> fakes;
      {
        NoGradGuard ng;  // D-step fakes carry no generator graph
        for (const Tensor& x : batch) {
          GaussianPosterior post = model.encode(x);
          fakes.push_back(model.decode(sample_posterior(post, rng)));
        }
      }
      Tensor d_objective = disc_loss(batch, fakes, model);
      loss_d_val = d_objective.item();
      if (cfg.r1_weight > 0.0 && step % cfg.r1_interval == 0) {
        std::vector<Tensor> pens;
        for (const Tensor& x : batch) {
          for (int scale = 0; scale < 2; ++scale) {
            Tensor leaf = (scale == 0 ? x : avg_pool2d(x, 2)).detach().set_requires_grad(true);
            Tensor logit = model.discriminator_logit(leaf);
            Tensor g = tape.grad(logit, leaf, /*create_graph=*/true);
            pens.push_back(reshape(sum_all(square(g)), {1, 1}));
          }
        }
        Tensor r1 = mul_scalar(sum_all(concat(pens, 0)), 1.0 / static_cast<double>(pens.size()));
        // lazy regularization: the penalty runs every r1_interval steps,
        // scaled to keep the effective weight unchanged
        d_objective = add(d_objective, mul_scalar(r1, 0.5 * cfg.r1_weight *
                                                          static_cast<double>(cfg.r1_interval)));
      }
      if (!std::isfinite(loss_d_val)) {
        throw TrainingError("non-finite discriminator loss at step " + std::to_string(step),
                            "loss_D", step);
      }
      disc_opt.zero_grad();
      tape.backward(d_objective);
      disc_opt.step();
    }

    double recon_val = 0.0, kl_val = 0.0;
    {
      ComputationTape tape;
      TapeGuard guard(tape);
      std::vector<Tensor> totals, fakes;
      for (const Tensor& x : batch) {
        GaussianPosterior post = model.encode(x);
        Tensor xhat = model.decode(sample_posterior(post, rng));
        VaeLossParts parts = vae_loss(x, xhat, post, cfg.beta);
        totals.push_back(reshape(parts.total, {1, 1}));
        recon_val += parts.recon.item();
        kl_val += parts.kl.item();
        fakes.push_back(xhat);
      }
      Tensor objective = mul_scalar(sum_all(concat(totals, 0)),
                                    1.0 / static_cast<double>(batch.size()));
      if (cfg.use_gan && cfg.adv_weight > 0.0) {
        Tensor loss_g = gen_adv_loss(fakes, model);
        loss_g_val = loss_g.item();
        objective = add(objective, mul_scalar(loss_g, cfg.adv_weight));
      }
      recon_val /= static_cast<double>(batch.size());
      kl_val /= static_cast<double>(batch.size());
      if (!std::isfinite(recon_val) || !std::isfinite(kl_val) || !std::isfinite(loss_g_val)) {
        throw TrainingError("non-finite generator loss at step " + std::to_string(step),
                            "loss_G", step);
      }
      gen_opt.zero_grad();
      tape.backward(objective);
      gen_opt.step();
    }

    curve.push_back({step, recon_val, kl_val, loss_d_val, loss_g_val});
  }
  return curve;
}

Tensor grid_to_tensor(const ogm::OccupancyGrid& g) {
  return Tensor::from_data({1, g.spec.h, g.spec.w}, g.values);
}

ogm::OccupancyGrid tensor_to_grid(const Tensor& t, const ogm::GridSpec& spec) {
  ogm::OccupancyGrid g(spec);
  if (t.size() != static_cast<std::int64_t>(g.values.size())) {
    throw DimensionError("tensor_to_grid: size mismatch");
  }
  for (std::int64_t i = 0; i < t.size(); ++i) g.values[static_cast<size_t>(i)] = t.at(i);
  return g;
}

}  // namespace lopr::rep
