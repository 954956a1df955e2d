#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "lopr/representation.hpp"
#include "support/oracles.hpp"

using namespace lopr;
using namespace lopr::rep;

namespace {

VaeGanConfig tiny_config() {
  VaeGanConfig cfg;
  cfg.grid_h = cfg.grid_w = 16;
  cfg.latent_c = 4;
  cfg.enc_channels = {4, 6};  // 16 -> 8 -> 4
  cfg.disc_channels = {4, 6};
  cfg.use_gan = false;
  cfg.beta = 0.001;
  return cfg;
}

Tensor random_grid(int h, int w, RandomStream& rng) {
  Tensor t = Tensor::zeros({1, h, w});
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("encoder emits latent-shaped posteriors, deterministically") {
  RandomStream rng(5);
  VaeGan model(tiny_config(), rng);
  Tensor x = random_grid(16, 16, rng);
  GaussianPosterior p1 = model.encode(x);
  CHECK(p1.mu.shape() == Shape{4, 4, 4});
  CHECK(p1.log_var.shape() == Shape{4, 4, 4});
  GaussianPosterior p2 = model.encode(x);
  for (std::int64_t i = 0; i < p1.mu.size(); ++i) {
    CHECK(p1.mu.at(i) == p2.mu.at(i));
    CHECK(p1.log_var.at(i) == p2.log_var.at(i));
  }
  CHECK_THROWS_AS(model.encode(Tensor::zeros({1, 8, 8})), DimensionError);
}

TEST_CASE("paper-scale spatial contract: 128 -> 4x4 latent, 128x128 decode") {
  RandomStream rng(7);
  VaeGanConfig cfg;  // defaults: 128 grid, five stages
  cfg.use_gan = false;
  VaeGan model(cfg, rng);
  Tensor x = random_grid(128, 128, rng);
  GaussianPosterior p = model.encode(x);
  CHECK(p.mu.shape() == Shape{cfg.latent_c, 4, 4});
  Tensor xhat = model.decode(p.mu);
  CHECK(xhat.shape() == Shape{1, 128, 128});
  for (std::int64_t i = 0; i < xhat.size(); ++i) {
    CHECK(xhat.at(i) > 0.0);
    CHECK(xhat.at(i) < 1.0);
  }
}

TEST_CASE("mirrored input generally produces a different code") {
  RandomStream rng(11);
  VaeGan model(tiny_config(), rng);
  Tensor x = random_grid(16, 16, rng);
  Tensor xm = Tensor::zeros({1, 16, 16});
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) xm.data()[i * 16 + j] = x.at(i * 16 + (15 - j));
  GaussianPosterior a = model.encode(x);
  GaussianPosterior b = model.encode(xm);
  double diff = 0.0;
  for (std::int64_t i = 0; i < a.mu.size(); ++i) diff += std::abs(a.mu.at(i) - b.mu.at(i));
  CHECK(diff > 1e-6);
}

TEST_CASE("posterior sampling: degenerate sigma, reproducibility, Monte Carlo mean") {
  RandomStream rng(13);
  GaussianPosterior p{Tensor::randn({2, 2, 2}, rng), Tensor::full({2, 2, 2}, -60.0)};
  RandomStream r1(1);
  Tensor s = sample_posterior(p, r1);
  for (std::int64_t i = 0; i < s.size(); ++i) CHECK(s.at(i) == doctest::Approx(p.mu.at(i)).epsilon(1e-12));

  GaussianPosterior q{Tensor::randn({2, 2, 2}, rng), Tensor::zeros({2, 2, 2})};
  RandomStream ra(42), rb(42);
  Tensor sa = sample_posterior(q, ra);
  Tensor sb = sample_posterior(q, rb);
  for (std::int64_t i = 0; i < sa.size(); ++i) CHECK(sa.at(i) == sb.at(i));

  // mean over 1e4 draws within 4*sigma/100 of mu
  RandomStream rc(7);
  std::vector<double> acc(static_cast<size_t>(q.mu.size()), 0.0);
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    Tensor d = sample_posterior(q, rc);
    for (std::int64_t i = 0; i < d.size(); ++i) acc[static_cast<size_t>(i)] += d.at(i);
  }
  for (std::int64_t i = 0; i < q.mu.size(); ++i) {
    CHECK(std::abs(acc[static_cast<size_t>(i)] / n - q.mu.at(i)) < 4.0 / 100.0);
  }
}

TEST_CASE("reparameterized sampling has unit gradient to mu") {
  RandomStream rng(17);
  GaussianPosterior p{Tensor::randn({2, 2, 2}, rng).set_requires_grad(true),
                      Tensor::randn({2, 2, 2}, rng).set_requires_grad(true)};
  ComputationTape tape;
  TapeGuard guard(tape);
  RandomStream r(3);
  Tensor s = sample_posterior(p, r);
  Tensor g = tape.grad(sum_all(s), p.mu, false);
  for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g.at(i) == 1.0);
}

TEST_CASE("vae_loss closed forms and quadrature oracle") {
  RandomStream rng(19);
  Tensor x = random_grid(16, 16, rng);

  // exactly the unit prior: KL = 0
  GaussianPosterior p0{Tensor::zeros({4, 2, 2}), Tensor::zeros({4, 2, 2})};
  VaeLossParts parts0 = vae_loss(x, x, p0, 0.5);
  CHECK(parts0.kl.item() == 0.0);
  CHECK(parts0.recon.item() == 0.0);
  CHECK(parts0.total.item() == 0.0);

  // mu = 1, log_var = 0: 0.5 per element
  GaussianPosterior p1{Tensor::ones({4, 2, 2}), Tensor::zeros({4, 2, 2})};
  VaeLossParts parts1 = vae_loss(x, x, p1, 1.0);
  CHECK(parts1.kl.item() == doctest::Approx(0.5).epsilon(1e-12));

  // 1-d slices against numerical integration
  for (auto [mu, lv] : {std::pair{0.7, -0.4}, std::pair{-1.3, 0.8}, std::pair{0.0, 1.5}}) {
    GaussianPosterior p{Tensor::full({1, 1, 1}, mu), Tensor::full({1, 1, 1}, lv)};
    VaeLossParts parts = vae_loss(x, x, p, 1.0);
    const double oracle = oracles::kl_gaussian_quadrature(mu, std::exp(0.5 * lv));
    CHECK(parts.kl.item() == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("closed-form KL is nonnegative, zero only at the prior") {
  RandomStream rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    GaussianPosterior p{mul_scalar(Tensor::randn({3}, rng), 2.0),
                        mul_scalar(Tensor::randn({3}, rng), 1.5)};
    Tensor x = random_grid(16, 16, rng);
    VaeLossParts parts = vae_loss(x, x, p, 1.0);
    CHECK(parts.kl.item() >= 0.0);
  }
}

TEST_CASE("gan_losses match the closed forms") {
  RandomStream rng(29);
  VaeGanConfig cfg = tiny_config();
  cfg.use_gan = true;
  VaeGan model(cfg, rng);

  std::vector<Tensor> real{random_grid(16, 16, rng), random_grid(16, 16, rng)};
  std::vector<Tensor> fake{random_grid(16, 16, rng), random_grid(16, 16, rng)};

  // D constant 1/2: zero every discriminator parameter so all logits vanish
  for (Param& p : model.discriminator_params()) {
    std::fill(p.tensor.data(), p.tensor.data() + p.tensor.size(), 0.0);
  }
  auto [loss_d, loss_g] = gan_losses(real, fake, model);
  CHECK(loss_d.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(loss_g.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // perfect D at probabilities clamped to [1e-6, 1-1e-6]: loss_D ~ 0
  const double logit = std::log((1.0 - 1e-6) / 1e-6);
  Tensor ld = add(softplus(neg(Tensor::scalar(logit))), softplus(Tensor::scalar(-logit)));
  CHECK(ld.item() == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(ld.item() > 0.0);
}

TEST_CASE("loss_G gradient through the generator on a 16x16 toy") {
  RandomStream rng(31);
  VaeGanConfig cfg = tiny_config();
  cfg.use_gan = true;
  VaeGan model(cfg, rng);
  Tensor x = random_grid(16, 16, rng);
  Tensor eps = Tensor::randn({4, 4, 4}, rng);

  ParamMap gen = model.generator_params();
  std::vector<Tensor> leaves{gen[0].tensor, gen[gen.size() - 2].tensor};
  auto fn = [&]() {
    GaussianPosterior p = model.encode(x);
    Tensor z = add(p.mu, mul(exp(mul_scalar(p.log_var, 0.5)), eps));
    Tensor xhat = model.decode(z);
    return gan_losses({x}, {xhat}, model).second;
  };
  CHECK(oracles::grad_check(fn, leaves) < 1e-4);
}

TEST_CASE("full toy model gradient check (16x16, c=4)") {
  RandomStream rng(37);
  VaeGan model(tiny_config(), rng);
  Tensor x = random_grid(16, 16, rng);
  Tensor eps = Tensor::randn({4, 4, 4}, rng);
  ParamMap gen = model.generator_params();
  // first conv, mu head, a decoder kernel: representative leaves
  std::vector<Tensor> leaves{gen[0].tensor, x};
  for (const Param& p : gen) {
    if (p.name == "enc.mu.w" || p.name == "dec.out.w") leaves.push_back(p.tensor);
  }
  auto fn = [&]() {
    GaussianPosterior p = model.encode(x);
    Tensor z = add(p.mu, mul(exp(mul_scalar(p.log_var, 0.5)), eps));
    Tensor xhat = model.decode(z);
    return vae_loss(x, xhat, p, 0.2).total;
  };
  CHECK(oracles::grad_check(fn, leaves) < 1e-4);
}

TEST_CASE("single-grid memorization at toy scale") {
  RandomStream rng(41);
  VaeGanConfig cfg = tiny_config();
  cfg.steps = 400;
  cfg.batch_size = 1;
  cfg.lr = 3e-3;
  cfg.beta = 1e-4;
  VaeGan model(cfg, rng);
  ogm::GridSpec spec{16, 16, 1.0};
  ogm::OccupancyGrid g(spec);
  // scene-like grid: free disc around the sensor, two occupied blocks,
  // unknown ring beyond
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) g.at(i, j) = std::hypot(i - 8.0, j - 8.0) < 6.5 ? 0.05 : 0.5;
  for (int i = 3; i < 6; ++i)
    for (int j = 7; j < 10; ++j) g.at(i, j) = 0.95;
  for (int i = 10; i < 13; ++i)
    for (int j = 4; j < 7; ++j) g.at(i, j) = 0.95;
  train_representation(model, {g}, rng);
  Tensor x = rep::grid_to_tensor(g);
  Tensor xhat = model.decode(model.encode(x).mu);
  CHECK(mse(xhat, x).item() < 1e-3);
}

TEST_CASE("beta = 0 reconstructs at least as well as beta = 0.2") {
  ogm::GridSpec spec{16, 16, 1.0};
  std::vector<ogm::OccupancyGrid> data;
  RandomStream gr(3);
  for (int i = 0; i < 4; ++i) {
    ogm::OccupancyGrid g(spec);
    for (auto& v : g.values) v = gr.bernoulli(0.3) ? 0.9 : 0.1;
    data.push_back(std::move(g));
  }
  auto run = [&](double beta) {
    VaeGanConfig cfg = tiny_config();
    cfg.steps = 250;
    cfg.batch_size = 2;
    cfg.lr = 2e-3;
    cfg.beta = beta;
    RandomStream rng(55);
    VaeGan model(cfg, rng);
    RandomStream train_rng(56);
    auto curve = train_representation(model, data, train_rng);
    double tail = 0.0;
    for (size_t i = curve.size() - 20; i < curve.size(); ++i) tail += curve[i].recon;
    return tail / 20.0;
  };
  const double recon_free = run(0.0);
  const double recon_reg = run(0.2);
  CHECK(recon_free <= recon_reg);
}

TEST_CASE("training curve is deterministic under a fixed seed") {
  ogm::GridSpec spec{16, 16, 1.0};
  std::vector<ogm::OccupancyGrid> data;
  RandomStream gr(4);
  for (int i = 0; i < 3; ++i) {
    ogm::OccupancyGrid g(spec);
    for (auto& v : g.values) v = gr.uniform();
    data.push_back(std::move(g));
  }
  auto run = [&]() {
    VaeGanConfig cfg = tiny_config();
    cfg.steps = 40;
    cfg.use_gan = true;
    cfg.adv_weight = 0.05;
    cfg.r1_interval = 4;
    RandomStream rng(77);
    VaeGan model(cfg, rng);
    RandomStream train_rng(78);
    return train_representation(model, data, train_rng);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].recon == b[i].recon);
    CHECK(a[i].kl == b[i].kl);
    CHECK(a[i].loss_d == b[i].loss_d);
    CHECK(a[i].loss_g == b[i].loss_g);
  }
}

TEST_CASE("checkpoint round trip preserves the model") {
  RandomStream rng(43);
  VaeGan model(tiny_config(), rng);
  Tensor x = random_grid(16, 16, rng);
  GaussianPosterior before = model.encode(x);
  const std::string path = "test_vae.ckpt";
  model.save(path);
  VaeGan loaded = VaeGan::load(path);
  GaussianPosterior after = loaded.encode(x);
  for (std::int64_t i = 0; i < before.mu.size(); ++i) {
    CHECK(before.mu.at(i) == after.mu.at(i));
  }
  std::remove(path.c_str());
}
