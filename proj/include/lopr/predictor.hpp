#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lopr/dataset.hpp"
#include "lopr/layers.hpp"
#include "lopr/ogm.hpp"

namespace lopr::pred {

// Latent patch tokenization: z [c,h,w] split along its spatial dimensions
// into k flattened tokens of dimension c*h*w/k.
struct PatchSpec {
  int c = 8, h = 4, w = 4;
  int k = 2;
  int rows = 1, cols = 2;  // patch grid, rows*cols == k
  int token_dim = 64;

  static PatchSpec make(int c, int h, int w, int k);
};

Tensor patchify(const Tensor& z, const PatchSpec& spec);    // -> [k, token_dim]
Tensor unpatchify(const Tensor& tokens, const PatchSpec& spec);

// PE(t)[2i] = sin(t / 10000^(2i/dim)), PE(t)[2i+1] = cos of the same
// argument. dim must be even. Shape [1, dim].
Tensor positional_encoding(int t, int dim);

struct AnnealSchedule {
  double beta_start = 2e-6;
  int warmup_epochs = 10;
  double beta_end = 0.2;
  long ramp_steps = 50000;

  // Piecewise linear, non-decreasing: beta_start through the warmup, then a
  // linear ramp to beta_end over ramp_steps.
  double beta_at(long step, long steps_per_epoch) const;
};

struct AttentionConfig {
  int dim = 64;
  int heads = 2;
  int ff = 128;
};

struct LayerCache {
  std::vector<Tensor> k_heads;  // per head, [n_cached, head_dim]
  std::vector<Tensor> v_heads;
};

// Pre-norm multi-head attention + MLP with residuals. Steps are processed
// incrementally: queries come from the new block only, keys/values from the
// cache plus the new block, so tokens of one step see each other and every
// earlier step, and later steps cannot influence earlier outputs at all.
struct AttentionBlock {
  nn::LayerNorm ln1, ln2;
  std::vector<nn::Linear> wq, wk, wv;
  nn::Linear wo;
  nn::Linear mlp1, mlp2;
  int heads = 0;

  AttentionBlock() = default;
  AttentionBlock(const AttentionConfig& cfg, RandomStream& rng);
  Tensor forward_step(const Tensor& block, LayerCache& cache) const;
  void collect(ParamMap& params, const std::string& prefix);
};

struct CausalTransformer {
  std::vector<AttentionBlock> layers;

  struct State {
    std::vector<LayerCache> caches;
  };

  CausalTransformer() = default;
  CausalTransformer(int n_layers, const AttentionConfig& cfg, RandomStream& rng);
  State make_state() const { return State{std::vector<LayerCache>(layers.size())}; }
  Tensor forward_step(const Tensor& block, State& state) const;
  // Convenience over a whole block sequence; equivalent to stepping.
  std::vector<Tensor> forward_sequence(const std::vector<Tensor>& blocks) const;
  void collect(ParamMap& params, const std::string& prefix);
};

// Transformer encoder over the visible prefix with a learned start token;
// the last token's output parameterizes the Gaussian.
struct InferenceNetwork {
  Tensor start_token;  // [1, dim]
  Tensor patch_embed;  // [k, dim]
  CausalTransformer encoder;  // applied to one block = full attention
  nn::LayerNorm ln_out;
  nn::Linear mu_head, log_var_head;

  InferenceNetwork() = default;
  InferenceNetwork(int n_layers, const AttentionConfig& cfg, int k, RandomStream& rng);
  // visible: embedded token blocks in step order (may be empty: the start
  // token alone carries step zero).
  std::pair<Tensor, Tensor> infer(const std::vector<Tensor>& visible) const;  // mu, log_var
  void collect(ParamMap& params, const std::string& prefix);
};

struct ConditioningBundle {
  Tensor static_tokens;             // [n, dim]; undefined when no static conditioning
  std::vector<Tensor> traj_tokens;  // per step [1, dim]; empty when disabled
};

enum class RolloutMode { prior_sample, posterior_teacher };

struct RolloutResult {
  std::vector<Tensor> predicted;  // t_fut latent codes [c,h,w]
  Tensor recon_term;              // scalar; defined when a loss was built
  Tensor kl_term;                 // scalar; defined when a loss was built
};

struct PredictorConfig {
  int latent_c = 8, latent_h = 4, latent_w = 4;
  int patches = 2;
  int p_layers = 2;  // deterministic decoder depth
  int q_layers = 2;  // inference network depth
  int heads = 2;
  int ff = 128;
  bool stochastic = true;
  bool use_map = false;
  bool use_traj = false;
  bool use_location = true;
  bool use_aug = true;
  double cond_dropout = 0.0;  // conditioning-token dropout hook (unused by default)
  int t_obs = 5, t_fut = 15;
  int n_locations = scene::kNumArchetypes;
  int n_augs = ogm::kNumAugmentations;
  int map_h = 128, map_w = 128;
  double lr = 4e-4;
  int batch_size = 4;
  int steps = 3000;
  int steps_per_epoch = 50;
  AnnealSchedule schedule;
  std::uint64_t seed = 1;
};

// Named presets. "desk" is the CI-scale default; "paper_main" follows the
// 6-layer/6-head description, "paper_appendix" the 2-encoder/1-decoder/
// 2-head table (the two published configurations disagree, so both ship).
PredictorConfig preset_config(const std::string& name);

class PredictorModel {
 public:
  PredictorModel(PredictorConfig cfg, RandomStream& rng);

  const PredictorConfig& config() const { return cfg_; }
  const PatchSpec& patch_spec() const { return patch_; }

  ConditioningBundle build_conditioning(const ogm::MapRaster* map,
                                        const scene::PlannedTrajectory* traj,
                                        int traj_offset, int traj_len, int location_id,
                                        int aug_id) const;

  // Inference-network parameters over a code prefix. With `posterior` the
  // network sees codes[0..t] inclusive; the prior sees codes[0..t).
  std::pair<Tensor, Tensor> infer_params(bool posterior, const std::vector<Tensor>& codes,
                                         int t, const ConditioningBundle& cond) const;

  // Single deterministic step: history codes (>= 1), optional stochastic
  // latent injected into the newest block.
  Tensor predict_step(const std::vector<Tensor>& history, const Tensor* s,
                      const ConditioningBundle& cond) const;

  // Autoregressive rollout for t_fut steps. In posterior_teacher mode,
  // `codes` must also contain the ground-truth future; s_t is drawn from
  // the posterior and ELBO terms are built, while the decoder and the prior
  // consume previously predicted embeddings.
  RolloutResult rollout(const std::vector<Tensor>& codes, const ConditioningBundle& cond,
                        RolloutMode mode, RandomStream& rng, int t_fut_override = -1,
                        bool build_loss = false) const;

  // Sliding-window extrapolation to an arbitrary horizon; each window
  // re-uses the trailing predictions as observations and its own
  // conditioning slice.
  std::vector<Tensor> extrapolate(const std::vector<Tensor>& observed,
                                  const std::vector<ConditioningBundle>& per_window,
                                  int horizon, RandomStream& rng) const;

  ParamMap parameters();
  void save(const std::string& path) const;
  static PredictorModel load(const std::string& path);

 private:
  PredictorConfig cfg_;
  PatchSpec patch_;

  Tensor p_patch_embed_;  // [k, dim]
  CausalTransformer decoder_;
  nn::LayerNorm ln_out_;
  nn::Linear out_head_;
  nn::Linear inject_v_, inject_o_;  // single key/value cross-attention path
  InferenceNetwork prior_, posterior_;

  // conditioning encoders (trained with the predictor)
  std::vector<nn::Conv2d> map_conv_;
  nn::Linear map_proj_;
  nn::Linear traj_embed_;
  nn::Linear loc_embed_;
  nn::Linear aug_embed_;

  Tensor embed_block(const Tensor& raw_tokens, const Tensor& patch_embed, int step) const;

  friend struct RolloutEngine;
};

// Closed-form KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p)) averaged per element.
Tensor gaussian_kl(const Tensor& mu_q, const Tensor& lv_q, const Tensor& mu_p,
                   const Tensor& lv_p);

// ELBO pieces for one batch entry: total = recon + beta * kl, both parts
// returned alongside.
struct ElboParts {
  Tensor total, recon, kl;
};
ElboParts elbo_loss(const RolloutResult& r, double beta);

struct PredTrainRow {
  long step;
  double recon, kl, beta;
};

std::vector<PredTrainRow> train_predictor(PredictorModel& model,
                                          const std::vector<ogm::CodeSequence>& dataset,
                                          RandomStream& rng);

}  // namespace lopr::pred
