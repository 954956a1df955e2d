#include "lopr/predictor.hpp"

#include <cmath>

#include "lopr/checkpoint.hpp"

namespace lopr::pred {

PatchSpec PatchSpec::make(int c, int h, int w, int k) {
  if (k < 1 || (static_cast<std::int64_t>(h) * w) % k != 0) {
    throw ContractError("patch count " + std::to_string(k) + " must divide the " +
                        std::to_string(h) + "x" + std::to_string(w) + " spatial grid");
  }
  PatchSpec spec;
  spec.c = c;
  spec.h = h;
  spec.w = w;
  spec.k = k;
  spec.rows = 0;
  for (int r = static_cast<int>(std::sqrt(static_cast<double>(k))); r >= 1; --r) {
    if (k % r == 0 && h % r == 0 && w % (k / r) == 0) {
      spec.rows = r;
      spec.cols = k / r;
      break;
    }
  }
  if (spec.rows == 0) {
    throw ContractError("patch count " + std::to_string(k) + " has no spatial factorization for " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  spec.token_dim = c * (h / spec.rows) * (w / spec.cols);
  return spec;
}

Tensor patchify(const Tensor& z, const PatchSpec& spec) {
  if (z.rank() != 3 || z.dim(0) != spec.c || z.dim(1) != spec.h || z.dim(2) != spec.w) {
    throw DimensionError("patchify expects [" + std::to_string(spec.c) + "," +
                         std::to_string(spec.h) + "," + std::to_string(spec.w) + "], got " +
                         shape_str(z.shape()));
  }
  const int bh = spec.h / spec.rows, bw = spec.w / spec.cols;
  Tensor out = Tensor::zeros({spec.k, spec.token_dim});
  const double* pz = z.data();
  double* po = out.data();
  for (int pr = 0; pr < spec.rows; ++pr)
    for (int pc = 0; pc < spec.cols; ++pc) {
      double* tok = po + static_cast<std::int64_t>(pr * spec.cols + pc) * spec.token_dim;
      std::int64_t at = 0;
      for (int c = 0; c < spec.c; ++c)
        for (int i = 0; i < bh; ++i)
          for (int j = 0; j < bw; ++j)
            tok[at++] = pz[(static_cast<std::int64_t>(c) * spec.h + pr * bh + i) * spec.w +
                           pc * bw + j];
    }
  PatchSpec s = spec;
  return record_op("patchify", {z}, out, [s](const Tensor& dout) {
    return std::vector<Tensor>{unpatchify(dout, s)};
  });
}

Tensor unpatchify(const Tensor& tokens, const PatchSpec& spec) {
  if (tokens.rank() != 2 || tokens.dim(0) != spec.k || tokens.dim(1) != spec.token_dim) {
    throw DimensionError("unpatchify expects [" + std::to_string(spec.k) + "," +
                         std::to_string(spec.token_dim) + "], got " +
                         shape_str(tokens.shape()));
  }
  const int bh = spec.h / spec.rows, bw = spec.w / spec.cols;
  Tensor out = Tensor::zeros({spec.c, spec.h, spec.w});
  const double* pt = tokens.data();
  double* po = out.data();
  for (int pr = 0; pr < spec.rows; ++pr)
    for (int pc = 0; pc < spec.cols; ++pc) {
      const double* tok = pt + static_cast<std::int64_t>(pr * spec.cols + pc) * spec.token_dim;
      std::int64_t at = 0;
      for (int c = 0; c < spec.c; ++c)
        for (int i = 0; i < bh; ++i)
          for (int j = 0; j < bw; ++j)
            po[(static_cast<std::int64_t>(c) * spec.h + pr * bh + i) * spec.w + pc * bw + j] =
                tok[at++];
    }
  PatchSpec s = spec;
  return record_op("unpatchify", {tokens}, out, [s](const Tensor& dout) {
    return std::vector<Tensor>{patchify(dout, s)};
  });
}

Tensor positional_encoding(int t, int dim) {
  if (dim % 2 != 0) throw ContractError("positional encoding requires an even dimension");
  Tensor out = Tensor::zeros({1, dim});
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
    out.data()[2 * i] = std::sin(t * freq);
    out.data()[2 * i + 1] = std::cos(t * freq);
  }
  return out;
}

double AnnealSchedule::beta_at(long step, long steps_per_epoch) const {
  const long warmup = static_cast<long>(warmup_epochs) * steps_per_epoch;
  if (step <= warmup) return beta_start;
  const double t = static_cast<double>(step - warmup) / static_cast<double>(ramp_steps);
  return std::min(beta_end, beta_start + (beta_end - beta_start) * t);
}

AttentionBlock::AttentionBlock(const AttentionConfig& cfg, RandomStream& rng)
    : ln1(cfg.dim), ln2(cfg.dim), wo(cfg.dim, cfg.dim, rng), mlp1(cfg.dim, cfg.ff, rng),
      mlp2(cfg.ff, cfg.dim, rng), heads(cfg.heads) {
  if (cfg.dim % cfg.heads != 0) {
    throw ContractError("attention dim must be divisible by head count");
  }
  const int dh = cfg.dim / cfg.heads;
  for (int h = 0; h < cfg.heads; ++h) {
    wq.emplace_back(cfg.dim, dh, rng);
    wk.emplace_back(cfg.dim, dh, rng);
    wv.emplace_back(cfg.dim, dh, rng);
  }
}

Tensor AttentionBlock::forward_step(const Tensor& block, LayerCache& cache) const {
  if (cache.k_heads.empty()) {
    cache.k_heads.resize(static_cast<size_t>(heads));
    cache.v_heads.resize(static_cast<size_t>(heads));
  }
  Tensor y = ln1.forward(block);
  const int dh = wq[0].w.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor q = wq[static_cast<size_t>(h)].forward(y);
    Tensor k_new = wk[static_cast<size_t>(h)].forward(y);
    Tensor v_new = wv[static_cast<size_t>(h)].forward(y);
    Tensor& k_cache = cache.k_heads[static_cast<size_t>(h)];
    Tensor& v_cache = cache.v_heads[static_cast<size_t>(h)];
    k_cache = k_cache.defined() ? concat({k_cache, k_new}, 0) : k_new;
    v_cache = v_cache.defined() ? concat({v_cache, v_new}, 0) : v_new;
    Tensor att = softmax(mul_scalar(matmul(q, transpose(k_cache)), scale), -1);
    head_outs.push_back(matmul(att, v_cache));
  }
  Tensor attended = wo.forward(heads > 1 ? concat(head_outs, 1) : head_outs[0]);
  Tensor h1 = add(block, attended);
  return add(h1, mlp2.forward(gelu(mlp1.forward(ln2.forward(h1)))));
}

void AttentionBlock::collect(ParamMap& params, const std::string& prefix) {
  ln1.collect(params, prefix + ".ln1");
  ln2.collect(params, prefix + ".ln2");
  for (size_t h = 0; h < wq.size(); ++h) {
    wq[h].collect(params, prefix + ".q" + std::to_string(h));
    wk[h].collect(params, prefix + ".k" + std::to_string(h));
    wv[h].collect(params, prefix + ".v" + std::to_string(h));
  }
  wo.collect(params, prefix + ".o");
  mlp1.collect(params, prefix + ".mlp1");
  mlp2.collect(params, prefix + ".mlp2");
}

CausalTransformer::CausalTransformer(int n_layers, const AttentionConfig& cfg,
                                     RandomStream& rng) {
  for (int i = 0; i < n_layers; ++i) layers.emplace_back(cfg, rng);
}

Tensor CausalTransformer::forward_step(const Tensor& block, State& state) const {
  Tensor h = block;
  for (size_t i = 0; i < layers.size(); ++i) h = layers[i].forward_step(h, state.caches[i]);
  return h;
}

std::vector<Tensor> CausalTransformer::forward_sequence(const std::vector<Tensor>& blocks) const {
  State state = make_state();
  std::vector<Tensor> outs;
  outs.reserve(blocks.size());
  for (const Tensor& b : blocks) outs.push_back(forward_step(b, state));
  return outs;
}

void CausalTransformer::collect(ParamMap& params, const std::string& prefix) {
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(params, prefix + ".layer" + std::to_string(i));
  }
}

InferenceNetwork::InferenceNetwork(int n_layers, const AttentionConfig& cfg, int k,
                                   RandomStream& rng)
    : start_token(nn::init_uniform({1, cfg.dim}, cfg.dim, rng)),
      patch_embed(nn::init_uniform({k, cfg.dim}, cfg.dim, rng)),
      encoder(n_layers, cfg, rng),
      ln_out(cfg.dim),
      mu_head(cfg.dim, cfg.dim, rng),
      log_var_head(cfg.dim, cfg.dim, rng) {}

std::pair<Tensor, Tensor> InferenceNetwork::infer(const std::vector<Tensor>& visible) const {
  std::vector<Tensor> parts{start_token};
  for (const Tensor& b : visible) parts.push_back(b);
  Tensor all = parts.size() > 1 ? concat(parts, 0) : reshape(start_token, start_token.shape());
  CausalTransformer::State st = encoder.make_state();
  Tensor out = encoder.forward_step(all, st);  // one block: full attention
  Tensor last = narrow(out, 0, out.dim(0) - 1, 1);
  Tensor hn = ln_out.forward(last);
  return {mu_head.forward(hn), log_var_head.forward(hn)};
}

void InferenceNetwork::collect(ParamMap& params, const std::string& prefix) {
  params.push_back({prefix + ".start", start_token});
  params.push_back({prefix + ".patch_embed", patch_embed});
  encoder.collect(params, prefix + ".enc");
  ln_out.collect(params, prefix + ".ln_out");
  mu_head.collect(params, prefix + ".mu");
  log_var_head.collect(params, prefix + ".log_var");
}

PredictorConfig preset_config(const std::string& name) {
  PredictorConfig cfg;
  if (name == "desk") return cfg;
  if (name == "paper_main") {
    cfg.latent_c = 64;
    cfg.patches = 4;
    cfg.p_layers = 6;
    cfg.q_layers = 6;
    cfg.heads = 8;  // 256-dim tokens are not divisible by 6 heads
    cfg.ff = 1024;
    return cfg;
  }
  if (name == "paper_appendix") {
    cfg.latent_c = 64;
    cfg.patches = 4;
    cfg.p_layers = 1;
    cfg.q_layers = 2;
    cfg.heads = 2;
    cfg.ff = 128;
    return cfg;
  }
  throw ContractError("unknown predictor preset '" + name + "'");
}

namespace {

Tensor one_hot(int idx, int n) {
  Tensor t = Tensor::zeros({1, n});
  if (idx < 0 || idx >= n) throw ContractError("one-hot index out of range");
  t.data()[idx] = 1.0;
  return t;
}

}  // namespace

Tensor gaussian_kl(const Tensor& mu_q, const Tensor& lv_q, const Tensor& mu_p,
                   const Tensor& lv_p) {
  // per element: 0.5 * (lv_p - lv_q + (e^lv_q + (mu_q-mu_p)^2)/e^lv_p - 1)
  Tensor diff = sub(mu_q, mu_p);
  Tensor ratio = div(add(exp(lv_q), square(diff)), exp(lv_p));
  Tensor terms = sub(add(sub(lv_p, lv_q), ratio), Tensor::ones(mu_q.shape()));
  return mul_scalar(mean_all(terms), 0.5);
}

PredictorModel::PredictorModel(PredictorConfig cfg, RandomStream& rng)
    : cfg_(std::move(cfg)),
      patch_(PatchSpec::make(cfg_.latent_c, cfg_.latent_h, cfg_.latent_w, cfg_.patches)) {
  AttentionConfig att{patch_.token_dim, cfg_.heads, cfg_.ff};
  p_patch_embed_ = nn::init_uniform({patch_.k, att.dim}, att.dim, rng);
  decoder_ = CausalTransformer(cfg_.p_layers, att, rng);
  ln_out_ = nn::LayerNorm(att.dim);
  out_head_ = nn::Linear(att.dim, att.dim, rng);
  inject_v_ = nn::Linear(att.dim, att.dim, rng);
  inject_o_ = nn::Linear(att.dim, att.dim, rng);
  prior_ = InferenceNetwork(cfg_.q_layers, att, patch_.k, rng);
  posterior_ = InferenceNetwork(cfg_.q_layers, att, patch_.k, rng);

  int stages = 0;
  for (int d = cfg_.map_h; d > 4; d >>= 1) ++stages;
  int cin = 3;
  for (int i = 0; i < stages; ++i) {
    map_conv_.emplace_back(cin, 6 * (i + 1), 4, 2, 1, rng);
    cin = 6 * (i + 1);
  }
  const int map_flat = cin * (cfg_.map_h >> stages) * (cfg_.map_w >> stages);
  map_proj_ = nn::Linear(map_flat, att.dim, rng);
  traj_embed_ = nn::Linear(3, att.dim, rng);
  loc_embed_ = nn::Linear(cfg_.n_locations, att.dim, rng);
  aug_embed_ = nn::Linear(cfg_.n_augs, att.dim, rng);
}

Tensor PredictorModel::embed_block(const Tensor& raw_tokens, const Tensor& patch_embed,
                                   int step) const {
  Tensor pe = repeat_rows(positional_encoding(step, patch_.token_dim), raw_tokens.dim(0));
  return add(add(raw_tokens, pe), patch_embed);
}

ConditioningBundle PredictorModel::build_conditioning(const ogm::MapRaster* map,
                                                      const scene::PlannedTrajectory* traj,
                                                      int traj_offset, int traj_len,
                                                      int location_id, int aug_id) const {
  ConditioningBundle b;
  std::vector<Tensor> statics;
  if (cfg_.use_location) {
    statics.push_back(loc_embed_.forward(one_hot(location_id, cfg_.n_locations)));
  }
  if (cfg_.use_aug) {
    statics.push_back(aug_embed_.forward(one_hot(aug_id, cfg_.n_augs)));
  }
  if (cfg_.use_map && map != nullptr) {
    std::vector<double> vals(map->data.begin(), map->data.end());
    Tensor m = Tensor::from_data({3, map->h, map->w}, std::move(vals));
    for (const nn::Conv2d& layer : map_conv_) m = gelu(layer.forward(m));
    statics.push_back(map_proj_.forward(reshape(m, {1, static_cast<int>(m.size())})));
  }
  if (!statics.empty()) b.static_tokens = concat(statics, 0);
  if (cfg_.use_traj && traj != nullptr) {
    if (traj_offset + traj_len > static_cast<int>(traj->positions.size())) {
      throw ContractError("conditioning trajectory shorter than the requested horizon");
    }
    for (int t = 0; t < traj_len; ++t) {
      const auto& p = traj->positions[static_cast<size_t>(traj_offset + t)];
      b.traj_tokens.push_back(
          traj_embed_.forward(Tensor::from_data({1, 3}, {p[0], p[1], p[2]})));
    }
  }
  return b;
}

namespace {

struct QState {
  std::vector<Tensor> visible;  // embedded blocks, static conditioning first
  int steps_pushed = 0;
};

}  // namespace

std::pair<Tensor, Tensor> PredictorModel::infer_params(bool posterior,
                                                       const std::vector<Tensor>& codes,
                                                       int t,
                                                       const ConditioningBundle& cond) const {
  const InferenceNetwork& net = posterior ? posterior_ : prior_;
  const int upto = posterior ? t + 1 : t;  // posterior sees z_t, the prior does not
  if (upto > static_cast<int>(codes.size())) {
    throw ContractError("inference network asked beyond the provided codes");
  }
  std::vector<Tensor> visible;
  if (cond.static_tokens.defined()) {
    visible.push_back(add(cond.static_tokens,
                          repeat_rows(positional_encoding(0, patch_.token_dim),
                                      cond.static_tokens.dim(0))));
  }
  for (int s = 0; s < upto; ++s) {
    Tensor blk = embed_block(patchify(codes[static_cast<size_t>(s)], patch_), net.patch_embed,
                             s + 1);
    if (static_cast<int>(cond.traj_tokens.size()) > s) {
      blk = concat({add(cond.traj_tokens[static_cast<size_t>(s)],
                        positional_encoding(s + 1, patch_.token_dim)),
                    blk},
                   0);
    }
    visible.push_back(blk);
  }
  auto [mu, lv] = net.infer(visible);
  return {mu, exp(mul_scalar(lv, 0.5))};  // (mu, sigma)
}

RolloutResult PredictorModel::rollout(const std::vector<Tensor>& codes,
                                      const ConditioningBundle& cond, RolloutMode mode,
                                      RandomStream& rng, int t_fut_override,
                                      bool build_loss) const {
  const bool teacher = mode == RolloutMode::posterior_teacher;
  const int t_fut = t_fut_override > 0 ? t_fut_override : cfg_.t_fut;
  if (t_fut < 1) throw ContractError("rollout requires t_fut >= 1");
  const int n_obs = teacher ? static_cast<int>(codes.size()) - t_fut
                            : static_cast<int>(codes.size());
  if (n_obs < 1) throw ContractError("rollout requires at least one observed step");
  if (teacher && static_cast<int>(codes.size()) != n_obs + t_fut) {
    throw ContractError("posterior_teacher rollout needs ground truth for every step");
  }
  const int total = n_obs + t_fut;
  const int dim = patch_.token_dim;

  std::vector<Tensor> gt_raw;
  gt_raw.reserve(codes.size());
  for (const Tensor& c : codes) gt_raw.push_back(patchify(c, patch_));

  CausalTransformer::State state = decoder_.make_state();
  QState prior_q, post_q;
  if (cond.static_tokens.defined()) {
    Tensor pe0 = repeat_rows(positional_encoding(0, dim), cond.static_tokens.dim(0));
    Tensor blk = add(cond.static_tokens, pe0);
    decoder_.forward_step(blk, state);
    prior_q.visible.push_back(add(cond.static_tokens, pe0));
    post_q.visible.push_back(add(cond.static_tokens, pe0));
  }

  auto traj_row = [&](int t) -> Tensor {
    return add(cond.traj_tokens[static_cast<size_t>(t)], positional_encoding(t + 1, dim));
  };
  auto q_push = [&](QState& q, const InferenceNetwork& net, const Tensor& raw, int t) {
    Tensor blk = embed_block(raw, net.patch_embed, t + 1);
    if (static_cast<int>(cond.traj_tokens.size()) > t) blk = concat({traj_row(t), blk}, 0);
    q.visible.push_back(blk);
    q.steps_pushed = t + 1;
  };

  RolloutResult result;
  Tensor recon_acc = Tensor::scalar(0.0);
  Tensor kl_acc = Tensor::scalar(0.0);
  std::vector<Tensor> predicted_raw;

  for (int t = 0; t + 1 < total; ++t) {
    const bool predicting = (t + 1) >= n_obs;
    Tensor raw = t < n_obs ? gt_raw[static_cast<size_t>(t)]
                           : predicted_raw[static_cast<size_t>(t - n_obs)];
    Tensor emb = embed_block(raw, p_patch_embed_, t + 1);

    if (predicting && cfg_.stochastic) {
      if (prior_q.steps_pushed <= t) q_push(prior_q, prior_, raw, t);
      auto [mu_p, lv_p] = prior_.infer(prior_q.visible);
      Tensor s;
      if (teacher) {
        while (post_q.steps_pushed <= t + 1) {
          q_push(post_q, posterior_, gt_raw[static_cast<size_t>(post_q.steps_pushed)],
                 post_q.steps_pushed);
        }
        auto [mu_q, lv_q] = posterior_.infer(post_q.visible);
        s = add(mu_q, mul(exp(mul_scalar(lv_q, 0.5)), Tensor::randn({1, dim}, rng)));
        if (build_loss) kl_acc = add(kl_acc, gaussian_kl(mu_q, lv_q, mu_p, lv_p));
      } else {
        s = add(mu_p, mul(exp(mul_scalar(lv_p, 0.5)), Tensor::randn({1, dim}, rng)));
      }
      // single key/value cross-attention: every token of the newest block
      // receives the value projection of s_t
      emb = add(emb, repeat_rows(inject_o_.forward(inject_v_.forward(s)), patch_.k));
    } else if (cfg_.stochastic && prior_q.steps_pushed <= t) {
      q_push(prior_q, prior_, raw, t);
    }

    Tensor block = emb;
    if (static_cast<int>(cond.traj_tokens.size()) > t) block = concat({traj_row(t), block}, 0);

    Tensor out = decoder_.forward_step(block, state);
    if (predicting) {
      Tensor z_out = narrow(out, 0, out.dim(0) - patch_.k, patch_.k);
      Tensor pred = out_head_.forward(ln_out_.forward(z_out));
      predicted_raw.push_back(pred);
      result.predicted.push_back(unpatchify(pred, patch_));
      if (build_loss && teacher) {
        recon_acc = add(recon_acc, mse(pred, gt_raw[static_cast<size_t>(t + 1)]));
      }
    }
  }

  if (build_loss) {
    result.recon_term = recon_acc;
    result.kl_term = kl_acc;
  }
  return result;
}

Tensor PredictorModel::predict_step(const std::vector<Tensor>& history, const Tensor* s,
                                    const ConditioningBundle& cond) const {
  if (history.empty()) throw ContractError("predict_step requires a non-empty history");
  const int dim = patch_.token_dim;
  CausalTransformer::State state = decoder_.make_state();
  if (cond.static_tokens.defined()) {
    decoder_.forward_step(add(cond.static_tokens,
                              repeat_rows(positional_encoding(0, dim),
                                          cond.static_tokens.dim(0))),
                          state);
  }
  Tensor out;
  const int n = static_cast<int>(history.size());
  for (int t = 0; t < n; ++t) {
    Tensor emb = embed_block(patchify(history[static_cast<size_t>(t)], patch_),
                             p_patch_embed_, t + 1);
    if (t == n - 1 && s != nullptr) {
      emb = add(emb, repeat_rows(inject_o_.forward(inject_v_.forward(*s)), patch_.k));
    }
    Tensor block = emb;
    if (static_cast<int>(cond.traj_tokens.size()) > t) {
      block = concat({add(cond.traj_tokens[static_cast<size_t>(t)],
                          positional_encoding(t + 1, dim)),
                      block},
                     0);
    }
    out = decoder_.forward_step(block, state);
  }
  Tensor z_out = narrow(out, 0, out.dim(0) - patch_.k, patch_.k);
  return unpatchify(out_head_.forward(ln_out_.forward(z_out)), patch_);
}

std::vector<Tensor> PredictorModel::extrapolate(const std::vector<Tensor>& observed,
                                                const std::vector<ConditioningBundle>& per_window,
                                                int horizon, RandomStream& rng) const {
  if (horizon < 1) throw ContractError("extrapolate requires horizon >= 1");
  const int n_windows = (horizon + cfg_.t_fut - 1) / cfg_.t_fut;
  if (static_cast<int>(per_window.size()) < n_windows) {
    throw ContractError("conditioning covers " + std::to_string(per_window.size()) +
                        " windows but the horizon needs " + std::to_string(n_windows));
  }
  std::vector<Tensor> window_obs = observed;
  std::vector<Tensor> out;
  for (int w = 0; w < n_windows; ++w) {
    RolloutResult r =
        rollout(window_obs, per_window[static_cast<size_t>(w)], RolloutMode::prior_sample, rng);
    for (const Tensor& p : r.predicted) out.push_back(p);
    // re-window: the trailing t_obs predictions become observations
    std::vector<Tensor> joined = window_obs;
    joined.insert(joined.end(), r.predicted.begin(), r.predicted.end());
    const int keep = std::min<int>(cfg_.t_obs, static_cast<int>(joined.size()));
    window_obs.assign(joined.end() - keep, joined.end());
  }
  out.resize(static_cast<size_t>(horizon));
  return out;
}

ParamMap PredictorModel::parameters() {
  ParamMap p;
  p.push_back({"p.patch_embed", p_patch_embed_});
  decoder_.collect(p, "p.dec");
  ln_out_.collect(p, "p.ln_out");
  out_head_.collect(p, "p.out");
  inject_v_.collect(p, "p.inject_v");
  inject_o_.collect(p, "p.inject_o");
  prior_.collect(p, "q_prior");
  posterior_.collect(p, "q_post");
  for (size_t i = 0; i < map_conv_.size(); ++i) {
    map_conv_[i].collect(p, "cond.map" + std::to_string(i));
  }
  map_proj_.collect(p, "cond.map_proj");
  traj_embed_.collect(p, "cond.traj");
  loc_embed_.collect(p, "cond.loc");
  aug_embed_.collect(p, "cond.aug");
  return p;
}

void PredictorModel::save(const std::string& path) const {
  std::vector<std::pair<std::string, Tensor>> tensors;
  auto* self = const_cast<PredictorModel*>(this);
  for (const Param& p : self->parameters()) tensors.emplace_back(p.name, p.tensor);
  std::vector<double> meta{
      static_cast<double>(cfg_.latent_c),    static_cast<double>(cfg_.latent_h),
      static_cast<double>(cfg_.latent_w),    static_cast<double>(cfg_.patches),
      static_cast<double>(cfg_.p_layers),    static_cast<double>(cfg_.q_layers),
      static_cast<double>(cfg_.heads),       static_cast<double>(cfg_.ff),
      cfg_.stochastic ? 1.0 : 0.0,           cfg_.use_map ? 1.0 : 0.0,
      cfg_.use_traj ? 1.0 : 0.0,             cfg_.use_location ? 1.0 : 0.0,
      cfg_.use_aug ? 1.0 : 0.0,              static_cast<double>(cfg_.t_obs),
      static_cast<double>(cfg_.t_fut),       static_cast<double>(cfg_.n_locations),
      static_cast<double>(cfg_.n_augs),      static_cast<double>(cfg_.map_h),
      static_cast<double>(cfg_.map_w)};
  tensors.emplace_back("config.meta", Tensor::from_data({static_cast<int>(meta.size())}, meta));
  save_checkpoint(path, tensors);
}

PredictorModel PredictorModel::load(const std::string& path) {
  auto tensors = load_checkpoint(path);
  const Tensor* meta = nullptr;
  for (const auto& [n, t] : tensors) {
    if (n == "config.meta") meta = &t;
  }
  if (!meta) throw FormatError("predictor checkpoint missing config.meta", 0);
  PredictorConfig cfg;
  int i = 0;
  cfg.latent_c = static_cast<int>(meta->at(i++));
  cfg.latent_h = static_cast<int>(meta->at(i++));
  cfg.latent_w = static_cast<int>(meta->at(i++));
  cfg.patches = static_cast<int>(meta->at(i++));
  cfg.p_layers = static_cast<int>(meta->at(i++));
  cfg.q_layers = static_cast<int>(meta->at(i++));
  cfg.heads = static_cast<int>(meta->at(i++));
  cfg.ff = static_cast<int>(meta->at(i++));
  cfg.stochastic = meta->at(i++) != 0.0;
  cfg.use_map = meta->at(i++) != 0.0;
  cfg.use_traj = meta->at(i++) != 0.0;
  cfg.use_location = meta->at(i++) != 0.0;
  cfg.use_aug = meta->at(i++) != 0.0;
  cfg.t_obs = static_cast<int>(meta->at(i++));
  cfg.t_fut = static_cast<int>(meta->at(i++));
  cfg.n_locations = static_cast<int>(meta->at(i++));
  cfg.n_augs = static_cast<int>(meta->at(i++));
  cfg.map_h = static_cast<int>(meta->at(i++));
  cfg.map_w = static_cast<int>(meta->at(i++));
  RandomStream rng(0);
  PredictorModel model(cfg, rng);
  ParamMap params = model.parameters();
  load_into(path, params);
  return model;
}

ElboParts elbo_loss(const RolloutResult& r, double beta) {
  if (!r.recon_term.defined() || !r.kl_term.defined()) {
    throw ContractError("elbo_loss requires a rollout built with build_loss");
  }
  Tensor total = add(r.recon_term, mul_scalar(r.kl_term, beta));
  return {total, r.recon_term, r.kl_term};
}

std::vector<PredTrainRow> train_predictor(PredictorModel& model,
                                          const std::vector<ogm::CodeSequence>& dataset,
                                          RandomStream& rng) {
  if (dataset.empty()) throw ContractError("train_predictor requires a non-empty dataset");
  const PredictorConfig& cfg = model.config();
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  AdamW opt(model.parameters(), opt_cfg);

  std::vector<PredTrainRow> curve;
  curve.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    const double beta = cfg.schedule.beta_at(step, cfg.steps_per_epoch);
    ComputationTape tape;
    TapeGuard guard(tape);
    std::vector<Tensor> totals;
    double recon_val = 0.0, kl_val = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& seq = dataset[static_cast<size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
      ConditioningBundle cond = model.build_conditioning(
          seq.maps.empty() ? nullptr : &seq.maps[0], &seq.trajectory, 0, seq.t_total(),
          seq.location_id, seq.aug_id);
      if (cfg.cond_dropout > 0.0 && rng.bernoulli(cfg.cond_dropout)) {
        cond.static_tokens = Tensor();  // conditioning-token dropout
      }
      RolloutResult r = model.rollout(seq.codes, cond, RolloutMode::posterior_teacher, rng,
                                      seq.t_total() - cfg.t_obs, /*build_loss=*/true);
      ElboParts parts = elbo_loss(r, beta);
      totals.push_back(reshape(parts.total, {1, 1}));
      recon_val += parts.recon.item();
      kl_val += parts.kl.item();
    }
    Tensor objective =
        mul_scalar(sum_all(concat(totals, 0)), 1.0 / static_cast<double>(totals.size()));
    recon_val /= static_cast<double>(cfg.batch_size);
    kl_val /= static_cast<double>(cfg.batch_size);
    if (!std::isfinite(recon_val) || !std::isfinite(kl_val)) {
      throw TrainingError("non-finite predictor loss at step " + std::to_string(step), "elbo",
                          step);
    }
    opt.zero_grad();
    tape.backward(objective);
    opt.step();
    curve.push_back({step, recon_val, kl_val, beta});
  }
  return curve;
}

}  // namespace lopr::pred
