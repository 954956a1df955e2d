#include "lopr/experiment.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace lopr::pipeline {

namespace fs = std::filesystem;

rep::VaeGanConfig Config::vae_config() const {
  rep::VaeGanConfig v;
  v.grid_h = grid_h;
  v.grid_w = grid_w;
  v.latent_c = latent_c;
  v.enc_channels = vae_channels;
  v.disc_channels = disc_channels;
  v.beta = vae_beta;
  v.adv_weight = adv_weight;
  v.r1_weight = r1_weight;
  v.r1_interval = r1_interval;
  v.lr = vae_lr;
  v.batch_size = vae_batch;
  v.steps = vae_steps;
  v.use_gan = use_gan;
  v.seed = seed;
  return v;
}

pred::PredictorConfig Config::predictor_config() const {
  pred::PredictorConfig p = pred::preset_config(preset);
  if (preset == "desk") {
    p.latent_c = latent_c;
    p.patches = patches;
    p.p_layers = p_layers;
    p.q_layers = q_layers;
    p.heads = heads;
    p.ff = ff;
  }
  p.latent_h = grid_h >> static_cast<int>(vae_channels.size());
  p.latent_w = grid_w >> static_cast<int>(vae_channels.size());
  p.stochastic = stochastic;
  p.use_map = use_map;
  p.use_traj = use_traj;
  p.use_location = use_location;
  p.use_aug = use_aug;
  p.cond_dropout = cond_dropout;
  p.t_obs = t_obs;
  p.t_fut = t_fut;
  p.map_h = grid_h;
  p.map_w = grid_w;
  p.lr = lr;
  p.batch_size = pred_batch;
  p.steps = pred_steps;
  p.schedule = {beta_start, warmup_epochs, beta_end, ramp_steps};
  p.seed = seed;
  return p;
}

diffusion::RefinerConfig Config::refiner_config() const {
  diffusion::RefinerConfig r;
  r.grid_h = grid_h;
  r.grid_w = grid_w;
  r.delta = delta;
  r.t_steps = diffusion_steps;
  r.base_channels = refiner_channels;
  r.lr = refiner_lr;
  r.batch_size = refiner_batch;
  r.steps = refiner_steps;
  r.seed = seed;
  return r;
}

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(line_no) + " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    if (key == "out_dir") cfg.out_dir = val;
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "archetype") cfg.archetype = val;
    else if (key == "n_train_sequences") cfg.n_train_sequences = std::stoi(val);
    else if (key == "n_eval_sequences") cfg.n_eval_sequences = std::stoi(val);
    else if (key == "grid_h") cfg.grid_h = std::stoi(val);
    else if (key == "grid_w") cfg.grid_w = std::stoi(val);
    else if (key == "resolution") cfg.resolution = std::stod(val);
    else if (key == "n_beams") cfg.n_beams = std::stoi(val);
    else if (key == "max_range") cfg.max_range = std::stod(val);
    else if (key == "t_obs") cfg.t_obs = std::stoi(val);
    else if (key == "t_fut") cfg.t_fut = std::stoi(val);
    else if (key == "horizon") cfg.horizon = std::stoi(val);
    else if (key == "augment") cfg.augment = parse_bool(val, key);
    else if (key == "latent_c") cfg.latent_c = std::stoi(val);
    else if (key == "vae_channels") cfg.vae_channels = parse_int_list(val);
    else if (key == "disc_channels") cfg.disc_channels = parse_int_list(val);
    else if (key == "vae_beta") cfg.vae_beta = std::stod(val);
    else if (key == "adv_weight") cfg.adv_weight = std::stod(val);
    else if (key == "r1_weight") cfg.r1_weight = std::stod(val);
    else if (key == "r1_interval") cfg.r1_interval = std::stoi(val);
    else if (key == "vae_lr") cfg.vae_lr = std::stod(val);
    else if (key == "vae_batch") cfg.vae_batch = std::stoi(val);
    else if (key == "vae_steps") cfg.vae_steps = std::stoi(val);
    else if (key == "use_gan") cfg.use_gan = parse_bool(val, key);
    else if (key == "preset") cfg.preset = val;
    else if (key == "patches") cfg.patches = std::stoi(val);
    else if (key == "p_layers") cfg.p_layers = std::stoi(val);
    else if (key == "q_layers") cfg.q_layers = std::stoi(val);
    else if (key == "heads") cfg.heads = std::stoi(val);
    else if (key == "ff") cfg.ff = std::stoi(val);
    else if (key == "stochastic") cfg.stochastic = parse_bool(val, key);
    else if (key == "use_map") cfg.use_map = parse_bool(val, key);
    else if (key == "use_traj") cfg.use_traj = parse_bool(val, key);
    else if (key == "use_location") cfg.use_location = parse_bool(val, key);
    else if (key == "use_aug") cfg.use_aug = parse_bool(val, key);
    else if (key == "cond_dropout") cfg.cond_dropout = std::stod(val);
    else if (key == "lr") cfg.lr = std::stod(val);
    else if (key == "pred_batch") cfg.pred_batch = std::stoi(val);
    else if (key == "pred_steps") cfg.pred_steps = std::stoi(val);
    else if (key == "beta_start") cfg.beta_start = std::stod(val);
    else if (key == "warmup_epochs") cfg.warmup_epochs = std::stoi(val);
    else if (key == "beta_end") cfg.beta_end = std::stod(val);
    else if (key == "ramp_steps") cfg.ramp_steps = std::stol(val);
    else if (key == "refiner") cfg.refiner = parse_bool(val, key);
    else if (key == "delta") cfg.delta = std::stoi(val);
    else if (key == "diffusion_steps") cfg.diffusion_steps = std::stoi(val);
    else if (key == "refiner_channels") cfg.refiner_channels = std::stoi(val);
    else if (key == "refiner_lr") cfg.refiner_lr = std::stod(val);
    else if (key == "refiner_batch") cfg.refiner_batch = std::stoi(val);
    else if (key == "refiner_steps") cfg.refiner_steps = std::stoi(val);
    else if (key == "n_samples") cfg.n_samples = std::stoi(val);
    else if (key == "t_occ") cfg.t_occ = std::stod(val);
    else if (key == "t_free") cfg.t_free = std::stod(val);
    else if (key == "pgm_sequences") cfg.pgm_sequences = std::stoi(val);
    else throw ContractError("unknown config key '" + key + "'");
  }
  return cfg;
}

Config parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  return parse_config_text(text);
}

namespace {

std::uint64_t world_seed_for(std::uint64_t seed, std::uint64_t index) {
  return seed + 0x9e3779b97f4a7c15ULL * (index + 1);
}

scene::Archetype archetype_for(const Config& cfg, int index) {
  if (cfg.archetype == "mixed") {
    return static_cast<scene::Archetype>(index % scene::kNumArchetypes);
  }
  return scene::archetype_from_name(cfg.archetype);
}

bool exists(const std::string& path) { return fs::exists(path); }

void require_artifact(const std::string& path, const std::string& producing_stage) {
  if (!exists(path)) {
    throw Error("missing " + path + "; run the '" + producing_stage + "' stage first");
  }
}

void ensure_out_dir(const Config& cfg) { fs::create_directories(cfg.out_dir); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ogm::SequenceSample make_sequence(scene::Archetype arch, std::uint64_t world_seed,
                                  const Config& cfg, int total_frames, int n_windows) {
  scene::SceneState state = scene::build_world(arch, world_seed);
  const ogm::GridSpec spec = cfg.grid_spec();
  ogm::SequenceSample out;
  out.sequence_id = world_seed;
  out.t_obs = cfg.t_obs;
  out.t_fut = total_frames - cfg.t_obs;
  out.location_id = static_cast<int>(arch);
  out.n_locations = scene::kNumArchetypes;
  out.trajectory = scene::planned_trajectory(state, total_frames);

  std::vector<scene::SceneState> states;
  states.reserve(static_cast<size_t>(total_frames));
  scene::SceneState cur = state;
  for (int t = 0; t < total_frames; ++t) {
    if (t > 0) cur = scene::step(cur, scene::kFrameDt);
    states.push_back(cur);
    const scene::LidarScan scan = scene::raycast(cur, cfg.n_beams, cfg.max_range);
    out.grids.push_back(ogm::scan_to_grid(scan, spec));
    out.ego_poses.push_back({cur.ego.pose.x, cur.ego.pose.y, cur.ego.pose.heading});
  }
  for (int w = 0; w < n_windows; ++w) {
    const int ref = std::min(total_frames - 1, w * cfg.t_fut + cfg.t_obs - 1);
    out.maps.push_back(scene::render_map(states[static_cast<size_t>(ref)], spec));
  }
  return out;
}

scene::PlannedTrajectory window_trajectory(const ogm::SequenceSample& sample, int ref_step,
                                           int len) {
  if (ref_step < 0 || ref_step >= static_cast<int>(sample.ego_poses.size())) {
    throw ContractError("window_trajectory: reference step out of range");
  }
  const auto& ref = sample.ego_poses[static_cast<size_t>(ref_step)];
  const double c = std::cos(ref[2]), s = std::sin(ref[2]);
  scene::PlannedTrajectory traj;
  traj.positions.resize(static_cast<size_t>(len));
  for (int k = 0; k < len; ++k) {
    const int idx = std::min<int>(ref_step + k, static_cast<int>(sample.ego_poses.size()) - 1);
    const auto& p = sample.ego_poses[static_cast<size_t>(idx)];
    const double dx = p[0] - ref[0], dy = p[1] - ref[1];
    traj.positions[static_cast<size_t>(k)] = {c * dx + s * dy, -s * dx + c * dy, 0.0};
  }
  if (len > 0) traj.positions[0] = {0.0, 0.0, 0.0};
  return traj;
}

void run_gen_data(const Config& cfg) {
  ensure_out_dir(cfg);
  std::vector<ogm::SequenceSample> train;
  train.reserve(static_cast<size_t>(cfg.n_train_sequences));
  for (int i = 0; i < cfg.n_train_sequences; ++i) {
    train.push_back(make_sequence(archetype_for(cfg, i), world_seed_for(cfg.seed, static_cast<std::uint64_t>(i)),
                                  cfg, cfg.t_obs + cfg.t_fut, 1));
  }
  ogm::write_dataset(train, cfg.train_path());
  train.clear();

  const int n_windows = (cfg.horizon + cfg.t_fut - 1) / cfg.t_fut;
  std::vector<ogm::SequenceSample> eval_set;
  eval_set.reserve(static_cast<size_t>(cfg.n_eval_sequences));
  for (int i = 0; i < cfg.n_eval_sequences; ++i) {
    eval_set.push_back(make_sequence(
        archetype_for(cfg, i),
        world_seed_for(cfg.seed, (1ULL << 20) + static_cast<std::uint64_t>(i)), cfg,
        cfg.t_obs + cfg.horizon, n_windows));
  }
  ogm::write_dataset(eval_set, cfg.eval_path());
  std::cout << "gen-data: " << cfg.n_train_sequences << " train / " << cfg.n_eval_sequences
            << " eval sequences -> " << cfg.out_dir << "\n";
}

void run_train_vae(const Config& cfg) {
  ensure_out_dir(cfg);
  require_artifact(cfg.train_path(), "gen-data");
  auto samples = ogm::read_dataset(cfg.train_path());

  std::vector<ogm::OccupancyGrid> pool;
  RandomStream aug_rng = RandomStream::derive(cfg.seed, 777);
  for (const auto& s : samples) {
    for (size_t t = 0; t < s.grids.size(); t += 2) {
      pool.push_back(s.grids[t]);
      if (cfg.augment) {
        const auto kind = static_cast<ogm::AugmentationKind>(aug_rng.uniform_int(1, 4));
        pool.push_back(ogm::transform_grid(s.grids[t], kind));
      }
    }
  }
  samples.clear();
  samples.shrink_to_fit();

  RandomStream rng = RandomStream::derive(cfg.seed, 1);
  rep::VaeGan model(cfg.vae_config(), rng);
  auto curve = rep::train_representation(model, pool, rng);
  model.save(cfg.vae_path());

  std::ofstream log(cfg.out_dir + "/vae_loss.csv");
  log << "step,recon,kl,loss_D,loss_G\n";
  for (const auto& row : curve) {
    log << row.step << "," << fmt(row.recon) << "," << fmt(row.kl) << "," << fmt(row.loss_d)
        << "," << fmt(row.loss_g) << "\n";
  }
  std::cout << "train-vae: " << curve.size() << " steps, final recon "
            << (curve.empty() ? 0.0 : curve.back().recon) << "\n";
}

void run_encode(const Config& cfg) {
  ensure_out_dir(cfg);
  require_artifact(cfg.train_path(), "gen-data");
  require_artifact(cfg.vae_path(), "train-vae");
  rep::VaeGan model = rep::VaeGan::load(cfg.vae_path());
  auto samples = ogm::read_dataset(cfg.train_path());
  std::vector<ogm::CodeSequence> sequences;
  sequences.reserve(samples.size());
  NoGradGuard ng;
  for (const auto& s : samples) {
    ogm::CodeSequence seq;
    seq.sequence_id = s.sequence_id;
    seq.t_obs = s.t_obs;
    seq.t_fut = s.t_fut;
    seq.location_id = s.location_id;
    seq.n_locations = s.n_locations;
    seq.aug_id = s.aug_id;
    seq.n_augs = s.n_augs;
    seq.maps = s.maps;
    seq.trajectory = s.trajectory;
    seq.ego_poses = s.ego_poses;
    for (const auto& g : s.grids) {
      seq.codes.push_back(model.encode(rep::grid_to_tensor(g)).mu);
    }
    sequences.push_back(std::move(seq));
  }
  ogm::write_code_cache(sequences, cfg.codes_path());
  std::cout << "encode: " << sequences.size() << " sequences -> " << cfg.codes_path() << "\n";
}

void run_train_predictor(const Config& cfg) {
  ensure_out_dir(cfg);
  require_artifact(cfg.codes_path(), "encode");
  auto sequences = ogm::read_code_cache(cfg.codes_path());
  pred::PredictorConfig pcfg = cfg.predictor_config();
  if (!sequences.empty()) {
    const Shape& s = sequences[0].codes.at(0).shape();
    pcfg.latent_c = s[0];
    pcfg.latent_h = s[1];
    pcfg.latent_w = s[2];
  }
  pcfg.steps_per_epoch =
      std::max<int>(1, static_cast<int>(sequences.size()) / std::max(1, pcfg.batch_size));
  RandomStream rng = RandomStream::derive(cfg.seed, 2);
  pred::PredictorModel model(pcfg, rng);
  auto curve = pred::train_predictor(model, sequences, rng);
  model.save(cfg.predictor_path());

  std::ofstream log(cfg.out_dir + "/predictor_loss.csv");
  log << "step,recon,kl,beta\n";
  for (const auto& row : curve) {
    log << row.step << "," << fmt(row.recon) << "," << fmt(row.kl) << "," << fmt(row.beta)
        << "\n";
  }
  std::cout << "train-predictor: " << curve.size() << " steps, final latent recon "
            << (curve.empty() ? 0.0 : curve.back().recon) << "\n";
}

void run_train_refiner(const Config& cfg) {
  ensure_out_dir(cfg);
  require_artifact(cfg.train_path(), "gen-data");
  require_artifact(cfg.vae_path(), "train-vae");
  rep::VaeGan vae = rep::VaeGan::load(cfg.vae_path());
  auto samples = ogm::read_dataset(cfg.train_path());

  const int max_sequences = 60;
  std::vector<diffusion::RefinerWindow> windows;
  {
    NoGradGuard ng;
    const int n_use = std::min<int>(max_sequences, static_cast<int>(samples.size()));
    for (int si = 0; si < n_use; ++si) {
      const auto& s = samples[static_cast<size_t>(si)];
      std::vector<ogm::OccupancyGrid> decoded;
      decoded.reserve(s.grids.size());
      for (const auto& g : s.grids) {
        Tensor z = vae.encode(rep::grid_to_tensor(g)).mu;
        decoded.push_back(rep::tensor_to_grid(vae.decode(z), g.spec));
      }
      for (int from = s.t_obs; from + 1 < s.t_total(); from += cfg.delta) {
        diffusion::RefinerWindow w;
        w.target = diffusion::grids_window(s.grids, from, cfg.delta);
        w.frames = diffusion::grids_window(decoded, from, cfg.delta);
        w.anchor = diffusion::grid_plane(s.grids[static_cast<size_t>(from) - 1]);
        windows.push_back(std::move(w));
      }
    }
  }
  samples.clear();
  samples.shrink_to_fit();

  RandomStream rng = RandomStream::derive(cfg.seed, 3);
  diffusion::DenoiseNet net(cfg.refiner_config(), rng);
  diffusion::NoiseSchedule schedule = diffusion::NoiseSchedule::linear(cfg.diffusion_steps);
  auto curve = diffusion::train_refiner(net, schedule, windows, rng);
  net.save(cfg.refiner_path());

  std::ofstream log(cfg.out_dir + "/refiner_loss.csv");
  log << "step,eps_mse\n";
  for (const auto& row : curve) log << row.step << "," << fmt(row.loss) << "\n";
  std::cout << "train-refiner: " << windows.size() << " windows, final loss "
            << (curve.empty() ? 0.0 : curve.back().loss) << "\n";
}

namespace {

struct VariantResult {
  std::string name;
  metrics::ISReport report;
};

void write_metrics(const Config& cfg, const std::vector<ogm::SequenceSample>& eval_set,
                   const std::vector<VariantResult>& variants) {
  std::ofstream m(cfg.metrics_path());
  m << "sequence_id,step,variant,psi\n";
  for (const auto& var : variants) {
    for (size_t si = 0; si < var.report.per_sequence_steps.size(); ++si) {
      const auto& steps = var.report.per_sequence_steps[si];
      for (size_t t = 0; t < steps.size(); ++t) {
        m << eval_set[si].sequence_id << "," << t << "," << var.name << "," << fmt(steps[t])
          << "\n";
      }
    }
  }
}

void write_summary(const Config& cfg, const std::vector<VariantResult>& variants) {
  std::ofstream s(cfg.summary_path());
  s << "variant,IS_5_15,IS_5_30,stderr\n";
  for (const auto& var : variants) {
    double is15 = 0.0, is30 = 0.0, var15 = 0.0;
    std::vector<double> seq15;
    bool have30 = true;
    for (const auto& steps : var.report.per_sequence_steps) {
      const size_t n15 = std::min<size_t>(steps.size(), static_cast<size_t>(cfg.t_fut));
      double acc = 0.0;
      for (size_t t = 0; t < n15; ++t) acc += steps[t];
      seq15.push_back(acc / static_cast<double>(n15));
      if (steps.size() < 2 * static_cast<size_t>(cfg.t_fut)) have30 = false;
    }
    for (double v : seq15) is15 += v;
    is15 /= static_cast<double>(seq15.size());
    for (double v : seq15) var15 += (v - is15) * (v - is15);
    const double stderr15 =
        seq15.size() > 1 ? std::sqrt(var15 / static_cast<double>(seq15.size() - 1)) /
                               std::sqrt(static_cast<double>(seq15.size()))
                         : 0.0;
    if (have30) {
      is30 = var.report.mean;
    }
    s << var.name << "," << fmt(is15) << "," << (have30 ? fmt(is30) : "nan") << ","
      << fmt(stderr15) << "\n";
  }
}

}  // namespace

void run_eval(const Config& cfg) {
  ensure_out_dir(cfg);
  require_artifact(cfg.eval_path(), "gen-data");
  require_artifact(cfg.vae_path(), "train-vae");
  require_artifact(cfg.predictor_path(), "train-predictor");
  if (cfg.refiner) require_artifact(cfg.refiner_path(), "train-refiner");

  rep::VaeGan vae = rep::VaeGan::load(cfg.vae_path());
  pred::PredictorModel model = pred::PredictorModel::load(cfg.predictor_path());
  auto eval_set = ogm::read_dataset(cfg.eval_path());
  if (eval_set.empty()) throw ContractError("evaluation dataset is empty");

  const ogm::GridSpec spec = cfg.grid_spec();
  RandomStream rng = RandomStream::derive(cfg.seed, 4);
  NoGradGuard ng;

  const int n_samp = model.config().stochastic ? cfg.n_samples : 1;
  std::vector<std::vector<std::vector<ogm::OccupancyGrid>>> rollouts;
  std::vector<std::vector<ogm::OccupancyGrid>> gt;
  std::vector<std::vector<ogm::OccupancyGrid>> ff;

  for (const auto& sample : eval_set) {
    const int horizon = std::min(cfg.horizon, sample.t_fut);
    const int n_windows = (horizon + cfg.t_fut - 1) / cfg.t_fut;

    std::vector<Tensor> obs_codes;
    for (int t = 0; t < sample.t_obs; ++t) {
      obs_codes.push_back(vae.encode(rep::grid_to_tensor(sample.grids[static_cast<size_t>(t)])).mu);
    }
    std::vector<pred::ConditioningBundle> bundles;
    for (int w = 0; w < n_windows; ++w) {
      const scene::PlannedTrajectory wtraj =
          window_trajectory(sample, w * cfg.t_fut, cfg.t_obs + cfg.t_fut);
      const ogm::MapRaster* map =
          static_cast<size_t>(w) < sample.maps.size() ? &sample.maps[static_cast<size_t>(w)] : nullptr;
      bundles.push_back(model.build_conditioning(map, &wtraj, 0, cfg.t_obs + cfg.t_fut,
                                                 sample.location_id, sample.aug_id));
    }

    std::vector<std::vector<ogm::OccupancyGrid>> per_sample;
    for (int s = 0; s < n_samp; ++s) {
      std::vector<Tensor> codes = model.extrapolate(obs_codes, bundles, horizon, rng);
      std::vector<ogm::OccupancyGrid> grids;
      grids.reserve(codes.size());
      for (const Tensor& z : codes) grids.push_back(rep::tensor_to_grid(vae.decode(z), spec));
      per_sample.push_back(std::move(grids));
    }
    rollouts.push_back(std::move(per_sample));

    std::vector<ogm::OccupancyGrid> truth(sample.grids.begin() + sample.t_obs,
                                          sample.grids.begin() + sample.t_obs + horizon);
    gt.push_back(std::move(truth));
    std::vector<ogm::OccupancyGrid> observed(sample.grids.begin(),
                                             sample.grids.begin() + sample.t_obs);
    ff.push_back(metrics::fixed_frame_baseline(observed, horizon));
  }

  std::vector<VariantResult> variants;
  variants.push_back({"lopr", metrics::evaluate(rollouts, gt, n_samp, cfg.t_occ, cfg.t_free)});

  if (cfg.refiner) {
    diffusion::DenoiseNet net = diffusion::DenoiseNet::load(cfg.refiner_path());
    diffusion::NoiseSchedule schedule = diffusion::NoiseSchedule::linear(cfg.diffusion_steps);
    std::vector<std::vector<std::vector<ogm::OccupancyGrid>>> refined;
    for (size_t si = 0; si < rollouts.size(); ++si) {
      const int best = variants[0].report.best_sample_index[si];
      const auto& pred_grids = rollouts[si][static_cast<size_t>(best)];
      const auto& sample = eval_set[si];
      std::vector<diffusion::RefinerWindow> windows;
      for (int from = 0; from < static_cast<int>(pred_grids.size()); from += cfg.delta) {
        diffusion::RefinerWindow w;
        w.frames = diffusion::grids_window(pred_grids, from, cfg.delta);
        // first window anchors on the last rasterized observation, later
        // windows on the preceding decoded prediction
        w.anchor = from == 0
                       ? diffusion::grid_plane(sample.grids[static_cast<size_t>(sample.t_obs) - 1])
                       : diffusion::grid_plane(pred_grids[static_cast<size_t>(from) - 1]);
        windows.push_back(std::move(w));
      }
      auto refined_windows = diffusion::refine(net, schedule, windows, rng);
      std::vector<ogm::OccupancyGrid> grids;
      for (size_t wi = 0; wi < refined_windows.size(); ++wi) {
        for (int f = 0; f < cfg.delta; ++f) {
          if (static_cast<int>(grids.size()) >= static_cast<int>(pred_grids.size())) break;
          Tensor plane = narrow(refined_windows[wi], 0, f, 1);
          grids.push_back(rep::tensor_to_grid(plane, spec));
        }
      }
      refined.push_back({std::move(grids)});
    }
    variants.push_back(
        {"lopr_refined", metrics::evaluate(refined, gt, 1, cfg.t_occ, cfg.t_free)});
  }

  {
    std::vector<std::vector<std::vector<ogm::OccupancyGrid>>> ff_roll;
    for (auto& f : ff) ff_roll.push_back({f});
    variants.push_back(
        {"fixed_frame", metrics::evaluate(ff_roll, gt, 1, cfg.t_occ, cfg.t_free)});
  }

  write_metrics(cfg, eval_set, variants);
  write_summary(cfg, variants);

  // PGM dumps for visual inspection
  fs::create_directories(cfg.out_dir + "/pgm");
  for (int si = 0; si < std::min<int>(cfg.pgm_sequences, static_cast<int>(eval_set.size())); ++si) {
    const int best = variants[0].report.best_sample_index[static_cast<size_t>(si)];
    char name[256];
    for (size_t t = 0; t < gt[static_cast<size_t>(si)].size(); ++t) {
      std::snprintf(name, sizeof name, "%s/pgm/seq%d_t%02zu_gt.pgm", cfg.out_dir.c_str(), si, t);
      ogm::write_pgm(gt[static_cast<size_t>(si)][t], name);
      std::snprintf(name, sizeof name, "%s/pgm/seq%d_t%02zu_pred.pgm", cfg.out_dir.c_str(), si, t);
      ogm::write_pgm(rollouts[static_cast<size_t>(si)][static_cast<size_t>(best)][t], name);
    }
  }

  for (const auto& v : variants) {
    std::cout << "eval: " << v.name << " IS=" << v.report.mean << " +- " << v.report.stderr_
              << " over " << v.report.n_sequences << " sequences\n";
  }
}

void run_baseline(const Config& cfg) {
  ensure_out_dir(cfg);
  require_artifact(cfg.eval_path(), "gen-data");
  auto eval_set = ogm::read_dataset(cfg.eval_path());
  if (eval_set.empty()) throw ContractError("evaluation dataset is empty");
  std::vector<std::vector<std::vector<ogm::OccupancyGrid>>> rollouts;
  std::vector<std::vector<ogm::OccupancyGrid>> gt;
  for (const auto& sample : eval_set) {
    const int horizon = std::min(cfg.horizon, sample.t_fut);
    std::vector<ogm::OccupancyGrid> observed(sample.grids.begin(),
                                             sample.grids.begin() + sample.t_obs);
    rollouts.push_back({metrics::fixed_frame_baseline(observed, horizon)});
    gt.push_back(std::vector<ogm::OccupancyGrid>(
        sample.grids.begin() + sample.t_obs, sample.grids.begin() + sample.t_obs + horizon));
  }
  std::vector<VariantResult> variants;
  variants.push_back({"fixed_frame", metrics::evaluate(rollouts, gt, 1, cfg.t_occ, cfg.t_free)});
  write_metrics(cfg, eval_set, variants);
  write_summary(cfg, variants);
  std::cout << "baseline: fixed_frame IS=" << variants[0].report.mean << "\n";
}

void run_report(const Config& cfg) {
  require_artifact(cfg.metrics_path(), "eval");
  std::ifstream in(cfg.metrics_path());
  std::string line;
  std::getline(in, line);  // header
  struct Row {
    std::string variant;
    std::uint64_t seq;
    int step;
    double psi;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string seq, step, variant, psi;
    std::getline(ss, seq, ',');
    std::getline(ss, step, ',');
    std::getline(ss, variant, ',');
    std::getline(ss, psi, ',');
    rows.push_back({variant, std::stoull(seq), std::stoi(step), std::stod(psi)});
  }
  // group by variant then sequence, in first-appearance order
  std::vector<VariantResult> variants;
  for (const Row& r : rows) {
    VariantResult* v = nullptr;
    for (auto& cand : variants) {
      if (cand.name == r.variant) v = &cand;
    }
    if (!v) {
      variants.push_back({r.variant, {}});
      v = &variants.back();
    }
    if (r.step == 0) v->report.per_sequence_steps.emplace_back();
    v->report.per_sequence_steps.back().push_back(r.psi);
  }
  for (auto& v : variants) {
    double acc = 0.0;
    for (auto& steps : v.report.per_sequence_steps) {
      double m = 0.0;
      for (double x : steps) m += x;
      acc += m / static_cast<double>(steps.size());
    }
    v.report.mean = acc / static_cast<double>(v.report.per_sequence_steps.size());
    v.report.n_sequences = static_cast<int>(v.report.per_sequence_steps.size());
  }
  write_summary(cfg, variants);
  std::cout << "variant,IS_5_15,IS_5_30,stderr\n";
  std::ifstream back(cfg.summary_path());
  std::getline(back, line);
  while (std::getline(back, line)) std::cout << line << "\n";
}

void run_experiment(const Config& cfg) {
  ensure_out_dir(cfg);
  auto stage = [&](const std::string& name, const std::string& artifact, auto&& fn) {
    if (!artifact.empty() && exists(artifact)) {
      std::cout << "[skip] " << name << " (" << artifact << " exists)\n";
      return;
    }
    std::cout << "[run ] " << name << "\n";
    fn();
  };
  stage("gen-data", cfg.train_path(), [&] { run_gen_data(cfg); });
  stage("train-vae", cfg.vae_path(), [&] { run_train_vae(cfg); });
  stage("encode", cfg.codes_path(), [&] { run_encode(cfg); });
  stage("train-predictor", cfg.predictor_path(), [&] { run_train_predictor(cfg); });
  if (cfg.refiner) {
    stage("train-refiner", cfg.refiner_path(), [&] { run_train_refiner(cfg); });
  }
  stage("eval", "", [&] { run_eval(cfg); });
}

}  // namespace lopr::pipeline
