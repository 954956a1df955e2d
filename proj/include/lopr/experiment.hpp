#pragma once

#include <string>
#include <vector>

#include "lopr/dataset.hpp"
#include "lopr/diffusion.hpp"
#include "lopr/metrics.hpp"
#include "lopr/predictor.hpp"
#include "lopr/representation.hpp"

namespace lopr::pipeline {

// Every knob of the experiment pipeline lives in a plain-text
// `key = value` config file; unknown keys are rejected. Defaults below.
struct Config {
  std::string out_dir = "out";
  std::uint64_t seed = 1;

  // data generation
  std::string archetype = "straight_road";  // straight_road|intersection|fork|mixed
  int n_train_sequences = 200;
  int n_eval_sequences = 100;
  int grid_h = 128;
  int grid_w = 128;
  double resolution = 1.0 / 3.0;
  int n_beams = 360;
  double max_range = 30.0;
  int t_obs = 5;
  int t_fut = 15;
  int horizon = 30;
  bool augment = true;  // spatial/temporal augmentations for representation learning

  // representation learning
  int latent_c = 8;
  std::vector<int> vae_channels = {8, 16, 24, 32, 48};
  std::vector<int> disc_channels = {8, 16, 24, 32};
  double vae_beta = 0.01;
  double adv_weight = 0.1;
  double r1_weight = 10.0;
  int r1_interval = 8;
  double vae_lr = 2e-4;
  int vae_batch = 4;
  int vae_steps = 2000;
  bool use_gan = true;

  // prediction
  std::string preset = "desk";  // desk|paper_main|paper_appendix
  int patches = 2;
  int p_layers = 2;
  int q_layers = 2;
  int heads = 2;
  int ff = 128;
  bool stochastic = true;
  bool use_map = false;
  bool use_traj = false;
  bool use_location = true;
  bool use_aug = true;
  double cond_dropout = 0.0;
  double lr = 4e-4;
  int pred_batch = 4;
  int pred_steps = 3000;
  double beta_start = 2e-6;
  int warmup_epochs = 10;
  double beta_end = 0.2;
  long ramp_steps = 50000;

  // diffusion refiner
  bool refiner = false;
  int delta = 4;
  int diffusion_steps = 100;
  int refiner_channels = 8;
  double refiner_lr = 4e-4;
  int refiner_batch = 2;
  int refiner_steps = 1200;

  // evaluation
  int n_samples = 10;
  double t_occ = ogm::kOccupiedThreshold;
  double t_free = ogm::kFreeThreshold;
  int pgm_sequences = 1;  // PGM dumps for the first n eval sequences

  ogm::GridSpec grid_spec() const { return {grid_h, grid_w, resolution}; }
  rep::VaeGanConfig vae_config() const;
  pred::PredictorConfig predictor_config() const;
  diffusion::RefinerConfig refiner_config() const;

  std::string train_path() const { return out_dir + "/train.bin"; }
  std::string eval_path() const { return out_dir + "/eval.bin"; }
  std::string vae_path() const { return out_dir + "/vae.ckpt"; }
  std::string codes_path() const { return out_dir + "/codes.bin"; }
  std::string predictor_path() const { return out_dir + "/predictor.ckpt"; }
  std::string refiner_path() const { return out_dir + "/refiner.ckpt"; }
  std::string metrics_path() const { return out_dir + "/metrics.csv"; }
  std::string summary_path() const { return out_dir + "/summary.csv"; }
};

Config parse_config(const std::string& path);
Config parse_config_text(const std::string& text);

// Synthetic sequence generation shared by the data stage and tests. The
// world seed is derived from (seed, index) and recorded as sequence_id so a
// scene can be rebuilt later.
ogm::SequenceSample make_sequence(scene::Archetype arch, std::uint64_t world_seed,
                                  const Config& cfg, int total_frames, int n_windows);

// Trajectory for one sliding window, re-normalized to the window's first
// frame (from the recorded ego poses).
scene::PlannedTrajectory window_trajectory(const ogm::SequenceSample& sample, int ref_step,
                                           int len);

// Pipeline stages; each writes its artifact under out_dir and raises an
// actionable error naming the missing upstream stage.
void run_gen_data(const Config& cfg);
void run_train_vae(const Config& cfg);
void run_encode(const Config& cfg);
void run_train_predictor(const Config& cfg);
void run_train_refiner(const Config& cfg);
void run_eval(const Config& cfg);
void run_baseline(const Config& cfg);
void run_report(const Config& cfg);

// gen-data -> train-vae -> encode -> train-predictor -> [train-refiner] ->
// eval; stages with existing artifacts are skipped so interrupted runs
// resume from their checkpoints.
void run_experiment(const Config& cfg);

}  // namespace lopr::pipeline
