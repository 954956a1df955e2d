#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lopr/experiment.hpp"

using lopr::pipeline::Config;

int main(int argc, char** argv) {
  CLI::App app{"lopr: latent occupancy-grid forecasting pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool has_seed = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->add_option("-o,--out", out_override, "override out_dir");
    sub->add_option("--seed", seed_override, "override seed")->each([&](const std::string&) {
      has_seed = true;
    });
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic LiDAR sequence datasets");
  CLI::App* vae = app.add_subcommand("train-vae", "train the VAE-GAN representation");
  CLI::App* enc = app.add_subcommand("encode", "encode the training set into latent codes");
  CLI::App* prd = app.add_subcommand("train-predictor", "train the sequence predictor");
  CLI::App* ref = app.add_subcommand("train-refiner", "train the diffusion batch refiner");
  CLI::App* evl = app.add_subcommand("eval", "evaluate predictions with the IS metric");
  CLI::App* bas = app.add_subcommand("baseline", "evaluate the fixed-frame baseline");
  CLI::App* rep = app.add_subcommand("report", "aggregate metrics.csv into summary.csv");
  CLI::App* run = app.add_subcommand("run", "run the full pipeline, resuming from artifacts");
  for (CLI::App* sub : {gen, vae, enc, prd, ref, evl, bas, rep, run}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = config_path.empty() ? Config{} : lopr::pipeline::parse_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (has_seed) cfg.seed = seed_override;

    if (gen->parsed()) lopr::pipeline::run_gen_data(cfg);
    if (vae->parsed()) lopr::pipeline::run_train_vae(cfg);
    if (enc->parsed()) lopr::pipeline::run_encode(cfg);
    if (prd->parsed()) lopr::pipeline::run_train_predictor(cfg);
    if (ref->parsed()) lopr::pipeline::run_train_refiner(cfg);
    if (evl->parsed()) lopr::pipeline::run_eval(cfg);
    if (bas->parsed()) lopr::pipeline::run_baseline(cfg);
    if (rep->parsed()) lopr::pipeline::run_report(cfg);
    if (run->parsed()) lopr::pipeline::run_experiment(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
