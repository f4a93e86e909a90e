#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace spa {

/// Flat run configuration. Every knob of the pipeline lives here with its
/// default; files and CLI flags override individual keys and unknown keys
/// are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  bool normalize_embeddings = true;

  double fewshot_lr = 0.01;
  int fewshot_steps = 500;
  double fewshot_early_stop_eps = 1e-7;
  int fewshot_early_stop_window = 20;

  double tau = 0.07;
  double tau_ref = 0.07;
  double tau_dec = 0.5;

  int tta_epochs = 15;
  double tta_lr = 1e-4;
  double tta_momentum = 0.0;

  double fuse_w_ref = 1.0 / 3;
  double fuse_w_vl = 1.0 / 3;
  double fuse_w_fs = 1.0 / 3;

  int diffusion_T = 100;
  double diffusion_beta_1 = 1e-4;
  double diffusion_beta_T = 0.02;
  std::string diffusion_schedule = "linear";
  double t_cap_ratio = 0.5;
  int diffusion_epochs = 20;
  int diffusion_batch = 128;
  double diffusion_lr = 1e-4;
  int diffusion_train_len = 512;
  int diffusion_num_sequences = 512;
  int diffusion_seq_max_len = 512;
  int denoiser_width = 64;
  int denoiser_blocks = 4;
  int denoiser_kernel = 9;
  int denoiser_time_embed = 64;

  std::string transition_model = "segment";
  bool renoise = false;
  int noise_step = -1;  // -1 = estimate from entropy

  double bench_noise_fewshot = 0.1;
  double bench_noise_video = 0.15;
  double bench_min_separation = 0.3;
  double bench_modality_gap = 0.3;
  double bench_drift = 0.0;
  int bench_max_len = 512;
  int bench_videos = 10;
  int bench_shots = 16;
  int bench_k = 7;
  int bench_d = 64;
};

/// Applies one key; unknown keys raise UnknownConfigKey.
void set_config_key(RunConfig& cfg, const std::string& key,
                    const nlohmann::json& value);

/// Reads a flat JSON object and applies every key over the defaults.
RunConfig load_run_config(const std::filesystem::path& path);

/// Full snapshot in declaration order, embedded in reports for reproducibility.
nlohmann::ordered_json config_to_json(const RunConfig& cfg);

}  // namespace spa
