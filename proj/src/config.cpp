#include "spa/config.hpp"

#include <fstream>

#include "spa/error.hpp"

namespace spa {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Single authority on the key set: visits every (name, field) pair.
template <typename Visitor>
void visit_config(RunConfig& cfg, Visitor&& visit) {
  visit("seed", cfg.seed);
  visit("normalize_embeddings", cfg.normalize_embeddings);
  visit("fewshot_lr", cfg.fewshot_lr);
  visit("fewshot_steps", cfg.fewshot_steps);
  visit("fewshot_early_stop_eps", cfg.fewshot_early_stop_eps);
  visit("fewshot_early_stop_window", cfg.fewshot_early_stop_window);
  visit("tau", cfg.tau);
  visit("tau_ref", cfg.tau_ref);
  visit("tau_dec", cfg.tau_dec);
  visit("tta_epochs", cfg.tta_epochs);
  visit("tta_lr", cfg.tta_lr);
  visit("tta_momentum", cfg.tta_momentum);
  visit("fuse_w_ref", cfg.fuse_w_ref);
  visit("fuse_w_vl", cfg.fuse_w_vl);
  visit("fuse_w_fs", cfg.fuse_w_fs);
  visit("diffusion_T", cfg.diffusion_T);
  visit("diffusion_beta_1", cfg.diffusion_beta_1);
  visit("diffusion_beta_T", cfg.diffusion_beta_T);
  visit("diffusion_schedule", cfg.diffusion_schedule);
  visit("t_cap_ratio", cfg.t_cap_ratio);
  visit("diffusion_epochs", cfg.diffusion_epochs);
  visit("diffusion_batch", cfg.diffusion_batch);
  visit("diffusion_lr", cfg.diffusion_lr);
  visit("diffusion_train_len", cfg.diffusion_train_len);
  visit("diffusion_num_sequences", cfg.diffusion_num_sequences);
  visit("diffusion_seq_max_len", cfg.diffusion_seq_max_len);
  visit("denoiser_width", cfg.denoiser_width);
  visit("denoiser_blocks", cfg.denoiser_blocks);
  visit("denoiser_kernel", cfg.denoiser_kernel);
  visit("denoiser_time_embed", cfg.denoiser_time_embed);
  visit("transition_model", cfg.transition_model);
  visit("renoise", cfg.renoise);
  visit("noise_step", cfg.noise_step);
  visit("bench_noise_fewshot", cfg.bench_noise_fewshot);
  visit("bench_noise_video", cfg.bench_noise_video);
  visit("bench_min_separation", cfg.bench_min_separation);
  visit("bench_modality_gap", cfg.bench_modality_gap);
  visit("bench_drift", cfg.bench_drift);
  visit("bench_max_len", cfg.bench_max_len);
  visit("bench_videos", cfg.bench_videos);
  visit("bench_shots", cfg.bench_shots);
  visit("bench_k", cfg.bench_k);
  visit("bench_d", cfg.bench_d);
}

}  // namespace

void set_config_key(RunConfig& cfg, const std::string& key, const json& value) {
  bool found = false;
  visit_config(cfg, [&](const char* name, auto& field) {
    if (found || key != name) return;
    found = true;
    try {
      field = value.get<std::remove_reference_t<decltype(field)>>();
    } catch (const json::exception&) {
      fail(ErrorCode::parse_error, "config key '" + key + "' has the wrong type");
    }
  });
  if (!found) fail(ErrorCode::unknown_config_key, "'" + key + "'");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
  if (!doc.is_object())
    fail(ErrorCode::parse_error, path.string() + ": config must be a JSON object");
  RunConfig cfg;
  for (const auto& [key, value] : doc.items()) set_config_key(cfg, key, value);
  return cfg;
}

ordered_json config_to_json(const RunConfig& cfg) {
  ordered_json out;
  visit_config(const_cast<RunConfig&>(cfg),
               [&](const char* name, auto& field) { out[name] = field; });
  return out;
}

}  // namespace spa
