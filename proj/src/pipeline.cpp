#include "spa/pipeline.hpp"

#include <cmath>
#include <fstream>

namespace spa {

using nlohmann::ordered_json;

TransitionModel parse_transition_model(const std::string& name) {
  if (name == "segment") return TransitionModel::segment;
  if (name == "per_step") return TransitionModel::per_step;
  fail(ErrorCode::parse_error, "unknown transition model '" + name + "'");
}

FewShotTrainResult train_classifier_stage(const ReferenceSet& refs,
                                          const Matrix& text,
                                          const RunConfig& cfg) {
  FewShotClassifier clf = init_classifier(text, cfg.seed);
  if (refs.dim() != clf.dim())
    fail(ErrorCode::dimension_mismatch,
         "references and text embeddings disagree on dimension");
  TrainConfig tc;
  tc.steps = cfg.fewshot_steps;
  tc.lr = cfg.fewshot_lr;
  tc.early_stop_eps = cfg.fewshot_early_stop_eps;
  tc.early_stop_window = cfg.fewshot_early_stop_window;
  return train_fewshot(std::move(clf), refs.embeddings, refs.labels(), tc);
}

DiffusionTrainResult train_diffusion_stage(const TaskGraph& g,
                                           const RunConfig& cfg) {
  const std::vector<PhaseSequence> seqs = synthesize_dataset(
      g, cfg.diffusion_num_sequences, cfg.seed, cfg.diffusion_seq_max_len,
      parse_transition_model(cfg.transition_model));
  DiffusionTrainConfig dc;
  dc.epochs = cfg.diffusion_epochs;
  dc.batch = cfg.diffusion_batch;
  dc.lr = cfg.diffusion_lr;
  dc.train_len = cfg.diffusion_train_len;
  dc.T = cfg.diffusion_T;
  dc.beta_1 = cfg.diffusion_beta_1;
  dc.beta_T = cfg.diffusion_beta_T;
  dc.arch.width = cfg.denoiser_width;
  dc.arch.blocks = cfg.denoiser_blocks;
  dc.arch.kernel = cfg.denoiser_kernel;
  dc.arch.time_embed = cfg.denoiser_time_embed;
  dc.tau_dec = cfg.tau_dec;
  dc.seed = cfg.seed;
  return train_diffusion(seqs, g.k(), dc);
}

void run_adapt(const AdaptPaths& paths, const RunConfig& cfg) {
  const ReferenceSet refs =
      load_reference_manifest(paths.refs_manifest, cfg.normalize_embeddings);
  Matrix text = load_embedding_matrix(
      paths.text_header,
      std::filesystem::path(paths.text_header).replace_extension(".bin"));
  if (cfg.normalize_embeddings) text = l2_normalized(text);
  const TaskGraph graph = load_task_graph(paths.graph);

  const FewShotTrainResult fs = train_classifier_stage(refs, text, cfg);
  const DiffusionTrainResult diff = train_diffusion_stage(graph, cfg);

  std::filesystem::create_directories(paths.out_dir);
  save_classifier(fs.clf, paths.out_dir / "classifier");
  save_diffusion_model(diff.model, paths.out_dir / "diffusion");

  ordered_json report{
      {"fewshot", {{"steps", static_cast<int>(fs.loss_trace.size())},
                   {"loss_trace", fs.loss_trace}}},
      {"diffusion", {{"epochs", static_cast<int>(diff.loss_trace.size()) - 1},
                     {"loss_trace", diff.loss_trace}}},
      {"config", config_to_json(cfg)}};
  std::ofstream out(paths.out_dir / "train_report.json");
  if (!out)
    fail(ErrorCode::io_error,
         "cannot write " + (paths.out_dir / "train_report.json").string());
  out << report.dump(2) << "\n";
}

InferResult run_infer(const Matrix& video, const ReferenceSet& refs,
                      const Matrix& text, const FewShotClassifier& clf,
                      const DiffusionModel* diffusion, const RunConfig& cfg,
                      const InferOptions& opt) {
  if (opt.diffusion && diffusion == nullptr)
    fail(ErrorCode::invalid_range, "diffusion stage enabled without a model");

  InferResult r;
  if (opt.tta) {
    TtaConfig tc;
    tc.epochs = cfg.tta_epochs;
    tc.lr = cfg.tta_lr;
    tc.momentum = cfg.tta_momentum;
    tc.tau = cfg.tau;
    tc.tau_ref = cfg.tau_ref;
    TtaResult tta = tta_adapt(video, refs, text, clf, tc);
    r.adapters = std::move(tta.adapters);
    r.tta_loss_trace = std::move(tta.loss_trace);
  } else {
    r.adapters = init_adapters(static_cast<int>(video.cols()), cfg.tau, cfg.tau_ref);
  }

  r.streams.s_ref = stream_reference(video, refs, r.adapters);
  r.streams.s_vl = stream_vision_language(video, text, r.adapters);
  r.streams.s_fs = stream_fewshot(clf, video);
  r.fused = fuse_streams(r.streams, {cfg.fuse_w_ref, cfg.fuse_w_vl, cfg.fuse_w_fs});

  if (opt.diffusion) {
    const int t_cap = static_cast<int>(
        std::llround(diffusion->schedule.T * cfg.t_cap_ratio));
    r.t_star = cfg.noise_step >= 0
                   ? cfg.noise_step
                   : estimate_noise_step(r.fused, diffusion->schedule, t_cap);
    if (cfg.renoise) {
      Rng rng(cfg.seed);
      r.refined = refine_sequence(*diffusion, r.fused, r.t_star, true, &rng);
    } else {
      r.refined = refine_sequence(*diffusion, r.fused, r.t_star);
    }
  } else {
    r.t_star = 0;
    r.refined = r.fused;
  }

  r.labels = decode_phases(r.refined);
  return r;
}

namespace {

ordered_json matrix_rows(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

ordered_json infer_result_to_json(const InferResult& r, const InferOptions& opt,
                                  const RunConfig& cfg) {
  ordered_json out{{"labels", r.labels},
                   {"t_star", r.t_star},
                   {"tta_loss_trace", r.tta_loss_trace},
                   {"fused", matrix_rows(r.fused)},
                   {"refined", matrix_rows(r.refined)}};
  if (opt.debug) {
    out["streams"] = ordered_json{{"s_ref", matrix_rows(r.streams.s_ref)},
                                  {"s_vl", matrix_rows(r.streams.s_vl)},
                                  {"s_fs", matrix_rows(r.streams.s_fs)}};
  }
  out["stages"] = ordered_json{{"tta", opt.tta}, {"diffusion", opt.diffusion}};
  out["config"] = config_to_json(cfg);
  return out;
}

}  // namespace spa
