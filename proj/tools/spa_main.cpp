#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spa/bench.hpp"
#include "spa/classifier.hpp"
#include "spa/config.hpp"
#include "spa/diffusion.hpp"
#include "spa/error.hpp"
#include "spa/io.hpp"
#include "spa/metrics.hpp"
#include "spa/pipeline.hpp"
#include "spa/task_graph.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace spa;

namespace {

void write_json(const ordered_json& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  ordered_json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
  return doc;
}

fs::path sibling_bin(const fs::path& header) {
  return fs::path(header).replace_extension(".bin");
}

Matrix load_matrix_pair(const fs::path& header, bool normalize) {
  Matrix m = load_embedding_matrix(header, sibling_bin(header));
  return normalize ? l2_normalized(m) : m;
}

/// Config file first, then explicit CLI overrides on top.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value pairs

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config JSON file");
    cmd->add_option("--set", overrides, "Override config key (key=value)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::parse_error, "--set needs key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string raw = kv.substr(eq + 1);
      nlohmann::json value;
      try {
        value = nlohmann::json::parse(raw);
      } catch (const nlohmann::json::parse_error&) {
        value = raw;  // bare strings like "linear"
      }
      set_config_key(cfg, key, value);
    }
    return cfg;
  }
};

int cmd_synth_bench(const ConfigArgs& cargs, const std::string& graph_path,
                    const std::string& out_dir, CLI::App* cmd) {
  RunConfig cfg = cargs.resolve();
  auto flag_override = [&](const char* flag, const char* key) {
    if (cmd->count(flag))
      set_config_key(cfg, key,
                     nlohmann::json::parse(cmd->get_option(flag)->as<std::string>()));
  };
  flag_override("--k", "bench_k");
  flag_override("--d", "bench_d");
  flag_override("--videos", "bench_videos");
  flag_override("--shots", "bench_shots");
  flag_override("--drift", "bench_drift");
  flag_override("--seed", "seed");
  flag_override("--min-separation", "bench_min_separation");
  flag_override("--modality-gap", "bench_modality_gap");
  flag_override("--noise-fewshot", "bench_noise_fewshot");
  flag_override("--noise-video", "bench_noise_video");
  flag_override("--max-len", "bench_max_len");

  const TaskGraph graph = load_task_graph(graph_path);
  if (graph.k() != cfg.bench_k)
    fail(ErrorCode::dimension_mismatch,
         "graph has " + std::to_string(graph.k()) + " phases, bench_k is " +
             std::to_string(cfg.bench_k));

  const SyntheticWorld world =
      make_synthetic_world(cfg.bench_k, cfg.bench_d, cfg.seed,
                           cfg.bench_min_separation, cfg.bench_modality_gap);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  save_embedding_matrix(world.text_prototypes, out / "text.json", out / "text.bin");
  save_task_graph(graph, out / "graph.json");

  Rng fewshot_rng(cfg.seed + 1000003);
  const FewShotSplit split =
      make_fewshot_split(world, cfg.bench_shots, cfg.bench_noise_fewshot, fewshot_rng);
  save_reference_manifest(split.refs, out / "refs.json");

  ordered_json videos = ordered_json::array();
  for (int i = 0; i < cfg.bench_videos; ++i) {
    Rng rng(cfg.seed + 2000003 + static_cast<std::uint64_t>(i));
    const VideoSample video =
        sample_video(world, graph, cfg.bench_max_len, cfg.bench_noise_video,
                     cfg.bench_drift, rng);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "video_%03d", i);
    save_embedding_matrix(video.embeddings, out / (std::string(stem) + ".json"),
                          out / (std::string(stem) + ".bin"));
    save_labels(video.labels, out / (std::string(stem) + ".labels"));
    videos.push_back(ordered_json{{"header", std::string(stem) + ".json"},
                                  {"labels", std::string(stem) + ".labels"},
                                  {"frames", static_cast<int>(video.labels.size())}});
  }

  write_json(ordered_json{{"k", cfg.bench_k},
                          {"d", cfg.bench_d},
                          {"graph", "graph.json"},
                          {"text", "text.json"},
                          {"refs", "refs.json"},
                          {"videos", videos},
                          {"config", config_to_json(cfg)}},
             out / "bench.json");
  std::cout << ordered_json{{"ok", true}, {"out", out_dir}}.dump() << "\n";
  return 0;
}

int cmd_graph_validate(const std::string& graph_path) {
  const TaskGraph g = load_task_graph(graph_path);
  ordered_json phases = ordered_json::array();
  for (const PhaseNode& p : g.phases)
    phases.push_back(ordered_json{{"id", p.id},
                                  {"name", p.name},
                                  {"min_duration", p.min_duration},
                                  {"max_duration", p.max_duration},
                                  {"start", p.start},
                                  {"terminal", p.terminal}});
  std::vector<int> starts;
  for (int s : g.start_phases()) starts.push_back(s);
  std::cout << ordered_json{{"valid", true},
                            {"k", g.k()},
                            {"edges", static_cast<int>(g.edges.size())},
                            {"start_phases", starts},
                            {"time_unit", g.time_unit},
                            {"phases", phases}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_train_fewshot(const ConfigArgs& cargs, const std::string& refs_path,
                      const std::string& text_path, const std::string& out_dir) {
  const RunConfig cfg = cargs.resolve();
  const ReferenceSet refs =
      load_reference_manifest(refs_path, cfg.normalize_embeddings);
  const Matrix text = load_matrix_pair(text_path, cfg.normalize_embeddings);

  const FewShotTrainResult result = train_classifier_stage(refs, text, cfg);
  save_classifier(result.clf, out_dir);
  write_json(ordered_json{{"steps", static_cast<int>(result.loss_trace.size())},
                          {"final_loss", result.loss_trace.empty()
                                             ? 0.0
                                             : result.loss_trace.back()},
                          {"loss_trace", result.loss_trace},
                          {"config", config_to_json(cfg)}},
             fs::path(out_dir) / "train_report.json");
  std::cout << ordered_json{{"ok", true}, {"out", out_dir}}.dump() << "\n";
  return 0;
}

int cmd_train_diffusion(const ConfigArgs& cargs, const std::string& graph_path,
                        const std::string& out_dir) {
  const RunConfig cfg = cargs.resolve();
  const TaskGraph graph = load_task_graph(graph_path);
  const DiffusionTrainResult result = train_diffusion_stage(graph, cfg);
  save_diffusion_model(result.model, out_dir);
  write_json(
      ordered_json{{"epochs", static_cast<int>(result.loss_trace.size()) - 1},
                   {"loss_trace", result.loss_trace},
                   {"config", config_to_json(cfg)}},
      fs::path(out_dir) / "train_report.json");
  std::cout << ordered_json{{"ok", true}, {"out", out_dir}}.dump() << "\n";
  return 0;
}

int cmd_infer(const ConfigArgs& cargs, const std::string& video_path,
              const std::string& refs_path, const std::string& text_path,
              const std::string& clf_dir, const std::string& diffusion_dir,
              const std::string& out_path, bool no_tta, bool no_diffusion,
              bool debug, int noise_step, CLI::App* cmd) {
  RunConfig cfg = cargs.resolve();
  if (cmd->count("--seed"))
    cfg.seed = cmd->get_option("--seed")->as<std::uint64_t>();
  if (noise_step >= 0) cfg.noise_step = noise_step;

  const Matrix video = load_matrix_pair(video_path, cfg.normalize_embeddings);
  const ReferenceSet refs =
      load_reference_manifest(refs_path, cfg.normalize_embeddings);
  const Matrix text = load_matrix_pair(text_path, cfg.normalize_embeddings);
  const FewShotClassifier clf = load_classifier(clf_dir);

  InferOptions opt;
  opt.tta = !no_tta;
  opt.diffusion = !no_diffusion;
  opt.debug = debug;

  DiffusionModel model;
  const DiffusionModel* model_ptr = nullptr;
  if (opt.diffusion) {
    if (diffusion_dir.empty())
      fail(ErrorCode::parse_error, "--diffusion is required unless --no-diffusion");
    model = load_diffusion_model(diffusion_dir);
    model_ptr = &model;
  }

  const InferResult result = run_infer(video, refs, text, clf, model_ptr, cfg, opt);
  write_json(infer_result_to_json(result, opt, cfg), out_path);
  std::cout << ordered_json{{"ok", true},
                            {"out", out_path},
                            {"t_star", result.t_star},
                            {"frames", static_cast<int>(result.labels.size())}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, int k,
             const std::string& out_path) {
  const ordered_json pred_doc = read_json(pred_path);
  if (!pred_doc.contains("labels"))
    fail(ErrorCode::parse_error, pred_path + ": missing 'labels'");
  const auto pred = pred_doc.at("labels").get<std::vector<int>>();
  if (k <= 0) {
    if (!pred_doc.contains("fused") || pred_doc.at("fused").empty())
      fail(ErrorCode::parse_error,
           pred_path + ": cannot infer k, pass --k explicitly");
    k = static_cast<int>(pred_doc.at("fused").at(0).size());
  }
  const std::vector<int> gt = load_labels(gt_path, k);
  const Metrics m = evaluate(pred, gt, k);
  write_json(metrics_to_json(m), out_path);
  std::cout << metrics_to_json(m).dump() << "\n";
  return 0;
}

int cmd_report(const ConfigArgs& cargs, const std::vector<std::string>& inputs,
               const std::string& out_path) {
  const RunConfig cfg = cargs.resolve();
  std::vector<Metrics> per_video;
  per_video.reserve(inputs.size());
  for (const std::string& path : inputs)
    per_video.push_back(metrics_from_json(read_json(path)));
  const ordered_json report = make_report(per_video, config_to_json(cfg));
  write_json(report, out_path);
  std::cout << report_table(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot phase recognition over frozen embeddings"};
  app.require_subcommand(1);

  ConfigArgs bench_cfg;
  std::string bench_graph, bench_out;
  CLI::App* bench = app.add_subcommand("synth-bench", "Generate a synthetic benchmark");
  bench_cfg.attach(bench);
  bench->add_option("--graph", bench_graph, "Task graph JSON")->required();
  bench->add_option("--out", bench_out, "Output directory")->required();
  bench->add_option("--k", "Phase count");
  bench->add_option("--d", "Embedding dimension");
  bench->add_option("--videos", "Number of test videos");
  bench->add_option("--shots", "References per phase");
  bench->add_option("--drift", "Per-video drift magnitude");
  bench->add_option("--seed", "Random seed");
  bench->add_option("--min-separation", "Prototype cosine ceiling");
  bench->add_option("--modality-gap", "Vision/text prototype angle");
  bench->add_option("--noise-fewshot", "Reference noise sigma");
  bench->add_option("--noise-video", "Test video noise sigma");
  bench->add_option("--max-len", "Maximum video length");

  std::string gv_graph;
  CLI::App* graph = app.add_subcommand("graph", "Task graph utilities");
  graph->require_subcommand(1);
  CLI::App* graph_validate = graph->add_subcommand("validate", "Validate a task graph");
  graph_validate->add_option("--graph", gv_graph, "Task graph JSON")->required();

  ConfigArgs fs_cfg;
  std::string fs_refs, fs_text, fs_out;
  CLI::App* fewshot = app.add_subcommand("train-fewshot", "Train the few-shot classifier");
  fs_cfg.attach(fewshot);
  fewshot->add_option("--refs", fs_refs, "Reference manifest")->required();
  fewshot->add_option("--text", fs_text, "Text embedding header")->required();
  fewshot->add_option("--out", fs_out, "Checkpoint directory")->required();

  ConfigArgs diff_cfg;
  std::string diff_graph, diff_out;
  CLI::App* diffusion = app.add_subcommand("train-diffusion", "Train the sequence denoiser");
  diff_cfg.attach(diffusion);
  diffusion->add_option("--graph", diff_graph, "Task graph JSON")->required();
  diffusion->add_option("--out", diff_out, "Checkpoint directory")->required();

  ConfigArgs infer_cfg;
  std::string in_video, in_refs, in_text, in_clf, in_diffusion, in_out;
  bool no_tta = false, no_diffusion = false, debug = false;
  int noise_step = -1;
  CLI::App* infer = app.add_subcommand("infer", "Run the full pipeline on one video");
  infer_cfg.attach(infer);
  infer->add_option("--video", in_video, "Video embedding header")->required();
  infer->add_option("--refs", in_refs, "Reference manifest")->required();
  infer->add_option("--text", in_text, "Text embedding header")->required();
  infer->add_option("--clf", in_clf, "Classifier checkpoint directory")->required();
  infer->add_option("--diffusion", in_diffusion, "Diffusion checkpoint directory");
  infer->add_option("--out", in_out, "Prediction JSON path")->required();
  infer->add_option("--seed", "Random seed");
  infer->add_option("--noise-step", noise_step, "Force the refinement start step");
  infer->add_flag("--no-tta", no_tta, "Skip test-time adaptation");
  infer->add_flag("--no-diffusion", no_diffusion, "Skip diffusion refinement");
  infer->add_flag("--debug", debug, "Persist intermediate streams");

  std::string eval_pred, eval_gt, eval_out;
  int eval_k = 0;
  CLI::App* eval = app.add_subcommand("eval", "Score a prediction against ground truth");
  eval->add_option("--pred", eval_pred, "Prediction JSON from infer")->required();
  eval->add_option("--gt", eval_gt, "Ground-truth label file")->required();
  eval->add_option("--k", eval_k, "Phase count (default: from prediction)");
  eval->add_option("--out", eval_out, "Metrics JSON path")->required();

  ConfigArgs report_cfg;
  std::vector<std::string> report_inputs;
  std::string report_out;
  CLI::App* report = app.add_subcommand("report", "Aggregate per-video metrics");
  report_cfg.attach(report);
  report->add_option("inputs", report_inputs, "Metrics JSON files")->required();
  report->add_option("--out", report_out, "Report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (bench->parsed()) return cmd_synth_bench(bench_cfg, bench_graph, bench_out, bench);
    if (graph->parsed() && graph_validate->parsed()) return cmd_graph_validate(gv_graph);
    if (fewshot->parsed()) return cmd_train_fewshot(fs_cfg, fs_refs, fs_text, fs_out);
    if (diffusion->parsed()) return cmd_train_diffusion(diff_cfg, diff_graph, diff_out);
    if (infer->parsed())
      return cmd_infer(infer_cfg, in_video, in_refs, in_text, in_clf, in_diffusion,
                       in_out, no_tta, no_diffusion, debug, noise_step, infer);
    if (eval->parsed()) return cmd_eval(eval_pred, eval_gt, eval_k, eval_out);
    if (report->parsed()) return cmd_report(report_cfg, report_inputs, report_out);
  } catch (const Error& e) {
    std::cerr << ordered_json{{"error", e.what()},
                              {"code", error_code_name(e.code())}}
                     .dump()
              << "\n";
    return e.validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << ordered_json{{"error", e.what()}}.dump() << "\n";
    return 2;
  }
  return 0;
}
