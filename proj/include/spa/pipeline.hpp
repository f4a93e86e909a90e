#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "spa/classifier.hpp"
#include "spa/config.hpp"
#include "spa/diffusion.hpp"
#include "spa/io.hpp"
#include "spa/task_graph.hpp"
#include "spa/tta.hpp"

namespace spa {

TransitionModel parse_transition_model(const std::string& name);

/// Trains the classifier on the labeled reference set.
FewShotTrainResult train_classifier_stage(const ReferenceSet& refs,
                                          const Matrix& text,
                                          const RunConfig& cfg);

/// Synthesizes a label dataset from the graph and fits the denoiser.
DiffusionTrainResult train_diffusion_stage(const TaskGraph& g,
                                           const RunConfig& cfg);

struct AdaptPaths {
  std::filesystem::path refs_manifest;
  std::filesystem::path text_header;
  std::filesystem::path graph;
  std::filesystem::path out_dir;
};

/// Runs both training stages and writes classifier/, diffusion/ and
/// train_report.json under out_dir.
void run_adapt(const AdaptPaths& paths, const RunConfig& cfg);

struct InferOptions {
  bool tta = true;
  bool diffusion = true;
  bool debug = false;
};

struct InferResult {
  AdapterPair adapters;
  std::vector<double> tta_loss_trace;
  StreamBundle streams;
  Matrix fused;
  int t_star = 0;
  Matrix refined;
  std::vector<int> labels;
};

/// Left-to-right composition: adapt (optional) -> three streams -> fuse ->
/// noise-step estimate -> refine (optional) -> decode. Disabled stages pass
/// their input through untouched.
InferResult run_infer(const Matrix& video, const ReferenceSet& refs,
                      const Matrix& text, const FewShotClassifier& clf,
                      const DiffusionModel* diffusion, const RunConfig& cfg,
                      const InferOptions& opt = {});

nlohmann::ordered_json infer_result_to_json(const InferResult& r,
                                            const InferOptions& opt,
                                            const RunConfig& cfg);

}  // namespace spa
