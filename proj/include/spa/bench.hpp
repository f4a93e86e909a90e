#pragma once

#include <cstdint>
#include <vector>

#include "spa/io.hpp"
#include "spa/linalg.hpp"
#include "spa/rng.hpp"
#include "spa/task_graph.hpp"

namespace spa {

/// Stand-in for frozen encoder outputs: one unit-norm vision prototype per
/// phase, plus text prototypes rotated away from them by a fixed angle.
struct SyntheticWorld {
  int k = 0;
  int d = 0;
  Matrix vision_prototypes;  // K x D, unit rows
  Matrix text_prototypes;    // K x D, unit rows
  double modality_gap = 0.0;
  std::uint64_t seed = 0;
};

/// Rejection-samples prototypes until every pair has cosine similarity at
/// most min_separation.
SyntheticWorld make_synthetic_world(int k, int d, std::uint64_t seed,
                                    double min_separation,
                                    double modality_gap);

struct VideoSample {
  Matrix embeddings;  // L x D, unit rows
  std::vector<int> labels;
};

/// Labels come from the task graph; each frame is its phase prototype plus
/// isotropic noise plus a per-video constant drift vector, renormalized.
VideoSample sample_video(const SyntheticWorld& world, const TaskGraph& g,
                         int max_len, double noise_sigma, double drift,
                         Rng& rng);

struct FewShotSplit {
  ReferenceSet refs;
  std::vector<int> labels;
};

/// Balanced split: `shots` noisy samples of every phase prototype.
FewShotSplit make_fewshot_split(const SyntheticWorld& world, int shots,
                                double noise_sigma, Rng& rng);

}  // namespace spa
