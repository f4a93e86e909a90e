#pragma once

#include <array>
#include <vector>

#include "spa/classifier.hpp"
#include "spa/io.hpp"
#include "spa/linalg.hpp"

namespace spa {

/// Per-video linear adapters on the vision and text sides, plus the softmax
/// temperatures of the two adapted streams. Fresh pairs are identity maps.
struct AdapterPair {
  Matrix f_v;
  Matrix f_t;
  double tau = 0.07;
  double tau_ref = 0.07;
};

struct StreamBundle {
  Matrix s_ref;
  Matrix s_vl;
  Matrix s_fs;
};

AdapterPair init_adapters(int d, double tau = 0.07, double tau_ref = 0.07);

/// S_ref: frame-to-reference softmax similarity aggregated through the
/// reference-to-phase assignment.
Matrix stream_reference(const Matrix& v, const ReferenceSet& refs,
                        const AdapterPair& a);

/// S_vl: frame-to-phase-description softmax similarity.
Matrix stream_vision_language(const Matrix& v, const Matrix& text,
                              const AdapterPair& a);

/// S_fs: frozen few-shot classifier on the raw embeddings.
Matrix stream_fewshot(const FewShotClassifier& clf, const Matrix& v);

/// Cross entropy of b under a, averaged over frames; b is clamped at 1e-12
/// inside the log.
double mutual_loss(const Matrix& a, const Matrix& b);

struct TtaGrads {
  double loss = 0.0;
  Matrix grad_v;
  Matrix grad_t;
};

/// Loss L = mutual(S_ref, S_vl) + mutual(S_fs, S_ref) and its gradients with
/// respect to both adapter matrices; s_fs is treated as a constant target.
TtaGrads tta_loss_and_grads(const Matrix& v, const ReferenceSet& refs,
                            const Matrix& text, const Matrix& s_fs,
                            const AdapterPair& a);

struct TtaConfig {
  int epochs = 15;
  double lr = 1e-4;
  double momentum = 0.0;
  double tau = 0.07;
  double tau_ref = 0.07;
};

struct TtaResult {
  AdapterPair adapters;
  std::vector<double> loss_trace;  // initial loss, then one entry per epoch
};

TtaResult tta_adapt(const Matrix& v, const ReferenceSet& refs,
                    const Matrix& text, const FewShotClassifier& clf,
                    const TtaConfig& cfg);

/// Weighted arithmetic mean of the three streams; weights are non-negative
/// and sum to 1.
Matrix fuse_streams(const StreamBundle& s,
                    const std::array<double, 3>& weights = {1.0 / 3, 1.0 / 3,
                                                            1.0 / 3});

}  // namespace spa
