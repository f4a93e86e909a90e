#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "spa/linalg.hpp"

namespace spa {

/// Text-driven linear classifier over frozen embeddings. The logit for
/// frame f and phase k is f . (w_k + alpha_k * t_k); only w and alpha train,
/// t stays fixed.
struct FewShotClassifier {
  Matrix prototypes;       // K x D, trainable
  Vector multipliers;      // K, trainable
  Matrix text_embeddings;  // K x D, frozen, unit-norm rows

  int k() const { return static_cast<int>(text_embeddings.rows()); }
  int dim() const { return static_cast<int>(text_embeddings.cols()); }

  /// Blended per-phase weight matrix w_k + alpha_k * t_k.
  Matrix blended() const {
    return prototypes + multipliers.asDiagonal() * text_embeddings;
  }
};

/// w = 0 and alpha = 1, so the untrained classifier reproduces the
/// zero-shot text classifier exactly.
FewShotClassifier init_classifier(const Matrix& text_embeddings,
                                  std::uint64_t seed = 0);

Matrix predict_proba(const FewShotClassifier& clf, const Matrix& f);

struct CeGrads {
  double loss = 0.0;
  Matrix grad_w;      // K x D
  Vector grad_alpha;  // K
};

CeGrads ce_loss_and_grads(const FewShotClassifier& clf, const Matrix& f,
                          const std::vector<int>& y);

struct TrainConfig {
  int steps = 500;
  double lr = 0.01;
  double early_stop_eps = 1e-7;
  int early_stop_window = 20;
};

struct FewShotTrainResult {
  FewShotClassifier clf;
  std::vector<double> loss_trace;  // loss before each applied step
};

FewShotTrainResult train_fewshot(FewShotClassifier clf, const Matrix& f,
                                 const std::vector<int>& y,
                                 const TrainConfig& cfg);

/// Checkpoint layout: <dir>/classifier.json holds k, d and alpha;
/// w and t are embedding-store pairs next to it.
void save_classifier(const FewShotClassifier& clf,
                     const std::filesystem::path& dir);
FewShotClassifier load_classifier(const std::filesystem::path& dir);

}  // namespace spa
