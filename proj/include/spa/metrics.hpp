#pragma once

#include <vector>

#include <json.hpp>

#include "spa/linalg.hpp"

namespace spa {

struct Metrics {
  Vector per_phase_f1;            // K, 0 where undefined
  double macro_f1 = 0.0;          // mean over phases present in gt
  double accuracy = 0.0;
  int segment_count = 0;          // maximal constant runs in pred
  int edit_distance_segments = 0; // Levenshtein over segment phase sequences
};

/// Frame-wise confusion-matrix metrics. F1 terms with zero denominators
/// count as 0; macro F1 averages only phases that occur in gt.
Metrics evaluate(const std::vector<int>& pred, const std::vector<int>& gt,
                 int k);

/// Phase sequence after collapsing consecutive repeats.
std::vector<int> segment_phases(const std::vector<int>& labels);

nlohmann::ordered_json metrics_to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

/// Aggregates per-video metrics into mean and population standard deviation,
/// embedding the config snapshot and the averaging protocol note.
nlohmann::ordered_json make_report(const std::vector<Metrics>& per_video,
                                   const nlohmann::ordered_json& config);

/// Fixed-width text table of the same aggregates.
std::string report_table(const nlohmann::ordered_json& report);

}  // namespace spa
