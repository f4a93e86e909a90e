#include "spa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "spa/error.hpp"

namespace spa {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<int> segment_phases(const std::vector<int>& labels) {
  std::vector<int> phases;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (i == 0 || labels[i] != labels[i - 1]) phases.push_back(labels[i]);
  return phases;
}

namespace {

int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = b.size();
  std::vector<int> row(n + 1);
  for (std::size_t j = 0; j <= n; ++j) row[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= n; ++j) {
      const int sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      diag = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, sub});
    }
  }
  return row[n];
}

}  // namespace

Metrics evaluate(const std::vector<int>& pred, const std::vector<int>& gt,
                 int k) {
  if (pred.size() != gt.size())
    fail(ErrorCode::length_mismatch,
         "prediction has " + std::to_string(pred.size()) + " frames, ground truth has " +
             std::to_string(gt.size()));
  if (pred.empty()) fail(ErrorCode::empty_dataset, "empty sequences");

  Matrix confusion = Matrix::Zero(k, k);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i] < 0 || gt[i] >= k || pred[i] < 0 || pred[i] >= k)
      fail(ErrorCode::out_of_range_label, "label outside [0, k)");
    confusion(gt[i], pred[i]) += 1.0;
  }

  Metrics m;
  m.per_phase_f1 = Vector::Zero(k);
  double f1_sum = 0.0;
  int present = 0;
  for (int phase = 0; phase < k; ++phase) {
    const double tp = confusion(phase, phase);
    const double gt_total = confusion.row(phase).sum();
    const double pred_total = confusion.col(phase).sum();
    const double precision = pred_total > 0.0 ? tp / pred_total : 0.0;
    const double recall = gt_total > 0.0 ? tp / gt_total : 0.0;
    if (precision + recall > 0.0)
      m.per_phase_f1(phase) = 2.0 * precision * recall / (precision + recall);
    if (gt_total > 0.0) {
      f1_sum += m.per_phase_f1(phase);
      ++present;
    }
  }
  m.macro_f1 = present > 0 ? f1_sum / present : 0.0;
  m.accuracy = confusion.trace() / static_cast<double>(pred.size());
  const std::vector<int> pred_segments = segment_phases(pred);
  m.segment_count = static_cast<int>(pred_segments.size());
  m.edit_distance_segments = levenshtein(pred_segments, segment_phases(gt));
  return m;
}

ordered_json metrics_to_json(const Metrics& m) {
  std::vector<double> f1(m.per_phase_f1.data(),
                         m.per_phase_f1.data() + m.per_phase_f1.size());
  return ordered_json{{"per_phase_f1", f1},
                      {"macro_f1", m.macro_f1},
                      {"accuracy", m.accuracy},
                      {"segment_count", m.segment_count},
                      {"edit_distance_segments", m.edit_distance_segments}};
}

Metrics metrics_from_json(const json& j) {
  Metrics m;
  try {
    const auto f1 = j.at("per_phase_f1").get<std::vector<double>>();
    m.per_phase_f1 =
        Eigen::Map<const Vector>(f1.data(), static_cast<Eigen::Index>(f1.size()));
    m.macro_f1 = j.at("macro_f1").get<double>();
    m.accuracy = j.at("accuracy").get<double>();
    m.segment_count = j.at("segment_count").get<int>();
    m.edit_distance_segments = j.at("edit_distance_segments").get<int>();
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, std::string("metrics: ") + e.what());
  }
  return m;
}

namespace {

ordered_json mean_std(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return ordered_json{{"mean", mean}, {"std", std::sqrt(var)}};
}

}  // namespace

ordered_json make_report(const std::vector<Metrics>& per_video,
                         const ordered_json& config) {
  if (per_video.empty()) fail(ErrorCode::empty_dataset, "no metrics to aggregate");

  std::vector<double> macro_f1, accuracy, segments, edit;
  ordered_json videos = ordered_json::array();
  for (const Metrics& m : per_video) {
    macro_f1.push_back(m.macro_f1);
    accuracy.push_back(m.accuracy);
    segments.push_back(static_cast<double>(m.segment_count));
    edit.push_back(static_cast<double>(m.edit_distance_segments));
    videos.push_back(metrics_to_json(m));
  }

  return ordered_json{
      {"protocol",
       "frame-wise per-phase F1 from the confusion matrix, macro-averaged over "
       "phases present in each video's ground truth, then mean and population "
       "std across videos"},
      {"videos", static_cast<int>(per_video.size())},
      {"macro_f1", mean_std(macro_f1)},
      {"accuracy", mean_std(accuracy)},
      {"segment_count", mean_std(segments)},
      {"edit_distance_segments", mean_std(edit)},
      {"per_video", videos},
      {"config", config}};
}

std::string report_table(const ordered_json& report) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-24s %12s %12s\n", "metric", "mean", "std");
  out += line;
  for (const char* key :
       {"macro_f1", "accuracy", "segment_count", "edit_distance_segments"}) {
    const auto& entry = report.at(key);
    std::snprintf(line, sizeof(line), "%-24s %12.4f %12.4f\n", key,
                  entry.at("mean").get<double>(), entry.at("std").get<double>());
    out += line;
  }
  return out;
}

}  // namespace spa
