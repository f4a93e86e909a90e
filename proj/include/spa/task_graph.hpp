#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "spa/rng.hpp"

namespace spa {

struct PhaseNode {
  int id = 0;
  std::string name;
  int min_duration = 1;
  int max_duration = 1;
  bool start = false;
  bool terminal = false;
};

/// Directed graph of permissible phase transitions with per-phase duration
/// bounds. Immutable after parse_task_graph validates it.
struct TaskGraph {
  std::vector<PhaseNode> phases;                 // indexed by phase id
  std::vector<std::pair<int, int>> edges;
  std::vector<std::vector<int>> successors;      // excludes self-loops
  std::string time_unit = "frames";

  int k() const { return static_cast<int>(phases.size()); }
  std::vector<int> start_phases() const;
};

struct Segment {
  int phase = 0;
  int start = 0;
  int length = 0;
};

struct PhaseSequence {
  std::vector<int> labels;
  std::vector<Segment> segments;  // run-length view of labels

  int length() const { return static_cast<int>(labels.size()); }
};

/// Rebuilds the run-length segment view from raw labels.
PhaseSequence sequence_from_labels(std::vector<int> labels);

TaskGraph parse_task_graph(const std::string& text);
TaskGraph load_task_graph(const std::filesystem::path& path);
void save_task_graph(const TaskGraph& g, const std::filesystem::path& path);

enum class TransitionModel {
  /// On entering a phase, draw its duration uniformly from
  /// [min_duration, max_duration], then hop to a uniform successor.
  segment,
  /// Frame-by-frame Markov walk: forced stay below min_duration, forced
  /// leave at max_duration, uniform over {stay, successors} in between.
  per_step,
};

PhaseSequence synthesize_sequence(const TaskGraph& g, Rng& rng, int max_len,
                                  TransitionModel model = TransitionModel::segment);

/// n independent draws; sequence i uses seed + i so sharded generation is
/// reproducible regardless of worker layout.
std::vector<PhaseSequence> synthesize_dataset(
    const TaskGraph& g, int n, std::uint64_t seed, int max_len,
    TransitionModel model = TransitionModel::segment);

struct ValidityReport {
  bool valid = true;
  std::vector<std::string> violations;
};

ValidityReport is_valid_sequence(const TaskGraph& g, const PhaseSequence& s,
                                 bool allow_truncated_tail);

}  // namespace spa
