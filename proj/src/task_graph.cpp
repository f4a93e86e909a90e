#include "spa/task_graph.hpp"

#include <algorithm>
#include <climits>
#include <deque>
#include <fstream>
#include <set>

#include <json.hpp>

#include "spa/error.hpp"

namespace spa {

using nlohmann::json;

std::vector<int> TaskGraph::start_phases() const {
  std::vector<int> out;
  for (const auto& p : phases)
    if (p.start) out.push_back(p.id);
  return out;
}

PhaseSequence sequence_from_labels(std::vector<int> labels) {
  PhaseSequence s;
  s.labels = std::move(labels);
  int pos = 0;
  while (pos < static_cast<int>(s.labels.size())) {
    int end = pos;
    while (end < static_cast<int>(s.labels.size()) && s.labels[end] == s.labels[pos]) ++end;
    s.segments.push_back({s.labels[pos], pos, end - pos});
    pos = end;
  }
  return s;
}

TaskGraph parse_task_graph(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse_error, std::string("task graph: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("phases") || !doc.contains("edges"))
    fail(ErrorCode::parse_error, "task graph: expected object with phases/edges");

  TaskGraph g;
  g.time_unit = doc.value("time_unit", "frames");
  const int k = static_cast<int>(doc["phases"].size());
  if (k == 0) fail(ErrorCode::parse_error, "task graph: no phases");
  g.phases.resize(k);
  std::vector<bool> seen(k, false);
  for (const auto& pj : doc["phases"]) {
    PhaseNode node;
    node.id = pj.at("id").get<int>();
    if (node.id < 0 || node.id >= k)
      fail(ErrorCode::parse_error,
           "phase id " + std::to_string(node.id) + " outside [0, " + std::to_string(k) + ")");
    if (seen[node.id])
      fail(ErrorCode::parse_error, "duplicate phase id " + std::to_string(node.id));
    seen[node.id] = true;
    node.name = pj.value("name", "phase_" + std::to_string(node.id));
    node.min_duration = pj.at("min_duration").get<int>();
    node.max_duration = pj.at("max_duration").get<int>();
    node.start = pj.value("start", false);
    node.terminal = pj.value("terminal", false);
    if (node.min_duration < 1 || node.min_duration > node.max_duration)
      fail(ErrorCode::duration_order_violation,
           "phase " + node.name + ": need 1 <= min_duration <= max_duration, got [" +
               std::to_string(node.min_duration) + ", " +
               std::to_string(node.max_duration) + "]");
    g.phases[node.id] = node;
  }

  std::set<std::pair<int, int>> edge_set;
  for (const auto& ej : doc["edges"]) {
    if (!ej.is_array() || ej.size() != 2)
      fail(ErrorCode::parse_error, "edges must be [from, to] pairs");
    const int from = ej[0].get<int>();
    const int to = ej[1].get<int>();
    if (from < 0 || from >= k || to < 0 || to >= k)
      fail(ErrorCode::unknown_node_in_edge,
           "edge [" + std::to_string(from) + ", " + std::to_string(to) +
               "] references a phase outside [0, " + std::to_string(k) + ")");
    edge_set.insert({from, to});
  }
  g.edges.assign(edge_set.begin(), edge_set.end());

  // Self-loops stay in `edges` but never count as successors: under the
  // segment model a self-transition is just a longer duration.
  g.successors.resize(k);
  for (const auto& [from, to] : g.edges)
    if (from != to) g.successors[from].push_back(to);
  for (auto& succ : g.successors) std::sort(succ.begin(), succ.end());

  if (g.start_phases().empty())
    fail(ErrorCode::no_start_phase, "no phase is flagged start");
  for (const auto& p : g.phases)
    if (!p.terminal && g.successors[p.id].empty())
      fail(ErrorCode::dead_end_phase,
           "phase " + p.name + " is non-terminal and has no outgoing edge");

  for (int start : g.start_phases()) {
    std::vector<bool> visited(k, false);
    std::deque<int> queue{start};
    visited[start] = true;
    bool terminal_reachable = false;
    while (!queue.empty()) {
      const int cur = queue.front();
      queue.pop_front();
      if (g.phases[cur].terminal) {
        terminal_reachable = true;
        break;
      }
      for (int next : g.successors[cur])
        if (!visited[next]) {
          visited[next] = true;
          queue.push_back(next);
        }
    }
    if (!terminal_reachable)
      fail(ErrorCode::unreachable_terminal,
           "no terminal phase reachable from start phase " + g.phases[start].name);
  }
  return g;
}

TaskGraph load_task_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_task_graph(text);
}

void save_task_graph(const TaskGraph& g, const std::filesystem::path& path) {
  json phases = json::array();
  for (const auto& p : g.phases)
    phases.push_back({{"id", p.id},
                      {"name", p.name},
                      {"min_duration", p.min_duration},
                      {"max_duration", p.max_duration},
                      {"start", p.start},
                      {"terminal", p.terminal}});
  json edges = json::array();
  for (const auto& [from, to] : g.edges) edges.push_back(json::array({from, to}));
  json doc = {{"phases", phases}, {"edges", edges}, {"time_unit", g.time_unit}};
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

namespace {

int min_start_duration(const TaskGraph& g) {
  int lo = INT_MAX;
  for (int s : g.start_phases()) lo = std::min(lo, g.phases[s].min_duration);
  return lo;
}

PhaseSequence synthesize_segment_model(const TaskGraph& g, Rng& rng, int max_len) {
  std::vector<int> labels;
  const std::vector<int> starts = g.start_phases();
  int current = starts[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<long>(starts.size()) - 1))];
  while (static_cast<int>(labels.size()) < max_len) {
    const PhaseNode& node = g.phases[current];
    const int duration =
        static_cast<int>(rng.uniform_int(node.min_duration, node.max_duration));
    for (int i = 0; i < duration && static_cast<int>(labels.size()) < max_len; ++i)
      labels.push_back(current);
    if (node.terminal) break;
    const auto& succ = g.successors[current];
    current = succ[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<long>(succ.size()) - 1))];
  }
  return sequence_from_labels(std::move(labels));
}

PhaseSequence synthesize_per_step_model(const TaskGraph& g, Rng& rng, int max_len) {
  std::vector<int> labels;
  const std::vector<int> starts = g.start_phases();
  int current = starts[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<long>(starts.size()) - 1))];
  int elapsed = 0;
  while (static_cast<int>(labels.size()) < max_len) {
    labels.push_back(current);
    ++elapsed;
    const PhaseNode& node = g.phases[current];
    const auto& succ = g.successors[current];
    if (elapsed < node.min_duration) continue;
    if (elapsed >= node.max_duration) {
      if (node.terminal) break;
      current = succ[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long>(succ.size()) - 1))];
      elapsed = 0;
      continue;
    }
    // Between the bounds: uniform over {stay} union successors.
    const long pick = rng.uniform_int(0, static_cast<long>(succ.size()));
    if (pick > 0) {
      current = succ[static_cast<std::size_t>(pick - 1)];
      elapsed = 0;
    } else if (node.terminal && succ.empty()) {
      // Terminal with no successors: staying is the only option; duration
      // still ends by the max_duration branch above.
    }
  }
  return sequence_from_labels(std::move(labels));
}

}  // namespace

PhaseSequence synthesize_sequence(const TaskGraph& g, Rng& rng, int max_len,
                                  TransitionModel model) {
  if (max_len < min_start_duration(g))
    fail(ErrorCode::max_len_too_small,
         "max_len " + std::to_string(max_len) +
             " cannot fit a minimal start segment (need >= " +
             std::to_string(min_start_duration(g)) + ")");
  return model == TransitionModel::segment
             ? synthesize_segment_model(g, rng, max_len)
             : synthesize_per_step_model(g, rng, max_len);
}

std::vector<PhaseSequence> synthesize_dataset(const TaskGraph& g, int n,
                                              std::uint64_t seed, int max_len,
                                              TransitionModel model) {
  std::vector<PhaseSequence> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(seed + static_cast<std::uint64_t>(i));
    out.push_back(synthesize_sequence(g, rng, max_len, model));
  }
  return out;
}

ValidityReport is_valid_sequence(const TaskGraph& g, const PhaseSequence& s,
                                 bool allow_truncated_tail) {
  ValidityReport report;
  auto flag = [&report](std::string msg) {
    report.valid = false;
    report.violations.push_back(std::move(msg));
  };

  for (int label : s.labels)
    if (label < 0 || label >= g.k()) {
      flag("label " + std::to_string(label) + " outside [0, " +
           std::to_string(g.k()) + ")");
      return report;
    }
  if (s.segments.empty()) {
    flag("empty sequence");
    return report;
  }

  if (!g.phases[s.segments.front().phase].start)
    flag("phase " + g.phases[s.segments.front().phase].name + " is not a start phase");

  std::set<std::pair<int, int>> edge_set(g.edges.begin(), g.edges.end());
  for (std::size_t i = 0; i + 1 < s.segments.size(); ++i) {
    const int from = s.segments[i].phase;
    const int to = s.segments[i + 1].phase;
    if (!edge_set.count({from, to}))
      flag(g.phases[from].name + "->" + g.phases[to].name + " not an edge");
  }

  for (std::size_t i = 0; i < s.segments.size(); ++i) {
    const bool tail = i + 1 == s.segments.size();
    if (tail && allow_truncated_tail) continue;
    const Segment& seg = s.segments[i];
    const PhaseNode& node = g.phases[seg.phase];
    if (seg.length < node.min_duration)
      flag("phase " + node.name + " duration " + std::to_string(seg.length) +
           " < " + std::to_string(node.min_duration));
    if (seg.length > node.max_duration)
      flag("phase " + node.name + " duration " + std::to_string(seg.length) +
           " > " + std::to_string(node.max_duration));
  }
  return report;
}

}  // namespace spa
