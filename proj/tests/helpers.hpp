#pragma once

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "spa/error.hpp"

namespace spa::test {

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("spa_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

template <typename Fn>
void expect_error(ErrorCode code, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    CHECK(error_code_name(e.code()) == std::string(error_code_name(code)));
    return;
  }
  FAIL_CHECK("expected " << error_code_name(code) << ", nothing was thrown");
}

/// Seven-phase workflow with two branch points (0 -> {1,2} and 4 -> {5,6})
/// plus a skip edge 5 -> 6.
inline std::string branching_graph_json() {
  return R"({
  "time_unit": "frames",
  "phases": [
    {"id": 0, "name": "prepare",  "min_duration": 8,  "max_duration": 20, "start": true},
    {"id": 1, "name": "dissect_a", "min_duration": 10, "max_duration": 30},
    {"id": 2, "name": "dissect_b", "min_duration": 10, "max_duration": 30},
    {"id": 3, "name": "clip",     "min_duration": 5,  "max_duration": 15},
    {"id": 4, "name": "resect",   "min_duration": 10, "max_duration": 25},
    {"id": 5, "name": "irrigate", "min_duration": 3,  "max_duration": 12},
    {"id": 6, "name": "close",    "min_duration": 5,  "max_duration": 15, "terminal": true}
  ],
  "edges": [[0,1],[0,2],[1,3],[2,3],[3,4],[4,5],[4,6],[5,6]]
})";
}

/// Strict five-phase chain, every phase 10..20 frames.
inline std::string chain_graph_json() {
  return R"({
  "time_unit": "frames",
  "phases": [
    {"id": 0, "name": "p0", "min_duration": 10, "max_duration": 20, "start": true},
    {"id": 1, "name": "p1", "min_duration": 10, "max_duration": 20},
    {"id": 2, "name": "p2", "min_duration": 10, "max_duration": 20},
    {"id": 3, "name": "p3", "min_duration": 10, "max_duration": 20},
    {"id": 4, "name": "p4", "min_duration": 10, "max_duration": 20, "terminal": true}
  ],
  "edges": [[0,1],[1,2],[2,3],[3,4]]
})";
}

}  // namespace spa::test
