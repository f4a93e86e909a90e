#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "spa/linalg.hpp"

namespace spa {

/// Embedding matrices live on disk as a JSON sidecar header next to a raw
/// payload of little-endian row-major f32 values:
///   <name>.json  {"rows": L, "cols": D, "dtype": "f32",
///                 "byte_order": "little", "layout": "row-major"}
///   <name>.bin   rows*cols*4 bytes
/// Values are widened to double on load; all computation is 64-bit.
Matrix load_embedding_matrix(const std::filesystem::path& header_path,
                             const std::filesystem::path& data_path);

void save_embedding_matrix(const Matrix& m,
                           const std::filesystem::path& header_path,
                           const std::filesystem::path& data_path);

/// One non-negative integer per line, each in [0, k).
std::vector<int> load_labels(const std::filesystem::path& path, int k);

void save_labels(const std::vector<int>& labels,
                 const std::filesystem::path& path);

/// Few-shot reference frames with their one-hot phase associations.
/// Rows of `embeddings` and `assoc` are paired.
struct ReferenceSet {
  Matrix embeddings;  // N x D
  Matrix assoc;       // N x K, one-hot rows

  int k() const { return static_cast<int>(assoc.cols()); }
  int count() const { return static_cast<int>(embeddings.rows()); }
  int dim() const { return static_cast<int>(embeddings.cols()); }
  std::vector<int> labels() const;
};

ReferenceSet make_reference_set(const Matrix& embeddings,
                                const std::vector<int>& labels, int k);

/// Manifest schema:
///   {"k": K, "phases": [{"id": 0, "items": [
///       {"header": "ref_p0.json", "data": "ref_p0.bin"}]}, ...]}
/// Item paths resolve relative to the manifest's directory.
ReferenceSet load_reference_manifest(const std::filesystem::path& manifest_path,
                                     bool normalize = true);

/// Writes per-phase embedding pairs plus the manifest; `stem` prefixes the
/// generated file names.
void save_reference_manifest(const ReferenceSet& refs,
                             const std::filesystem::path& manifest_path,
                             const std::string& stem = "ref");

}  // namespace spa
