#include "spa/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace spa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::malformed_header, path.string() + ": " + e.what());
  }
  return j;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return bytes;
}

float byteswap_f32(float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  u = __builtin_bswap32(u);
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

Matrix load_embedding_matrix(const fs::path& header_path,
                             const fs::path& data_path) {
  const json header = read_json_file(header_path);
  if (!header.is_object() || !header.contains("rows") || !header.contains("cols"))
    fail(ErrorCode::malformed_header,
         header_path.string() + ": expected object with rows/cols");
  if (!header["rows"].is_number_integer() || !header["cols"].is_number_integer())
    fail(ErrorCode::malformed_header, header_path.string() + ": rows/cols must be integers");
  const long rows = header["rows"].get<long>();
  const long cols = header["cols"].get<long>();
  if (rows < 1 || cols < 1)
    fail(ErrorCode::malformed_header, header_path.string() + ": rows and cols must be >= 1");
  if (header.value("dtype", "f32") != "f32")
    fail(ErrorCode::malformed_header, header_path.string() + ": dtype must be f32");
  if (header.value("byte_order", "little") != "little")
    fail(ErrorCode::malformed_header, header_path.string() + ": byte_order must be little");
  if (header.value("layout", "row-major") != "row-major")
    fail(ErrorCode::malformed_header, header_path.string() + ": layout must be row-major");

  const std::vector<char> bytes = read_bytes(data_path);
  const std::size_t expected = static_cast<std::size_t>(rows) * cols * 4;
  if (bytes.size() != expected)
    fail(ErrorCode::size_mismatch,
         data_path.string() + ": payload is " + std::to_string(bytes.size()) +
             " bytes, header declares " + std::to_string(expected));

  Matrix m(rows, cols);
  const float* src = reinterpret_cast<const float*>(bytes.data());
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) {
      float v = src[i * cols + j];
      if constexpr (std::endian::native == std::endian::big) v = byteswap_f32(v);
      m(i, j) = static_cast<double>(v);
    }
  }
  if (!m.allFinite())
    fail(ErrorCode::non_finite_value, data_path.string() + ": payload contains NaN or Inf");
  return m;
}

void save_embedding_matrix(const Matrix& m, const fs::path& header_path,
                           const fs::path& data_path) {
  if (m.rows() < 1 || m.cols() < 1)
    fail(ErrorCode::dimension_mismatch, "cannot save an empty matrix");
  if (!m.allFinite())
    fail(ErrorCode::non_finite_value, "matrix contains NaN or Inf");

  json header = {{"rows", m.rows()},
                 {"cols", m.cols()},
                 {"dtype", "f32"},
                 {"byte_order", "little"},
                 {"layout", "row-major"}};
  std::ofstream hout(header_path);
  if (!hout) fail(ErrorCode::io_error, "cannot write " + header_path.string());
  hout << header.dump(2) << "\n";

  std::ofstream bout(data_path, std::ios::binary);
  if (!bout) fail(ErrorCode::io_error, "cannot write " + data_path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      float v = static_cast<float>(m(i, j));
      if constexpr (std::endian::native == std::endian::big) v = byteswap_f32(v);
      bout.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

std::vector<int> load_labels(const fs::path& path, int k) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  std::vector<int> labels;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.eof()) break;
    std::istringstream ss(line);
    long value;
    char trailing;
    if (!(ss >> value) || (ss >> trailing))
      fail(ErrorCode::parse_error,
           path.string() + ":" + std::to_string(line_no) + ": not an integer: '" + line + "'");
    if (value < 0 || value >= k)
      fail(ErrorCode::out_of_range_label,
           path.string() + ":" + std::to_string(line_no) + ": label " +
               std::to_string(value) + " outside [0, " + std::to_string(k) + ")");
    labels.push_back(static_cast<int>(value));
  }
  return labels;
}

void save_labels(const std::vector<int>& labels, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  for (int v : labels) out << v << "\n";
}

std::vector<int> ReferenceSet::labels() const {
  std::vector<int> out(static_cast<std::size_t>(assoc.rows()));
  for (Eigen::Index i = 0; i < assoc.rows(); ++i) {
    Eigen::Index arg = 0;
    assoc.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

ReferenceSet make_reference_set(const Matrix& embeddings,
                                const std::vector<int>& labels, int k) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
    fail(ErrorCode::length_mismatch,
         "labels length " + std::to_string(labels.size()) + " != rows " +
             std::to_string(embeddings.rows()));
  Matrix assoc = Matrix::Zero(embeddings.rows(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      fail(ErrorCode::out_of_range_label, "label " + std::to_string(labels[i]));
    assoc(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return ReferenceSet{embeddings, assoc};
}

ReferenceSet load_reference_manifest(const fs::path& manifest_path,
                                     bool normalize) {
  const json manifest = read_json_file(manifest_path);
  if (!manifest.is_object() || !manifest.contains("k") || !manifest.contains("phases"))
    fail(ErrorCode::malformed_header,
         manifest_path.string() + ": expected object with k/phases");
  const int k = manifest["k"].get<int>();
  if (k < 1) fail(ErrorCode::malformed_header, "k must be >= 1");

  const fs::path base = manifest_path.parent_path();
  std::vector<Matrix> chunks;
  std::vector<int> labels;
  long total_rows = 0;
  long dim = -1;
  for (const auto& phase : manifest["phases"]) {
    const int id = phase.at("id").get<int>();
    if (id < 0 || id >= k)
      fail(ErrorCode::out_of_range_label,
           "phase id " + std::to_string(id) + " outside [0, " + std::to_string(k) + ")");
    for (const auto& item : phase.at("items")) {
      Matrix m = load_embedding_matrix(base / item.at("header").get<std::string>(),
                                       base / item.at("data").get<std::string>());
      if (dim < 0) dim = m.cols();
      if (m.cols() != dim)
        fail(ErrorCode::dimension_mismatch,
             "reference dimension " + std::to_string(m.cols()) + " != " + std::to_string(dim));
      total_rows += m.rows();
      for (Eigen::Index r = 0; r < m.rows(); ++r) labels.push_back(id);
      chunks.push_back(std::move(m));
    }
  }
  if (chunks.empty()) fail(ErrorCode::empty_dataset, "manifest lists no reference items");

  Matrix all(total_rows, dim);
  long row = 0;
  for (const auto& c : chunks) {
    all.middleRows(row, c.rows()) = c;
    row += c.rows();
  }
  if (normalize) all = l2_normalized(all);
  return make_reference_set(all, labels, k);
}

void save_reference_manifest(const ReferenceSet& refs,
                             const fs::path& manifest_path,
                             const std::string& stem) {
  const fs::path base = manifest_path.parent_path();
  const std::vector<int> labels = refs.labels();
  json phases = json::array();
  for (int phase = 0; phase < refs.k(); ++phase) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == phase) rows.push_back(static_cast<Eigen::Index>(i));
    if (rows.empty()) {
      phases.push_back({{"id", phase}, {"items", json::array()}});
      continue;
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), refs.dim());
    for (std::size_t i = 0; i < rows.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = refs.embeddings.row(rows[i]);
    const std::string name = stem + "_p" + std::to_string(phase);
    save_embedding_matrix(m, base / (name + ".json"), base / (name + ".bin"));
    phases.push_back({{"id", phase},
                      {"items", json::array({{{"header", name + ".json"},
                                              {"data", name + ".bin"}}})}});
  }
  json manifest = {{"k", refs.k()}, {"phases", phases}};
  std::ofstream out(manifest_path);
  if (!out) fail(ErrorCode::io_error, "cannot write " + manifest_path.string());
  out << manifest.dump(2) << "\n";
}

}  // namespace spa
