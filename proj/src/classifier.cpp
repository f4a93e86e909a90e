#include "spa/classifier.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "spa/io.hpp"

namespace spa {

using nlohmann::json;

FewShotClassifier init_classifier(const Matrix& text_embeddings,
                                  std::uint64_t /*seed*/) {
  if (text_embeddings.rows() < 1 || text_embeddings.cols() < 1)
    fail(ErrorCode::dimension_mismatch, "text embeddings must be K x D with K, D >= 1");
  for (Eigen::Index i = 0; i < text_embeddings.rows(); ++i) {
    const double norm = text_embeddings.row(i).norm();
    if (std::abs(norm - 1.0) > 1e-6)
      fail(ErrorCode::norm_violation,
           "text embedding row " + std::to_string(i) + " has norm " + std::to_string(norm));
  }
  FewShotClassifier clf;
  clf.text_embeddings = text_embeddings;
  clf.prototypes = Matrix::Zero(text_embeddings.rows(), text_embeddings.cols());
  clf.multipliers = Vector::Ones(text_embeddings.rows());
  return clf;
}

Matrix predict_proba(const FewShotClassifier& clf, const Matrix& f) {
  if (f.cols() != clf.dim())
    fail(ErrorCode::dimension_mismatch,
         "embedding dimension " + std::to_string(f.cols()) + " != classifier dimension " +
             std::to_string(clf.dim()));
  return softmax_rows(f * clf.blended().transpose());
}

CeGrads ce_loss_and_grads(const FewShotClassifier& clf, const Matrix& f,
                          const std::vector<int>& y) {
  if (f.cols() != clf.dim())
    fail(ErrorCode::dimension_mismatch, "embedding dimension mismatch");
  if (static_cast<std::size_t>(f.rows()) != y.size())
    fail(ErrorCode::dimension_mismatch,
         "label count " + std::to_string(y.size()) + " != frame count " +
             std::to_string(f.rows()));
  const Eigen::Index frames = f.rows();
  const int k = clf.k();

  const Matrix p = predict_proba(clf, f);

  double loss = 0.0;
  Matrix residual = p;  // becomes (p - onehot(y)) / L
  for (Eigen::Index i = 0; i < frames; ++i) {
    const int label = y[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k)
      fail(ErrorCode::out_of_range_label, "label " + std::to_string(label));
    loss -= std::log(std::max(p(i, label), kProbClamp));
    residual(i, label) -= 1.0;
  }
  loss /= static_cast<double>(frames);
  residual /= static_cast<double>(frames);

  CeGrads grads;
  grads.loss = loss;
  grads.grad_w = residual.transpose() * f;
  const Matrix text_sim = f * clf.text_embeddings.transpose();  // L x K
  grads.grad_alpha = residual.cwiseProduct(text_sim).colwise().sum().transpose();
  return grads;
}

FewShotTrainResult train_fewshot(FewShotClassifier clf, const Matrix& f,
                                 const std::vector<int>& y,
                                 const TrainConfig& cfg) {
  FewShotTrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    CeGrads grads = ce_loss_and_grads(clf, f, y);
    if (!std::isfinite(grads.loss))
      fail(ErrorCode::non_finite_loss, "loss diverged at step " + std::to_string(step));
    result.loss_trace.push_back(grads.loss);
    const std::size_t n = result.loss_trace.size();
    if (cfg.early_stop_window > 0 &&
        n > static_cast<std::size_t>(cfg.early_stop_window)) {
      const double before = result.loss_trace[n - 1 - cfg.early_stop_window];
      if (before - grads.loss < cfg.early_stop_eps) break;
    }
    clf.prototypes -= cfg.lr * grads.grad_w;
    clf.multipliers -= cfg.lr * grads.grad_alpha;
  }
  result.clf = std::move(clf);
  return result;
}

void save_classifier(const FewShotClassifier& clf,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json header = {{"k", clf.k()},
                 {"d", clf.dim()},
                 {"alpha", std::vector<double>(
                               clf.multipliers.data(),
                               clf.multipliers.data() + clf.multipliers.size())}};
  std::ofstream out(dir / "classifier.json");
  if (!out) fail(ErrorCode::io_error, "cannot write " + (dir / "classifier.json").string());
  out << header.dump(2) << "\n";
  save_embedding_matrix(clf.prototypes, dir / "w.json", dir / "w.bin");
  save_embedding_matrix(clf.text_embeddings, dir / "t.json", dir / "t.bin");
}

FewShotClassifier load_classifier(const std::filesystem::path& dir) {
  std::ifstream in(dir / "classifier.json");
  if (!in) fail(ErrorCode::io_error, "cannot open " + (dir / "classifier.json").string());
  json header;
  try {
    in >> header;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::malformed_header, std::string("classifier.json: ") + e.what());
  }
  FewShotClassifier clf;
  clf.prototypes = load_embedding_matrix(dir / "w.json", dir / "w.bin");
  clf.text_embeddings = load_embedding_matrix(dir / "t.json", dir / "t.bin");
  const auto alpha = header.at("alpha").get<std::vector<double>>();
  clf.multipliers = Eigen::Map<const Vector>(alpha.data(),
                                             static_cast<Eigen::Index>(alpha.size()));
  const int k = header.at("k").get<int>();
  const int d = header.at("d").get<int>();
  if (clf.k() != k || clf.dim() != d ||
      clf.prototypes.rows() != k || clf.prototypes.cols() != d ||
      clf.multipliers.size() != k)
    fail(ErrorCode::dimension_mismatch, "classifier checkpoint shapes disagree with header");
  return clf;
}

}  // namespace spa
