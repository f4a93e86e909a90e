#include "spa/tta.hpp"

#include <cmath>

namespace spa {

namespace {

void require_adapter_dims(const Matrix& v, const ReferenceSet& refs,
                          const Matrix& text, const AdapterPair& a) {
  const Eigen::Index d = a.f_v.rows();
  if (v.cols() != d || static_cast<Eigen::Index>(refs.dim()) != d ||
      text.cols() != d)
    fail(ErrorCode::dimension_mismatch,
         "embeddings and adapters disagree on dimension");
  if (text.rows() != static_cast<Eigen::Index>(refs.k()))
    fail(ErrorCode::dimension_mismatch,
         "text embeddings cover " + std::to_string(text.rows()) +
             " phases, references cover " + std::to_string(refs.k()));
}

/// Row-wise softmax Jacobian-vector product: dz = s .* (ds - <ds, s>_row).
Matrix softmax_rows_backward(const Matrix& s, const Matrix& ds) {
  Eigen::ArrayXXd sa = s.array();
  Eigen::ArrayXXd da = ds.array();
  Eigen::ArrayXd dot = (sa * da).rowwise().sum();
  return ((da.colwise() - dot) * sa).matrix();
}

/// Elementwise a/b where the clamped log is active, 0 elsewhere.
Matrix clamped_ratio(const Matrix& a, const Matrix& b) {
  return (b.array() > kProbClamp)
      .select(a.array() / b.array().max(kProbClamp), 0.0)
      .matrix();
}

}  // namespace

AdapterPair init_adapters(int d, double tau, double tau_ref) {
  if (d < 1) fail(ErrorCode::dimension_mismatch, "adapter dimension must be >= 1");
  if (tau <= 0.0 || tau_ref <= 0.0)
    fail(ErrorCode::invalid_temperature, "temperatures must be positive");
  AdapterPair a;
  a.f_v = Matrix::Identity(d, d);
  a.f_t = Matrix::Identity(d, d);
  a.tau = tau;
  a.tau_ref = tau_ref;
  return a;
}

Matrix stream_reference(const Matrix& v, const ReferenceSet& refs,
                        const AdapterPair& a) {
  if (v.cols() != a.f_v.rows() ||
      static_cast<Eigen::Index>(refs.dim()) != a.f_v.rows())
    fail(ErrorCode::dimension_mismatch,
         "embeddings and adapters disagree on dimension");
  const Matrix vp = v * a.f_v.transpose();
  const Matrix rp = refs.embeddings * a.f_v.transpose();
  return softmax_rows(vp * rp.transpose() / a.tau_ref) * refs.assoc;
}

Matrix stream_vision_language(const Matrix& v, const Matrix& text,
                              const AdapterPair& a) {
  if (v.cols() != a.f_v.rows() || text.cols() != a.f_t.rows())
    fail(ErrorCode::dimension_mismatch,
         "embeddings and adapters disagree on dimension");
  const Matrix vp = v * a.f_v.transpose();
  const Matrix tp = text * a.f_t.transpose();
  return softmax_rows(vp * tp.transpose() / a.tau);
}

Matrix stream_fewshot(const FewShotClassifier& clf, const Matrix& v) {
  return predict_proba(clf, v);
}

double mutual_loss(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorCode::dimension_mismatch, "stream shapes differ");
  const double total =
      (a.array() * b.array().max(kProbClamp).log()).sum();
  return -total / a.rows();
}

TtaGrads tta_loss_and_grads(const Matrix& v, const ReferenceSet& refs,
                            const Matrix& text, const Matrix& s_fs,
                            const AdapterPair& a) {
  require_adapter_dims(v, refs, text, a);
  const double inv_l = 1.0 / static_cast<double>(v.rows());

  const Matrix vp = v * a.f_v.transpose();
  const Matrix rp = refs.embeddings * a.f_v.transpose();
  const Matrix tp = text * a.f_t.transpose();
  const Matrix p_ref = softmax_rows(vp * rp.transpose() / a.tau_ref);
  const Matrix s_ref = p_ref * refs.assoc;
  const Matrix s_vl = softmax_rows(vp * tp.transpose() / a.tau);

  TtaGrads g;
  g.loss = mutual_loss(s_ref, s_vl) + mutual_loss(s_fs, s_ref);

  const Matrix ds_vl = -inv_l * clamped_ratio(s_ref, s_vl);
  const Matrix ds_ref =
      (-inv_l * s_vl.array().max(kProbClamp).log()).matrix() -
      inv_l * clamped_ratio(s_fs, s_ref);

  const Matrix dz_ref = softmax_rows_backward(p_ref, ds_ref * refs.assoc.transpose());
  const Matrix dz_vl = softmax_rows_backward(s_vl, ds_vl);

  const Matrix dvp = dz_ref * rp / a.tau_ref + dz_vl * tp / a.tau;
  const Matrix drp = dz_ref.transpose() * vp / a.tau_ref;
  const Matrix dtp = dz_vl.transpose() * vp / a.tau;

  g.grad_v = dvp.transpose() * v + drp.transpose() * refs.embeddings;
  g.grad_t = dtp.transpose() * text;
  return g;
}

TtaResult tta_adapt(const Matrix& v, const ReferenceSet& refs,
                    const Matrix& text, const FewShotClassifier& clf,
                    const TtaConfig& cfg) {
  if (cfg.epochs < 0) fail(ErrorCode::invalid_range, "epochs must be >= 0");
  if (cfg.lr <= 0.0) fail(ErrorCode::invalid_range, "lr must be positive");

  TtaResult result;
  result.adapters =
      init_adapters(static_cast<int>(v.cols()), cfg.tau, cfg.tau_ref);
  AdapterPair& a = result.adapters;
  const Matrix s_fs = stream_fewshot(clf, v);

  Matrix vel_v = Matrix::Zero(a.f_v.rows(), a.f_v.cols());
  Matrix vel_t = Matrix::Zero(a.f_t.rows(), a.f_t.cols());

  TtaGrads g = tta_loss_and_grads(v, refs, text, s_fs, a);
  if (!std::isfinite(g.loss))
    fail(ErrorCode::non_finite_loss, "adaptation loss diverged");
  result.loss_trace.push_back(g.loss);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.momentum > 0.0) {
      vel_v = cfg.momentum * vel_v + g.grad_v;
      vel_t = cfg.momentum * vel_t + g.grad_t;
      a.f_v -= cfg.lr * vel_v;
      a.f_t -= cfg.lr * vel_t;
    } else {
      a.f_v -= cfg.lr * g.grad_v;
      a.f_t -= cfg.lr * g.grad_t;
    }
    g = tta_loss_and_grads(v, refs, text, s_fs, a);
    if (!std::isfinite(g.loss))
      fail(ErrorCode::non_finite_loss, "adaptation loss diverged");
    result.loss_trace.push_back(g.loss);
  }
  return result;
}

Matrix fuse_streams(const StreamBundle& s, const std::array<double, 3>& weights) {
  if (s.s_vl.rows() != s.s_ref.rows() || s.s_vl.cols() != s.s_ref.cols() ||
      s.s_fs.rows() != s.s_ref.rows() || s.s_fs.cols() != s.s_ref.cols())
    fail(ErrorCode::dimension_mismatch, "stream shapes differ");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) fail(ErrorCode::weight_violation, "negative fusion weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail(ErrorCode::weight_violation,
         "fusion weights sum to " + std::to_string(sum));
  return weights[0] * s.s_ref + weights[1] * s.s_vl + weights[2] * s.s_fs;
}

}  // namespace spa
