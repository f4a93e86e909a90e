#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "spa/bench.hpp"
#include "spa/tta.hpp"

using namespace spa;
using spa::test::expect_error;

namespace {

struct Scene {
  Matrix v;     // L x D
  ReferenceSet refs;
  Matrix text;  // K x D
  FewShotClassifier clf;
};

Scene make_scene(std::uint64_t seed, int l = 10, int k = 3, int d = 5,
                 int per_phase = 2) {
  Rng rng(seed);
  Scene s;
  s.v = l2_normalized(rng.normal_matrix(l, d));
  std::vector<int> labels;
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < per_phase; ++i) labels.push_back(c);
  s.refs = make_reference_set(
      l2_normalized(rng.normal_matrix(k * per_phase, d)), labels, k);
  s.text = l2_normalized(rng.normal_matrix(k, d));
  s.clf = init_classifier(s.text, seed);
  return s;
}

/// Loop oracle for both adapted streams.
Matrix oracle_vl(const Matrix& v, const Matrix& text, double tau) {
  Matrix logits(v.rows(), text.rows());
  for (int i = 0; i < v.rows(); ++i)
    for (int c = 0; c < text.rows(); ++c)
      logits(i, c) = v.row(i).dot(text.row(c)) / tau;
  return softmax_rows(logits);
}

Matrix oracle_ref(const Matrix& v, const ReferenceSet& refs, double tau_ref) {
  Matrix weights = oracle_vl(v, refs.embeddings, tau_ref);
  Matrix out = Matrix::Zero(v.rows(), refs.k());
  for (int i = 0; i < v.rows(); ++i)
    for (int n = 0; n < refs.count(); ++n)
      for (int c = 0; c < refs.k(); ++c)
        out(i, c) += weights(i, n) * refs.assoc(n, c);
  return out;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-10, std::abs(a) + std::abs(b));
}

}  // namespace

TEST_CASE("init_adapters") {
  const AdapterPair a = init_adapters(3, 0.1, 0.2);
  CHECK(a.f_v == Matrix::Identity(3, 3));
  CHECK(a.f_t == Matrix::Identity(3, 3));
  CHECK(a.tau == 0.1);
  CHECK(a.tau_ref == 0.2);

  expect_error(ErrorCode::invalid_temperature, [] { init_adapters(3, 0.0); });
  expect_error(ErrorCode::invalid_temperature, [] { init_adapters(3, 0.07, -1.0); });
  expect_error(ErrorCode::dimension_mismatch, [] { init_adapters(0, 0.07); });
}

TEST_CASE("identity adapters reproduce the unadapted streams") {
  const Scene s = make_scene(1);
  const AdapterPair a = init_adapters(5, 0.07, 0.09);

  const Matrix vl = stream_vision_language(s.v, s.text, a);
  CHECK(vl.isApprox(oracle_vl(s.v, s.text, 0.07), 1e-12));

  const Matrix ref = stream_reference(s.v, s.refs, a);
  CHECK(ref.isApprox(oracle_ref(s.v, s.refs, 0.09), 1e-12));

  for (int i = 0; i < 10; ++i) {
    CHECK(vl.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ref.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("reference stream favors the matching reference") {
  // Orthonormal references: frame equal to reference j puts the argmax on
  // the phase of j.
  const int d = 6;
  Matrix emb = Matrix::Identity(d, d);
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  ReferenceSet refs = make_reference_set(emb, labels, 3);
  Matrix v(2, d);
  v.row(0) = emb.row(3);  // phase 1
  v.row(1) = emb.row(4);  // phase 2

  const Matrix out = stream_reference(v, refs, init_adapters(d));
  Eigen::Index argmax;
  out.row(0).maxCoeff(&argmax);
  CHECK(argmax == 1);
  out.row(1).maxCoeff(&argmax);
  CHECK(argmax == 2);
}

TEST_CASE("matching text embedding wins and large tau flattens") {
  const Scene s = make_scene(2);
  Matrix v(1, 5);
  v.row(0) = s.text.row(2);
  const Matrix p = stream_vision_language(v, s.text, init_adapters(5));
  Eigen::Index argmax;
  p.row(0).maxCoeff(&argmax);
  CHECK(argmax == 2);

  const Matrix flat =
      stream_vision_language(s.v, s.text, init_adapters(5, 1000.0, 1000.0));
  for (int i = 0; i < flat.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(flat(i, c) - 1.0 / 3) < 1e-3);
}

TEST_CASE("stream_fewshot delegates to the classifier") {
  const Scene s = make_scene(3);
  CHECK(stream_fewshot(s.clf, s.v) == predict_proba(s.clf, s.v));
}

TEST_CASE("mutual_loss values") {
  const Matrix uniform = Matrix::Constant(4, 7, 1.0 / 7);
  CHECK(mutual_loss(uniform, uniform) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));

  Matrix a = Matrix::Zero(1, 3);
  a(0, 1) = 1.0;
  Matrix b(1, 3);
  b << 0.0005, 0.999, 0.0005;
  CHECK(mutual_loss(a, b) == doctest::Approx(-std::log(0.999)).epsilon(1e-9));

  Rng rng(4);
  const Matrix pa = softmax_rows(rng.normal_matrix(6, 4));
  const Matrix pb = softmax_rows(rng.normal_matrix(6, 4));
  CHECK(mutual_loss(pa, pb) >= 0.0);

  expect_error(ErrorCode::dimension_mismatch,
               [&] { mutual_loss(pa, Matrix::Constant(6, 5, 0.2)); });
}

TEST_CASE("adapter gradients match finite differences") {
  const Scene s = make_scene(5, 6, 3, 4);
  Rng rng(6);
  AdapterPair a = init_adapters(4, 0.3, 0.4);
  a.f_v += 0.05 * rng.normal_matrix(4, 4);
  a.f_t += 0.05 * rng.normal_matrix(4, 4);
  const Matrix s_fs = stream_fewshot(s.clf, s.v);

  const TtaGrads g = tta_loss_and_grads(s.v, s.refs, s.text, s_fs, a);
  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      AdapterPair hi = a, lo = a;
      hi.f_v(i, j) += h;
      lo.f_v(i, j) -= h;
      const double fd = (tta_loss_and_grads(s.v, s.refs, s.text, s_fs, hi).loss -
                         tta_loss_and_grads(s.v, s.refs, s.text, s_fs, lo).loss) /
                        (2 * h);
      worst = std::max(worst, rel_err(g.grad_v(i, j), fd));

      hi = a;
      lo = a;
      hi.f_t(i, j) += h;
      lo.f_t(i, j) -= h;
      const double fd_t =
          (tta_loss_and_grads(s.v, s.refs, s.text, s_fs, hi).loss -
           tta_loss_and_grads(s.v, s.refs, s.text, s_fs, lo).loss) /
          (2 * h);
      worst = std::max(worst, rel_err(g.grad_t(i, j), fd_t));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("tta_adapt anchors, descends and is deterministic") {
  // Drifted synthetic video so adaptation has something to undo.
  const SyntheticWorld world = make_synthetic_world(3, 16, 0, 0.3, 0.4);
  Rng rng(7);
  Matrix v(30, 16);
  for (int i = 0; i < 30; ++i)
    v.row(i) = world.vision_prototypes.row(i % 3);
  Rng drift_rng(8);
  const Vector drift = 0.5 * l2_normalized(drift_rng.normal_matrix(1, 16)).row(0).transpose();
  for (int i = 0; i < 30; ++i) {
    v.row(i) += drift.transpose() + 0.05 * rng.normal_vector(16).transpose();
  }
  v = l2_normalized(v);

  std::vector<int> ref_labels;
  Matrix ref_emb(6, 16);
  Rng ref_rng(9);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 2; ++i) {
      ref_emb.row(2 * c + i) =
          world.vision_prototypes.row(c) +
          0.05 * ref_rng.normal_vector(16).transpose();
      ref_labels.push_back(c);
    }
  const ReferenceSet refs = make_reference_set(l2_normalized(ref_emb), ref_labels, 3);
  const FewShotClassifier clf = init_classifier(world.text_prototypes, 0);

  TtaConfig cfg;
  SUBCASE("zero epochs keeps identity adapters") {
    cfg.epochs = 0;
    const TtaResult r = tta_adapt(v, refs, world.text_prototypes, clf, cfg);
    CHECK(r.adapters.f_v == Matrix::Identity(16, 16));
    CHECK(r.adapters.f_t == Matrix::Identity(16, 16));
    CHECK(r.loss_trace.size() == 1);
  }
  SUBCASE("loss decreases over epochs") {
    cfg.epochs = 15;
    cfg.lr = 1e-3;
    const TtaResult r = tta_adapt(v, refs, world.text_prototypes, clf, cfg);
    CHECK(r.loss_trace.size() == 16);
    CHECK(r.loss_trace.back() <= r.loss_trace.front());
  }
  SUBCASE("two runs agree bitwise") {
    cfg.epochs = 5;
    const TtaResult r1 = tta_adapt(v, refs, world.text_prototypes, clf, cfg);
    const TtaResult r2 = tta_adapt(v, refs, world.text_prototypes, clf, cfg);
    CHECK(r1.adapters.f_v == r2.adapters.f_v);
    CHECK(r1.adapters.f_t == r2.adapters.f_t);
    CHECK(r1.loss_trace == r2.loss_trace);
  }
  SUBCASE("momentum variant also descends") {
    cfg.epochs = 10;
    cfg.lr = 1e-3;
    cfg.momentum = 0.9;
    const TtaResult r = tta_adapt(v, refs, world.text_prototypes, clf, cfg);
    CHECK(r.loss_trace.back() <= r.loss_trace.front());
  }
}

TEST_CASE("fuse_streams") {
  Rng rng(10);
  StreamBundle bundle;
  bundle.s_ref = softmax_rows(rng.normal_matrix(5, 3));
  bundle.s_vl = softmax_rows(rng.normal_matrix(5, 3));
  bundle.s_fs = softmax_rows(rng.normal_matrix(5, 3));

  SUBCASE("identical streams fuse to themselves") {
    StreamBundle same{bundle.s_ref, bundle.s_ref, bundle.s_ref};
    CHECK(fuse_streams(same).isApprox(bundle.s_ref, 1e-12));
  }
  SUBCASE("degenerate weights select one stream exactly") {
    CHECK(fuse_streams(bundle, {1.0, 0.0, 0.0}) == bundle.s_ref);
  }
  SUBCASE("rows stay in the simplex and entries stay convex") {
    const Matrix fused = fuse_streams(bundle);
    for (int i = 0; i < 5; ++i) {
      CHECK(fused.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
      for (int c = 0; c < 3; ++c) {
        const double lo = std::min({bundle.s_ref(i, c), bundle.s_vl(i, c),
                                    bundle.s_fs(i, c)});
        const double hi = std::max({bundle.s_ref(i, c), bundle.s_vl(i, c),
                                    bundle.s_fs(i, c)});
        CHECK(fused(i, c) >= lo - 1e-12);
        CHECK(fused(i, c) <= hi + 1e-12);
      }
    }
  }
  SUBCASE("phase permutation commutes with fusion") {
    const std::vector<int> perm{2, 0, 1};
    StreamBundle permuted;
    permuted.s_ref.resize(5, 3);
    permuted.s_vl.resize(5, 3);
    permuted.s_fs.resize(5, 3);
    for (int c = 0; c < 3; ++c) {
      permuted.s_ref.col(c) = bundle.s_ref.col(perm[c]);
      permuted.s_vl.col(c) = bundle.s_vl.col(perm[c]);
      permuted.s_fs.col(c) = bundle.s_fs.col(perm[c]);
    }
    const Matrix fused = fuse_streams(bundle);
    const Matrix fused_perm = fuse_streams(permuted);
    for (int c = 0; c < 3; ++c)
      CHECK(fused_perm.col(c).isApprox(fused.col(perm[c]), 1e-12));
  }
  SUBCASE("weight violations") {
    expect_error(ErrorCode::weight_violation,
                 [&] { fuse_streams(bundle, {0.5, 0.5, 0.5}); });
    expect_error(ErrorCode::weight_violation,
                 [&] { fuse_streams(bundle, {1.2, -0.2, 0.0}); });
    StreamBundle ragged = bundle;
    ragged.s_fs = Matrix::Constant(4, 3, 1.0 / 3);
    expect_error(ErrorCode::dimension_mismatch, [&] { fuse_streams(ragged); });
  }
}
