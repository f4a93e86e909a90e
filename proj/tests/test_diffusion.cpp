#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "spa/diffusion.hpp"
#include "spa/task_graph.hpp"

using namespace spa;
using spa::test::chain_graph_json;
using spa::test::expect_error;
using spa::test::temp_dir;

namespace {

DenoiserConfig tiny_arch() {
  DenoiserConfig cfg;
  cfg.width = 4;
  cfg.blocks = 2;
  cfg.kernel = 3;
  cfg.time_embed = 4;
  return cfg;
}

Denoiser randomized(int k, const DenoiserConfig& cfg, std::uint64_t seed) {
  Denoiser d = init_denoiser(k, cfg, seed);
  Rng rng(seed + 17);
  Vector params = denoiser_flatten(d);
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = 0.3 * rng.normal();
  denoiser_unflatten(d, params);
  return d;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-10, std::abs(a) + std::abs(b));
}

}  // namespace

TEST_CASE("linear noise schedule") {
  const NoiseSchedule s = build_noise_schedule(100, 1e-4, 0.02);
  CHECK(s.T == 100);
  CHECK(s.beta(0) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(s.beta(99) == doctest::Approx(0.02).epsilon(1e-15));
  const double step = s.beta(1) - s.beta(0);
  for (int t = 1; t < 100; ++t)
    CHECK(s.beta(t) - s.beta(t - 1) == doctest::Approx(step).epsilon(1e-9));

  CHECK(s.alpha_bar_at(0) == 1.0);
  CHECK(s.alpha_bar(0) == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));
  double prod = 1.0;
  for (int t = 0; t < 100; ++t) {
    prod *= 1.0 - s.beta(t);
    CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
    if (t > 0) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }

  const NoiseSchedule single = build_noise_schedule(1, 0.01, 0.02);
  CHECK(single.beta(0) == 0.01);

  expect_error(ErrorCode::invalid_range, [] { build_noise_schedule(0, 1e-4, 0.02); });
  expect_error(ErrorCode::invalid_range, [] { build_noise_schedule(10, 0.03, 0.02); });
  expect_error(ErrorCode::invalid_range, [] { build_noise_schedule(10, -0.1, 0.02); });
  expect_error(ErrorCode::invalid_range, [] { build_noise_schedule(10, 0.5, 1.0); });
}

TEST_CASE("signed one-hot encoding and decoding") {
  const std::vector<int> y{0, 2, 1};
  const Matrix h = encode_labels(y, 3);
  CHECK(h.rows() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(h(i, y[static_cast<std::size_t>(i)]) == 1.0);
    CHECK(h.row(i).sum() == doctest::Approx(2.0 - 3.0).epsilon(1e-15));
  }
  CHECK(decode_phases(encode_labels(y, 3)) == y);
  expect_error(ErrorCode::out_of_range_label, [] { encode_labels({0, 3}, 3); });

  Matrix p(2, 3);
  p << 0.2, 0.3, 0.5, 0.4, 0.4, 0.2;
  CHECK(encode_probs(p) == 2.0 * p - Matrix::Constant(2, 3, 1.0));
  CHECK(decode_phases(p) == std::vector<int>{2, 0});  // tie goes to index 0

  Matrix bad(1, 2);
  bad << 0.9, 0.9;
  expect_error(ErrorCode::invalid_range, [&] { encode_probs(bad); });
}

TEST_CASE("forward noise matches the marginal moments") {
  const NoiseSchedule sched = build_noise_schedule(100, 1e-4, 0.02);
  const std::vector<int> labels{0, 1, 2, 1, 0, 2, 2, 1, 0, 1};
  const Matrix h0 = encode_labels(labels, 3);
  Rng rng(0);

  for (int t : {1, 50, 100}) {
    const double abar = sched.alpha_bar_at(t);
    double sum = 0.0, sumsq = 0.0;
    const int draws = 2000;
    const double n = static_cast<double>(draws) * h0.size();
    for (int i = 0; i < draws; ++i) {
      const Matrix centered = forward_noise(h0, t, sched, rng) - std::sqrt(abar) * h0;
      sum += centered.sum();
      sumsq += centered.squaredNorm();
    }
    CHECK(std::abs(sum / n) < 3.0 * std::sqrt((1.0 - abar) / n) + 1e-6);
    CHECK(rel_err(sumsq / n, 1.0 - abar) < 0.05);
  }

  expect_error(ErrorCode::step_out_of_range, [&] { forward_noise(h0, 0, sched, rng); });
  expect_error(ErrorCode::step_out_of_range, [&] { forward_noise(h0, 101, sched, rng); });
}

TEST_CASE("fresh denoiser outputs exactly zero") {
  const Denoiser d = init_denoiser(5, DenoiserConfig{}, 3);
  Rng rng(4);
  const Matrix out = denoiser_forward(d, rng.normal_matrix(12, 5), 7);
  CHECK(out.isZero(0.0));
}

TEST_CASE("flatten and unflatten round trip bitwise") {
  const Denoiser d = randomized(3, tiny_arch(), 5);
  const Vector flat = denoiser_flatten(d);
  CHECK(flat.size() == static_cast<Eigen::Index>(d.param_count()));

  Denoiser copy = init_denoiser(3, tiny_arch(), 99);
  denoiser_unflatten(copy, flat);
  CHECK(denoiser_flatten(copy) == flat);
  CHECK(copy.w_in == d.w_in);
  CHECK(copy.blocks[1].kernel == d.blocks[1].kernel);

  expect_error(ErrorCode::dimension_mismatch,
               [&] { Denoiser bad = d; denoiser_unflatten(bad, Vector::Zero(3)); });
}

TEST_CASE("denoiser gradients match finite differences") {
  const int k = 3, len = 6;
  Denoiser d = randomized(k, tiny_arch(), 6);
  Rng rng(7);
  const Matrix h0 = encode_labels({0, 1, 2, 2, 1, 0}, k);
  const Matrix ht = 0.8 * h0 + 0.5 * rng.normal_matrix(len, k);

  Denoiser grads = denoiser_like_zero(d);
  const double loss = denoiser_mse_and_grads(d, ht, 11, h0, grads);
  const Matrix out = denoiser_forward(d, ht, 11);
  CHECK(loss == doctest::Approx((out - h0).squaredNorm() / (len * k)).epsilon(1e-12));

  const Vector analytic = denoiser_flatten(grads);
  Vector params = denoiser_flatten(d);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    Denoiser probe = d;
    Vector p = params;
    p(i) += h;
    denoiser_unflatten(probe, p);
    Denoiser scratch = denoiser_like_zero(d);
    const double hi = denoiser_mse_and_grads(probe, ht, 11, h0, scratch);
    p(i) -= 2 * h;
    denoiser_unflatten(probe, p);
    scratch = denoiser_like_zero(d);
    const double lo = denoiser_mse_and_grads(probe, ht, 11, h0, scratch);
    const double fd = (hi - lo) / (2 * h);
    worst = std::max(worst, rel_err(analytic(i), fd));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("training produces a usable trace") {
  const TaskGraph g = parse_task_graph(chain_graph_json());
  const auto seqs = synthesize_dataset(g, 8, 0, 80);

  DiffusionTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  cfg.train_len = 32;
  cfg.T = 20;
  cfg.arch = tiny_arch();
  cfg.arch.width = 8;
  const DiffusionTrainResult result = train_diffusion(seqs, g.k(), cfg);

  CHECK(static_cast<int>(result.loss_trace.size()) == cfg.epochs + 1);
  for (double loss : result.loss_trace) CHECK(std::isfinite(loss));
  CHECK(result.loss_trace.back() < result.loss_trace.front());
  CHECK(result.model.schedule.T == 20);
  CHECK(result.model.denoiser.k == g.k());

  expect_error(ErrorCode::empty_dataset, [&] { train_diffusion({}, 5, cfg); });
}

TEST_CASE("training is deterministic") {
  const TaskGraph g = parse_task_graph(chain_graph_json());
  const auto seqs = synthesize_dataset(g, 4, 3, 80);
  DiffusionTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 2;
  cfg.train_len = 24;
  cfg.T = 10;
  cfg.arch = tiny_arch();
  const DiffusionTrainResult a = train_diffusion(seqs, g.k(), cfg);
  const DiffusionTrainResult b = train_diffusion(seqs, g.k(), cfg);
  CHECK(denoiser_flatten(a.model.denoiser) == denoiser_flatten(b.model.denoiser));
  CHECK(a.loss_trace == b.loss_trace);
}

TEST_CASE("entropy-based noise step estimation") {
  const NoiseSchedule sched = build_noise_schedule(100, 1e-4, 0.02);

  const Matrix uniform = Matrix::Constant(10, 5, 0.2);
  CHECK(estimate_noise_step(uniform, sched, 50) == 50);
  CHECK(estimate_noise_step(uniform, sched, 100) == 100);

  const Matrix onehot = encode_labels({1, 3, 0}, 5) * 0.5 +
                        Matrix::Constant(3, 5, 0.5);  // back to {0,1}
  CHECK(estimate_noise_step(onehot, sched, 50) == 0);

  const Matrix single = Matrix::Ones(4, 1);
  CHECK(estimate_noise_step(single, sched, 50) == 0);

  // Oracle recomputation on a mixed matrix.
  Matrix mixed(2, 4);
  mixed << 0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25;
  const double mean_h = row_entropies(mixed).mean();
  const int expected = static_cast<int>(
      std::llround(100.0 * mean_h / std::log(4.0)));
  CHECK(expected < 90);
  CHECK(estimate_noise_step(mixed, sched, 90) == expected);
}

TEST_CASE("refinement anchors and contracts") {
  DiffusionModel m;
  m.schedule = build_noise_schedule(20, 1e-4, 0.02);
  m.denoiser = randomized(4, tiny_arch(), 8);
  m.tau_dec = 0.5;

  Rng rng(9);
  const Matrix p = softmax_rows(rng.normal_matrix(15, 4));

  SUBCASE("t_star = 0 returns the input unchanged") {
    CHECK(refine_sequence(m, p, 0) == p);
  }
  SUBCASE("out-of-range t_star fails") {
    expect_error(ErrorCode::step_out_of_range, [&] { refine_sequence(m, p, 21); });
    expect_error(ErrorCode::step_out_of_range, [&] { refine_sequence(m, p, -1); });
  }
  SUBCASE("output is a probability matrix and the pass is deterministic") {
    const Matrix refined = refine_sequence(m, p, 10);
    require_prob_matrix(refined);
    CHECK(refine_sequence(m, p, 10) == refined);
  }
  SUBCASE("renoise draws from the provided generator") {
    expect_error(ErrorCode::invalid_range,
                 [&] { refine_sequence(m, p, 10, true, nullptr); });
    Rng r1(5), r2(5);
    const Matrix a = refine_sequence(m, p, 10, true, &r1);
    const Matrix b = refine_sequence(m, p, 10, true, &r2);
    CHECK(a == b);
    require_prob_matrix(a);
  }
}

TEST_CASE("diffusion checkpoint round trip") {
  DiffusionModel m;
  m.schedule = build_noise_schedule(30, 2e-4, 0.015);
  m.denoiser = randomized(4, tiny_arch(), 10);
  m.tau_dec = 0.4;

  const auto dir = temp_dir("diff_ckpt");
  save_diffusion_model(m, dir);
  const DiffusionModel back = load_diffusion_model(dir);

  CHECK(back.schedule.T == 30);
  CHECK(back.schedule.beta.isApprox(m.schedule.beta, 1e-12));
  CHECK(back.tau_dec == 0.4);
  CHECK(back.denoiser.cfg.width == 4);
  CHECK(back.denoiser.cfg.blocks == 2);

  Rng rng(11);
  const Matrix ht = rng.normal_matrix(9, 4);
  CHECK(denoiser_forward(back.denoiser, ht, 3)
            .isApprox(denoiser_forward(m.denoiser, ht, 3), 1e-6));

  // A second load sees exactly the same f32 parameters.
  const DiffusionModel again = load_diffusion_model(dir);
  CHECK(denoiser_flatten(again.denoiser) == denoiser_flatten(back.denoiser));
}
