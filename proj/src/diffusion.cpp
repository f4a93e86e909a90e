#include "spa/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "spa/io.hpp"

namespace spa {

using nlohmann::json;

NoiseSchedule build_noise_schedule(int T, double beta_1, double beta_T,
                                   ScheduleKind kind) {
  if (T < 1) fail(ErrorCode::invalid_range, "T must be >= 1");
  if (!(0.0 <= beta_1 && beta_1 <= beta_T && beta_T < 1.0))
    fail(ErrorCode::invalid_range,
         "need 0 <= beta_1 <= beta_T < 1, got [" + std::to_string(beta_1) +
             ", " + std::to_string(beta_T) + "]");
  (void)kind;  // linear is the only kind
  NoiseSchedule sched;
  sched.T = T;
  sched.beta.resize(T);
  for (int t = 0; t < T; ++t)
    sched.beta(t) =
        T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * t / (T - 1.0);
  sched.alpha_bar.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    prod *= 1.0 - sched.beta(t);
    sched.alpha_bar(t) = prod;
  }
  return sched;
}

Matrix encode_labels(const std::vector<int>& labels, int k) {
  Matrix h = Matrix::Constant(static_cast<Eigen::Index>(labels.size()), k, -1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      fail(ErrorCode::out_of_range_label, "label " + std::to_string(labels[i]));
    h(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return h;
}

Matrix encode_probs(const Matrix& p) {
  require_prob_matrix(p);
  return 2.0 * p - Matrix::Constant(p.rows(), p.cols(), 1.0);
}

std::vector<int> decode_phases(const Matrix& p) {
  std::vector<int> labels(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < p.cols(); ++j)
      if (p(i, j) > p(i, best)) best = static_cast<int>(j);
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

Matrix forward_noise(const Matrix& h0, int t, const NoiseSchedule& sched,
                     Rng& rng) {
  if (t < 1 || t > sched.T)
    fail(ErrorCode::step_out_of_range,
         "step " + std::to_string(t) + " outside [1, " + std::to_string(sched.T) + "]");
  const double abar = sched.alpha_bar_at(t);
  return std::sqrt(abar) * h0 +
         std::sqrt(1.0 - abar) * rng.normal_matrix(h0.rows(), h0.cols());
}

std::size_t Denoiser::param_count() const {
  std::size_t n = static_cast<std::size_t>(w_in.size() + b_in.size() +
                                           w_out.size() + b_out.size());
  for (const auto& b : blocks)
    n += static_cast<std::size_t>(b.time_proj.size() + b.time_bias.size() +
                                  b.kernel.size() + b.conv_bias.size());
  return n;
}

Denoiser init_denoiser(int k, const DenoiserConfig& cfg, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::dimension_mismatch, "k must be >= 1");
  if (cfg.width < 1 || cfg.blocks < 1 || cfg.kernel < 1 || cfg.kernel % 2 == 0)
    fail(ErrorCode::invalid_range, "denoiser needs width, blocks >= 1 and odd kernel");
  if (cfg.time_embed < 2 || cfg.time_embed % 2 != 0)
    fail(ErrorCode::invalid_range, "time_embed must be even and >= 2");

  Rng rng(seed);
  Denoiser d;
  d.k = k;
  d.cfg = cfg;
  const int w = cfg.width;
  d.w_in = rng.normal_matrix(w, k) / std::sqrt(static_cast<double>(k));
  d.b_in = Vector::Zero(w);
  d.blocks.resize(static_cast<std::size_t>(cfg.blocks));
  for (auto& b : d.blocks) {
    b.time_proj =
        rng.normal_matrix(w, cfg.time_embed) / std::sqrt(static_cast<double>(cfg.time_embed));
    b.time_bias = Vector::Zero(w);
    b.kernel = rng.normal_matrix(w, cfg.kernel * w) /
               std::sqrt(static_cast<double>(cfg.kernel * w));
    b.conv_bias = Vector::Zero(w);
  }
  d.w_out = Matrix::Zero(k, w + k);
  d.b_out = Vector::Zero(k);
  return d;
}

Denoiser denoiser_like_zero(const Denoiser& d) {
  Denoiser z = d;
  z.w_in.setZero();
  z.b_in.setZero();
  for (auto& b : z.blocks) {
    b.time_proj.setZero();
    b.time_bias.setZero();
    b.kernel.setZero();
    b.conv_bias.setZero();
  }
  z.w_out.setZero();
  z.b_out.setZero();
  return z;
}

namespace {

void append(Vector& flat, Eigen::Index& pos, const Matrix& m) {
  flat.segment(pos, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
  pos += m.size();
}

void append(Vector& flat, Eigen::Index& pos, const Vector& v) {
  flat.segment(pos, v.size()) = v;
  pos += v.size();
}

void take(const Vector& flat, Eigen::Index& pos, Matrix& m) {
  Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(pos, m.size());
  pos += m.size();
}

void take(const Vector& flat, Eigen::Index& pos, Vector& v) {
  v = flat.segment(pos, v.size());
  pos += v.size();
}

/// Sinusoidal embedding of the step index, interleaved sin/cos over a
/// geometric frequency ladder.
Vector time_embedding(int t, int dim) {
  Vector e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(2 * i) = std::sin(t * freq);
    e(2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

/// Gathers the zero-padded shifted copies of u for every kernel tap:
/// ucat(l, s*w + c) = u(l + s - r, c).
Matrix im2col(const Matrix& u, int taps) {
  const Eigen::Index len = u.rows();
  const Eigen::Index w = u.cols();
  const int r = taps / 2;
  Matrix ucat = Matrix::Zero(len, taps * w);
  for (int s = 0; s < taps; ++s) {
    const int d = s - r;
    const Eigen::Index n = len - std::abs(d);
    if (n <= 0) continue;
    ucat.block(std::max(0, -d), s * w, n, w) = u.block(std::max(0, d), 0, n, w);
  }
  return ucat;
}

/// Adjoint of im2col: scatters column blocks back onto the shifted rows.
Matrix col2im(const Matrix& ducat, int taps, Eigen::Index w) {
  const Eigen::Index len = ducat.rows();
  const int r = taps / 2;
  Matrix du = Matrix::Zero(len, w);
  for (int s = 0; s < taps; ++s) {
    const int d = s - r;
    const Eigen::Index n = len - std::abs(d);
    if (n <= 0) continue;
    du.block(std::max(0, d), 0, n, w) += ducat.block(std::max(0, -d), s * w, n, w);
  }
  return du;
}

struct DenoiserTape {
  Matrix input;                 // L x k
  std::vector<Matrix> ucat;     // per block, L x taps*w
  std::vector<Matrix> act;      // per block tanh output, L x w
  Matrix features;              // L x w after the last block
  Vector temb;                  // time embedding
};

Matrix forward_impl(const Denoiser& d, const Matrix& ht, int t,
                    DenoiserTape* tape) {
  if (ht.cols() != d.k)
    fail(ErrorCode::dimension_mismatch,
         "hidden sequence has " + std::to_string(ht.cols()) + " columns, model expects " +
             std::to_string(d.k));
  const Eigen::Index len = ht.rows();
  const int w = d.cfg.width;
  const Vector temb = time_embedding(t, d.cfg.time_embed);

  Matrix x = (ht * d.w_in.transpose()).rowwise() + d.b_in.transpose();
  if (tape) {
    tape->input = ht;
    tape->temb = temb;
    tape->ucat.resize(d.blocks.size());
    tape->act.resize(d.blocks.size());
  }
  for (std::size_t b = 0; b < d.blocks.size(); ++b) {
    const DenoiserBlock& blk = d.blocks[b];
    const Vector shift = blk.time_proj * temb + blk.time_bias;
    Matrix u = x.rowwise() + shift.transpose();
    Matrix ucat = im2col(u, d.cfg.kernel);
    Matrix act =
        ((ucat * blk.kernel.transpose()).rowwise() + blk.conv_bias.transpose())
            .array()
            .tanh();
    x += act;
    if (tape) {
      tape->ucat[b] = std::move(ucat);
      tape->act[b] = std::move(act);
    }
  }
  if (tape) tape->features = x;

  Matrix z(len, w + d.k);
  z.leftCols(w) = x;
  z.rightCols(d.k) = ht;
  return (z * d.w_out.transpose()).rowwise() + d.b_out.transpose();
}

void backward_impl(const Denoiser& d, const DenoiserTape& tape,
                   const Matrix& dout, Denoiser& grads) {
  const Eigen::Index len = tape.input.rows();
  const int w = d.cfg.width;

  Matrix z(len, w + d.k);
  z.leftCols(w) = tape.features;
  z.rightCols(d.k) = tape.input;
  grads.w_out += dout.transpose() * z;
  grads.b_out += dout.colwise().sum().transpose();

  Matrix dz = dout * d.w_out;
  Matrix dx = dz.leftCols(w);
  for (std::size_t b = d.blocks.size(); b-- > 0;) {
    const DenoiserBlock& blk = d.blocks[b];
    DenoiserBlock& g = grads.blocks[b];
    const Matrix& act = tape.act[b];
    Matrix dpre = dx.array() * (1.0 - act.array().square());
    g.kernel += dpre.transpose() * tape.ucat[b];
    g.conv_bias += dpre.colwise().sum().transpose();
    Matrix du = col2im(dpre * blk.kernel, d.cfg.kernel, w);
    const Vector dshift = du.colwise().sum().transpose();
    g.time_proj += dshift * tape.temb.transpose();
    g.time_bias += dshift;
    dx += du;
  }
  grads.w_in += dx.transpose() * tape.input;
  grads.b_in += dx.colwise().sum().transpose();
}

}  // namespace

Vector denoiser_flatten(const Denoiser& d) {
  Vector flat(static_cast<Eigen::Index>(d.param_count()));
  Eigen::Index pos = 0;
  append(flat, pos, d.w_in);
  append(flat, pos, d.b_in);
  for (const auto& b : d.blocks) {
    append(flat, pos, b.time_proj);
    append(flat, pos, b.time_bias);
    append(flat, pos, b.kernel);
    append(flat, pos, b.conv_bias);
  }
  append(flat, pos, d.w_out);
  append(flat, pos, d.b_out);
  return flat;
}

void denoiser_unflatten(Denoiser& d, const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(d.param_count()))
    fail(ErrorCode::dimension_mismatch, "parameter vector has wrong length");
  Eigen::Index pos = 0;
  take(flat, pos, d.w_in);
  take(flat, pos, d.b_in);
  for (auto& b : d.blocks) {
    take(flat, pos, b.time_proj);
    take(flat, pos, b.time_bias);
    take(flat, pos, b.kernel);
    take(flat, pos, b.conv_bias);
  }
  take(flat, pos, d.w_out);
  take(flat, pos, d.b_out);
}

Matrix denoiser_forward(const Denoiser& d, const Matrix& ht, int t) {
  return forward_impl(d, ht, t, nullptr);
}

double denoiser_mse_and_grads(const Denoiser& d, const Matrix& ht, int t,
                              const Matrix& h0, Denoiser& grads) {
  if (h0.rows() != ht.rows() || h0.cols() != ht.cols())
    fail(ErrorCode::dimension_mismatch, "target shape differs from input shape");
  DenoiserTape tape;
  const Matrix out = forward_impl(d, ht, t, &tape);
  const Matrix diff = out - h0;
  const double denom = static_cast<double>(diff.size());
  backward_impl(d, tape, Matrix(2.0 * diff / denom), grads);
  return diff.squaredNorm() / denom;
}

namespace {

/// Adam over the flattened parameter vector.
struct Adam {
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vector m, v;
  long step = 0;

  explicit Adam(Eigen::Index n, double lr_in)
      : lr(lr_in), m(Vector::Zero(n)), v(Vector::Zero(n)) {}

  void update(Vector& params, const Vector& grad) {
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, step);
    const double c2 = 1.0 - std::pow(beta2, step);
    params -= (lr / c1) * m.cwiseQuotient(
                  ((v / c2).cwiseSqrt().array() + eps).matrix());
  }
};

/// Crops or cyclically pads labels to exactly `len` frames.
std::vector<int> fit_length(const std::vector<int>& labels, int len, long offset) {
  std::vector<int> out(static_cast<std::size_t>(len));
  const long n = static_cast<long>(labels.size());
  for (int i = 0; i < len; ++i)
    out[static_cast<std::size_t>(i)] =
        labels[static_cast<std::size_t>((offset + i) % n)];
  return out;
}

}  // namespace

DiffusionTrainResult train_diffusion(const std::vector<PhaseSequence>& seqs,
                                     int k, const DiffusionTrainConfig& cfg) {
  if (seqs.empty()) fail(ErrorCode::empty_dataset, "no training sequences");
  for (const auto& s : seqs)
    if (s.labels.empty()) fail(ErrorCode::empty_dataset, "empty training sequence");

  DiffusionTrainResult result;
  result.model.schedule =
      build_noise_schedule(cfg.T, cfg.beta_1, cfg.beta_T, ScheduleKind::linear);
  result.model.denoiser = init_denoiser(k, cfg.arch, cfg.seed);
  result.model.tau_dec = cfg.tau_dec;
  Denoiser& den = result.model.denoiser;
  const NoiseSchedule& sched = result.model.schedule;

  const int n = static_cast<int>(seqs.size());

  // Fixed evaluation set: leading crop of every sequence with frozen
  // (t, eps) draws, so the per-epoch trace is comparable across epochs.
  const int eval_count = std::min(n, 64);
  std::vector<Matrix> eval_h0(static_cast<std::size_t>(eval_count));
  std::vector<Matrix> eval_ht(static_cast<std::size_t>(eval_count));
  std::vector<int> eval_t(static_cast<std::size_t>(eval_count));
  {
    Rng eval_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int i = 0; i < eval_count; ++i) {
      eval_h0[i] = encode_labels(fit_length(seqs[i].labels, cfg.train_len, 0), k);
      eval_t[i] = static_cast<int>(eval_rng.uniform_int(1, cfg.T));
      eval_ht[i] = forward_noise(eval_h0[i], eval_t[i], sched, eval_rng);
    }
  }
  auto eval_loss = [&]() {
    double total = 0.0;
    for (int i = 0; i < eval_count; ++i) {
      const Matrix out = denoiser_forward(den, eval_ht[i], eval_t[i]);
      total += (out - eval_h0[i]).squaredNorm() / eval_h0[i].size();
    }
    return total / eval_count;
  };

  result.loss_trace.push_back(eval_loss());

  Rng rng(cfg.seed + 1);
  Vector params = denoiser_flatten(den);
  Adam adam(params.size(), cfg.lr);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);
    for (int begin = 0; begin < n; begin += cfg.batch) {
      const int count = std::min(cfg.batch, n - begin);
      Denoiser grads = denoiser_like_zero(den);
      double batch_loss = 0.0;
      for (int j = 0; j < count; ++j) {
        const auto& labels = seqs[static_cast<std::size_t>(order[begin + j])].labels;
        const long max_offset =
            std::max<long>(0, static_cast<long>(labels.size()) - cfg.train_len);
        const long offset = max_offset > 0 ? rng.uniform_int(0, max_offset) : 0;
        const Matrix h0 = encode_labels(fit_length(labels, cfg.train_len, offset), k);
        const int t = static_cast<int>(rng.uniform_int(1, cfg.T));
        const Matrix ht = forward_noise(h0, t, sched, rng);
        batch_loss += denoiser_mse_and_grads(den, ht, t, h0, grads);
      }
      if (!std::isfinite(batch_loss))
        fail(ErrorCode::non_finite_loss, "diffusion loss diverged");
      Vector grad_vec = denoiser_flatten(grads) / count;
      adam.update(params, grad_vec);
      denoiser_unflatten(den, params);
    }
    result.loss_trace.push_back(eval_loss());
  }
  return result;
}

int estimate_noise_step(const Matrix& p, const NoiseSchedule& sched, int t_cap) {
  require_prob_matrix(p);
  const double log_k = std::log(static_cast<double>(p.cols()));
  if (log_k <= 0.0) return 0;
  const double mean_entropy = row_entropies(p).mean();
  const int t = static_cast<int>(std::llround(sched.T * mean_entropy / log_k));
  return std::clamp(t, 0, t_cap);
}

Matrix refine_sequence(const DiffusionModel& m, const Matrix& p, int t_star,
                       bool renoise, Rng* rng) {
  const NoiseSchedule& sched = m.schedule;
  if (t_star < 0 || t_star > sched.T)
    fail(ErrorCode::step_out_of_range,
         "t_star " + std::to_string(t_star) + " outside [0, " +
             std::to_string(sched.T) + "]");
  if (t_star == 0) return p;

  Matrix h = encode_probs(p);
  if (renoise) {
    if (!rng)
      fail(ErrorCode::invalid_range, "renoise requires a random generator");
    h = forward_noise(h, t_star, sched, *rng);
  }

  Matrix h0_hat;
  for (int t = t_star; t >= 1; --t) {
    h0_hat = denoiser_forward(m.denoiser, h, t);
    const double beta = sched.beta(t - 1);
    if (beta == 0.0) continue;
    const double abar = sched.alpha_bar_at(t);
    const double abar_prev = sched.alpha_bar_at(t - 1);
    const double c_clean = std::sqrt(abar_prev) * beta / (1.0 - abar);
    const double c_noisy = std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar);
    h = c_clean * h0_hat + c_noisy * h;
  }
  return softmax_rows(h0_hat / m.tau_dec);
}

void save_diffusion_model(const DiffusionModel& m,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Denoiser& d = m.denoiser;
  json header = {{"k", d.k},
                 {"T", m.schedule.T},
                 {"beta_1", m.schedule.beta(0)},
                 {"beta_T", m.schedule.beta(m.schedule.T - 1)},
                 {"schedule", "linear"},
                 {"width", d.cfg.width},
                 {"blocks", d.cfg.blocks},
                 {"kernel", d.cfg.kernel},
                 {"time_embed", d.cfg.time_embed},
                 {"tau_dec", m.tau_dec}};
  std::ofstream out(dir / "model.json");
  if (!out) fail(ErrorCode::io_error, "cannot write " + (dir / "model.json").string());
  out << header.dump(2) << "\n";
  const Vector params = denoiser_flatten(d);
  Matrix row(1, params.size());
  row.row(0) = params.transpose();
  save_embedding_matrix(row, dir / "params.json", dir / "params.bin");
}

DiffusionModel load_diffusion_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) fail(ErrorCode::io_error, "cannot open " + (dir / "model.json").string());
  json header;
  try {
    in >> header;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::malformed_header, std::string("model.json: ") + e.what());
  }
  DiffusionModel m;
  DenoiserConfig cfg;
  cfg.width = header.at("width").get<int>();
  cfg.blocks = header.at("blocks").get<int>();
  cfg.kernel = header.at("kernel").get<int>();
  cfg.time_embed = header.at("time_embed").get<int>();
  m.denoiser = init_denoiser(header.at("k").get<int>(), cfg, 0);
  m.schedule = build_noise_schedule(header.at("T").get<int>(),
                                    header.at("beta_1").get<double>(),
                                    header.at("beta_T").get<double>());
  m.tau_dec = header.at("tau_dec").get<double>();
  const Matrix row = load_embedding_matrix(dir / "params.json", dir / "params.bin");
  denoiser_unflatten(m.denoiser, row.row(0).transpose());
  return m;
}

}  // namespace spa
