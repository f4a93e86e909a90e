#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "spa/linalg.hpp"
#include "spa/rng.hpp"
#include "spa/task_graph.hpp"

namespace spa {

/// Forward-process variances beta_t for t in [1, T] and the cumulative
/// signal-retention products alpha_bar_t = prod_{s<=t} (1 - beta_s).
struct NoiseSchedule {
  int T = 0;
  Vector beta;       // beta(t-1) is beta_t
  Vector alpha_bar;  // alpha_bar(t-1) is alpha_bar_t

  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar(t - 1); }
};

enum class ScheduleKind { linear };

NoiseSchedule build_noise_schedule(int T, double beta_1, double beta_T,
                                   ScheduleKind kind = ScheduleKind::linear);

/// Label sequences enter the hidden state space as signed one-hot rows:
/// +1 on the labeled phase, -1 elsewhere, so the Gaussian forward process
/// is symmetric around zero.
Matrix encode_labels(const std::vector<int>& labels, int k);
Matrix encode_probs(const Matrix& p);
std::vector<int> decode_phases(const Matrix& p);

/// Closed-form marginal H_t = sqrt(abar_t) H_0 + sqrt(1 - abar_t) eps.
Matrix forward_noise(const Matrix& h0, int t, const NoiseSchedule& sched,
                     Rng& rng);

struct DenoiserConfig {
  int width = 64;
  int blocks = 4;
  int kernel = 9;
  int time_embed = 64;
};

struct DenoiserBlock {
  Matrix time_proj;  // width x time_embed
  Vector time_bias;  // width
  Matrix kernel;     // width x (taps * width), tap-major column blocks
  Vector conv_bias;  // width
};

/// Residual temporal-convolution network predicting the clean sequence
/// H_0 from a noisy state and its step index. Handles any sequence length.
/// The final projection sees both the processed features and the raw input
/// (channel concat) and starts at zero, so a fresh model outputs zeros.
struct Denoiser {
  int k = 0;
  DenoiserConfig cfg;
  Matrix w_in;  // width x k
  Vector b_in;  // width
  std::vector<DenoiserBlock> blocks;
  Matrix w_out;  // k x (width + k), zero-initialized
  Vector b_out;  // k, zero-initialized

  std::size_t param_count() const;
};

Denoiser init_denoiser(int k, const DenoiserConfig& cfg, std::uint64_t seed);

Vector denoiser_flatten(const Denoiser& d);
void denoiser_unflatten(Denoiser& d, const Vector& flat);

/// Zero-valued gradient container shaped like `d`.
Denoiser denoiser_like_zero(const Denoiser& d);

Matrix denoiser_forward(const Denoiser& d, const Matrix& ht, int t);

/// MSE between the denoiser output on `ht` and the clean target `h0`,
/// with parameter gradients accumulated into `grads`.
double denoiser_mse_and_grads(const Denoiser& d, const Matrix& ht, int t,
                              const Matrix& h0, Denoiser& grads);

struct DiffusionModel {
  NoiseSchedule schedule;
  Denoiser denoiser;
  double tau_dec = 0.5;

  int k() const { return denoiser.k; }
};

struct DiffusionTrainConfig {
  int epochs = 20;
  int batch = 128;
  double lr = 1e-4;  // Adam step size
  int train_len = 512;
  int T = 100;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  DenoiserConfig arch;
  double tau_dec = 0.5;
  std::uint64_t seed = 0;
};

struct DiffusionTrainResult {
  DiffusionModel model;
  /// Fixed-noise evaluation loss at initialization and after each epoch.
  std::vector<double> loss_trace;
};

DiffusionTrainResult train_diffusion(const std::vector<PhaseSequence>& seqs,
                                     int k, const DiffusionTrainConfig& cfg);

/// t_star = round(T * mean_row_entropy / ln K), clamped to [0, t_cap].
int estimate_noise_step(const Matrix& p, const NoiseSchedule& sched, int t_cap);

/// Runs the reverse chain from step t_star down to 1 starting at the signed
/// encoding of `p`, using the posterior mean of the clean-sequence
/// parameterization at each step, then maps the final clean estimate back to
/// probabilities with a tempered row softmax. t_star = 0 returns `p`
/// unchanged. `renoise` draws fresh forward noise onto the start state and
/// needs an rng.
Matrix refine_sequence(const DiffusionModel& m, const Matrix& p, int t_star,
                       bool renoise = false, Rng* rng = nullptr);

void save_diffusion_model(const DiffusionModel& m,
                          const std::filesystem::path& dir);
DiffusionModel load_diffusion_model(const std::filesystem::path& dir);

}  // namespace spa
