#include "spa/bench.hpp"

#include <cmath>
#include <string>

namespace spa {

namespace {

Vector random_unit(Rng& rng, int d) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Vector v = rng.normal_vector(d);
    const double n = v.norm();
    if (n > 1e-9) return v / n;
  }
  fail(ErrorCode::packing_failure, "could not draw a unit direction");
}

/// Unit vector orthogonal to p, spanning the rotation plane.
Vector orthogonal_unit(Rng& rng, const Vector& p) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Vector u = rng.normal_vector(static_cast<int>(p.size()));
    u -= u.dot(p) * p;
    const double n = u.norm();
    if (n > 1e-9) return u / n;
  }
  fail(ErrorCode::packing_failure, "could not find an orthogonal direction");
}

}  // namespace

SyntheticWorld make_synthetic_world(int k, int d, std::uint64_t seed,
                                    double min_separation,
                                    double modality_gap) {
  if (k < 1 || d < 1) fail(ErrorCode::invalid_range, "k and d must be >= 1");
  if (min_separation <= -1.0 || min_separation > 1.0)
    fail(ErrorCode::invalid_range, "min_separation must lie in (-1, 1]");
  if (modality_gap != 0.0 && d < 2)
    fail(ErrorCode::invalid_range, "modality gap needs d >= 2");

  SyntheticWorld w;
  w.k = k;
  w.d = d;
  w.modality_gap = modality_gap;
  w.seed = seed;
  w.vision_prototypes.resize(k, d);

  Rng rng(seed);
  const int max_attempts = 10000;
  for (int i = 0; i < k; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < max_attempts && !placed; ++attempt) {
      const Vector cand = random_unit(rng, d);
      placed = true;
      for (int j = 0; j < i; ++j)
        if (w.vision_prototypes.row(j).dot(cand) > min_separation) {
          placed = false;
          break;
        }
      if (placed) w.vision_prototypes.row(i) = cand.transpose();
    }
    if (!placed)
      fail(ErrorCode::packing_failure,
           "could not place prototype " + std::to_string(i) + " with cosine <= " +
               std::to_string(min_separation));
  }

  if (modality_gap == 0.0) {
    w.text_prototypes = w.vision_prototypes;
  } else {
    w.text_prototypes.resize(k, d);
    const double c = std::cos(modality_gap);
    const double s = std::sin(modality_gap);
    for (int i = 0; i < k; ++i) {
      const Vector p = w.vision_prototypes.row(i).transpose();
      const Vector u = orthogonal_unit(rng, p);
      w.text_prototypes.row(i) = (c * p + s * u).transpose();
    }
  }
  return w;
}

VideoSample sample_video(const SyntheticWorld& world, const TaskGraph& g,
                         int max_len, double noise_sigma, double drift,
                         Rng& rng) {
  if (g.k() != world.k)
    fail(ErrorCode::dimension_mismatch,
         "graph has " + std::to_string(g.k()) + " phases, world has " +
             std::to_string(world.k));

  VideoSample video;
  video.labels = synthesize_sequence(g, rng, max_len).labels;

  Vector drift_vec = Vector::Zero(world.d);
  if (drift != 0.0) drift_vec = drift * random_unit(rng, world.d);

  const Eigen::Index len = static_cast<Eigen::Index>(video.labels.size());
  video.embeddings.resize(len, world.d);
  for (Eigen::Index i = 0; i < len; ++i) {
    Vector frame =
        world.vision_prototypes.row(video.labels[static_cast<std::size_t>(i)])
            .transpose() +
        drift_vec;
    if (noise_sigma > 0.0) frame += noise_sigma * rng.normal_vector(world.d);
    video.embeddings.row(i) = frame.transpose();
  }
  video.embeddings = l2_normalized(video.embeddings);
  return video;
}

FewShotSplit make_fewshot_split(const SyntheticWorld& world, int shots,
                                double noise_sigma, Rng& rng) {
  if (shots < 1) fail(ErrorCode::invalid_range, "shots must be >= 1");

  Matrix embeddings(static_cast<Eigen::Index>(world.k) * shots, world.d);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(world.k) * shots);
  Eigen::Index row = 0;
  for (int phase = 0; phase < world.k; ++phase)
    for (int s = 0; s < shots; ++s, ++row) {
      Vector sample = world.vision_prototypes.row(phase).transpose();
      if (noise_sigma > 0.0) sample += noise_sigma * rng.normal_vector(world.d);
      embeddings.row(row) = sample.transpose();
      labels.push_back(phase);
    }
  embeddings = l2_normalized(embeddings);

  FewShotSplit split;
  split.refs = make_reference_set(embeddings, labels, world.k);
  split.labels = std::move(labels);
  return split;
}

}  // namespace spa
