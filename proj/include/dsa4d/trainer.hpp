// Optimization loop: ray batching, temporally perturbed L1 rendering loss,
// vessel-probability sparsity regularizer, progressive level unlocking and
// Adam stepping.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dsa4d/dataset_io.hpp"
#include "dsa4d/fields.hpp"
#include "dsa4d/hash_grid.hpp"
#include "dsa4d/mlp.hpp"
#include "dsa4d/parallel.hpp"
#include "dsa4d/renderer.hpp"

namespace dsa4d {

struct AblationFlags {
  bool use_vessel_prob = true;       // false: naive mu_s + mu_d composition
  bool use_progressive = true;       // false: all levels active from the start
  bool use_temporal_perturb = true;  // false: render at the measured timestamp
  bool use_lreg = true;              // false: no sparsity term on p
};

struct TrainConfig {
  int ray_batch = 2048;
  int reg_points = 10000;
  double lambda_reg = 0.01;
  /// Iteration from which the sparsity term is applied (0: from the start).
  int lreg_start = 0;
  double kernel_k = 1.0;
  int iterations = 100000;
  std::uint64_t seed = 0;
  QuadratureConfig quad{512, true};
  QuadratureConfig eval_quad{1024, false};
  ProgressiveSchedule schedule;
  AdamConfig adam;
  AblationFlags ablation;
  FieldSetConfig fields;

  int rays_per_chunk = 16;
  GradAccumulation grad_mode = GradAccumulation::PerWorker;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  int log_every = 100;

  void validate() const;
  Composition composition() const {
    return ablation.use_vessel_prob ? Composition::Guided : Composition::Naive;
  }
};

/// One batch of training rays.
struct RayBatch {
  std::vector<Ray> rays;          // s_near == s_far marks a ray that misses the box
  std::vector<int> frames;        // index into the dataset's frame list
  std::vector<double> t;          // measured timestamp
  std::vector<double> t_render;   // timestamp used for rendering (perturbed or equal to t)
  std::vector<double> targets;    // measured pixel value

  std::size_t size() const { return rays.size(); }
};

/// Precomputed per-frame poses for fast ray generation.
class RaySampler {
 public:
  explicit RaySampler(const Dataset& ds);
  /// count rays uniform over (frame, pixel) pairs, with replacement.
  RayBatch sample(int count, std::mt19937_64& rng) const;
  Ray ray(int frame, int col, int row) const;
  int num_frames() const { return static_cast<int>(poses_.size()); }

 private:
  const Dataset* ds_;
  std::vector<FramePose> poses_;
};

RayBatch sample_ray_batch(const Dataset& ds, int count, std::mt19937_64& rng);

/// t + tau with tau ~ N(0, (k * delta_t)^2), clamped to [0,1]. k == 0 returns t.
double perturb_timestamp(double t, double delta_t, double k, std::mt19937_64& rng);

/// Spacing of the (sorted) training timestamps; 0 for fewer than two frames.
double training_delta_t(std::span<const double> timestamps);

/// Uniform points in the normalized cube.
std::vector<Vec3> sample_reg_points(int count, std::mt19937_64& rng);

struct LossTerms {
  double l1 = 0.0;
  double lreg = 0.0;
  double total = 0.0;
};

struct LossOptions {
  double lambda_reg = 0.01;
  bool use_lreg = true;
  int rays_per_chunk = 16;
  GradAccumulation grad_mode = GradAccumulation::PerWorker;
  std::uint64_t jitter_seed = 0;
  Exec exec = Exec::Parallel;
  /// Overrides the P output everywhere (tests of routing and regularizer).
  std::optional<double> forced_p;
};

/// L = mean_r |I_hat(r, t_render) - I(r, t)| + lambda * mean_x p(x). Adds
/// dL/d(params) into the fields' gradient buffers (they are not zeroed first).
template <typename Real>
LossTerms compute_loss(FieldSet<Real>& fields, const Aabb& box, const RayBatch& batch,
                       std::span<const Vec3> reg_points, const QuadratureConfig& quad,
                       const LossOptions& opts);

struct LossRecord {
  int iteration = 0;
  double l1 = 0.0;
  double lreg = 0.0;
  double total = 0.0;
  double lr = 0.0;
  int active_levels = 0;
};

void write_loss_csv(const std::string& path, std::span<const LossRecord> log);

template <typename Real>
class Trainer {
 public:
  Trainer(const Dataset& train_set, const TrainConfig& cfg);

  /// Runs one optimization step at the given 0-based iteration.
  LossRecord step(int iteration);
  /// Runs iterations [start, cfg.iterations); the callback sees every record.
  void run(const std::function<void(const LossRecord&)>& on_step = {}, int start = 0);

  FieldSet<Real>& fields() { return fields_; }
  const FieldSet<Real>& fields() const { return fields_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<LossRecord>& log() const { return log_; }
  double delta_t() const { return delta_t_; }
  std::vector<double> timestamps() const { return ds_->timestamps(); }

 private:
  const Dataset* ds_;
  TrainConfig cfg_;
  FieldSet<Real> fields_;
  RaySampler sampler_;
  std::vector<AdamState<Real>> adam_;
  std::mt19937_64 rng_;
  double delta_t_ = 0.0;
  std::vector<LossRecord> log_;
};

/// Mixes a base seed with two counters (SplitMix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace dsa4d
