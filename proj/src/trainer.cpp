#include "dsa4d/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dsa4d/errors.hpp"

namespace dsa4d {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (ray_batch < 1) fail("ray_batch must be positive");
  if (reg_points < 1) fail("reg_points must be positive");
  if (!(lambda_reg >= 0)) fail("lambda_reg must be non-negative");
  if (lreg_start < 0) fail("lreg_start must be non-negative");
  if (!(kernel_k >= 0)) fail("kernel_k must be non-negative");
  if (iterations < 1) fail("iterations must be positive");
  if (rays_per_chunk < 1) fail("rays_per_chunk must be positive");
  if (schedule.initial_levels < 1) fail("schedule.initial_levels must be >= 1");
  if (schedule.unlock_every < 1) fail("schedule.unlock_every must be >= 1");
  if (adam.decay_every < 1) fail("adam.decay_every must be >= 1");
  try {
    quad.validate();
    eval_quad.validate();
    fields.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

RaySampler::RaySampler(const Dataset& ds) : ds_(&ds) {
  if (ds.images.empty()) throw std::invalid_argument("ray sampler: dataset has no frames");
  for (const FrameRecord& f : ds.manifest.frames) {
    poses_.push_back(pose_for_frame(ds.manifest.geometry, f.index));
  }
}

Ray RaySampler::ray(int frame, int col, int row) const {
  const auto r = ray_for_pixel(ds_->manifest.geometry, poses_[frame], col, row);
  if (r) return *r;
  Ray miss = pixel_line(ds_->manifest.geometry, poses_[frame], col + 0.5, row + 0.5);
  miss.s_near = miss.s_far = 0.0;
  return miss;
}

RayBatch RaySampler::sample(int count, std::mt19937_64& rng) const {
  const ScanGeometry& g = ds_->manifest.geometry;
  std::uniform_int_distribution<int> pick_frame(0, num_frames() - 1);
  std::uniform_int_distribution<int> pick_col(0, g.det_cols - 1);
  std::uniform_int_distribution<int> pick_row(0, g.det_rows - 1);
  RayBatch b;
  b.rays.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int f = pick_frame(rng);
    const int col = pick_col(rng);
    const int row = pick_row(rng);
    b.rays.push_back(ray(f, col, row));
    b.frames.push_back(f);
    b.t.push_back(poses_[f].t_norm);
    b.targets.push_back(ds_->images[f].at(col, row));
  }
  b.t_render = b.t;
  return b;
}

RayBatch sample_ray_batch(const Dataset& ds, int count, std::mt19937_64& rng) {
  return RaySampler(ds).sample(count, rng);
}

double perturb_timestamp(double t, double delta_t, double k, std::mt19937_64& rng) {
  const double sigma = k * delta_t;
  if (!(sigma > 0.0)) return t;
  std::normal_distribution<double> tau(0.0, sigma);
  return std::clamp(t + tau(rng), 0.0, 1.0);
}

double training_delta_t(std::span<const double> timestamps) {
  if (timestamps.size() < 2) return 0.0;
  const auto [lo, hi] = std::minmax_element(timestamps.begin(), timestamps.end());
  return (*hi - *lo) / static_cast<double>(timestamps.size() - 1);
}

std::vector<Vec3> sample_reg_points(int count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts(count);
  for (Vec3& p : pts) {
    const double a = u(rng);
    const double b = u(rng);
    const double c = u(rng);
    p = Vec3(a, b, c);
  }
  return pts;
}

template <typename Real>
LossTerms compute_loss(FieldSet<Real>& fields, const Aabb& box, const RayBatch& batch,
                       std::span<const Vec3> reg_points, const QuadratureConfig& quad,
                       const LossOptions& opts) {
  const int nrays = static_cast<int>(batch.size());
  const int rpc = std::max(1, opts.rays_per_chunk);
  const int ray_chunks = (nrays + rpc - 1) / rpc;
  constexpr int kRegChunk = 1024;
  const bool guided = fields.mode() == Composition::Guided;
  const bool do_reg = opts.use_lreg && guided && !reg_points.empty();
  const int nreg = do_reg ? static_cast<int>(reg_points.size()) : 0;
  const int reg_chunks = (nreg + kRegChunk - 1) / kRegChunk;
  const int total_chunks = ray_chunks + reg_chunks;

  std::vector<double> chunk_l1(ray_chunks, 0.0);
  std::vector<double> chunk_p(reg_chunks, 0.0);
  const double inv_b = nrays > 0 ? 1.0 / nrays : 0.0;
  const double reg_scale = nreg > 0 ? opts.lambda_reg / nreg : 0.0;

  auto run_chunk = [&](int c, GradRefs<Real> dest, GradAccumulation mode, RenderCache<Real>& rc,
                       FieldBatch<Real>& pb) {
    if (c < ray_chunks) {
      const int lo = c * rpc;
      const int hi = std::min(nrays, lo + rpc);
      const std::span<const Ray> rays(batch.rays.data() + lo, hi - lo);
      const std::span<const double> times(batch.t_render.data() + lo, hi - lo);
      std::vector<double> pred(hi - lo), grad(hi - lo);
      rc.batch.forced_p = opts.forced_p ? std::optional<Real>(static_cast<Real>(*opts.forced_p))
                                        : std::nullopt;
      render_forward(fields, box, rays, times, quad, Integrand::MuC,
                     mix_seed(opts.jitter_seed, static_cast<std::uint64_t>(c)), rc, pred);
      double sum = 0.0;
      for (int i = 0; i < hi - lo; ++i) {
        const double r = pred[i] - batch.targets[lo + i];
        sum += std::abs(r);
        grad[i] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) * inv_b;
      }
      chunk_l1[c] = sum;
      render_backward(fields, rc, grad, dest, mode);
    } else {
      const int rc_idx = c - ray_chunks;
      const int lo = rc_idx * kRegChunk;
      const int hi = std::min(nreg, lo + kRegChunk);
      pb.resize(hi - lo);
      pb.forced_p = opts.forced_p ? std::optional<Real>(static_cast<Real>(*opts.forced_p))
                                  : std::nullopt;
      for (int j = lo; j < hi; ++j) pb.set_point(j - lo, reg_points[j], 0.0);
      fields.forward(pb, FieldNeeds{false, false, true});
      double sum = 0.0;
      for (int j = 0; j < hi - lo; ++j) sum += pb.p[j];
      chunk_p[rc_idx] = sum;
      if (!pb.forced_p) {
        std::vector<Real> dp(hi - lo, static_cast<Real>(reg_scale));
        fields.backward_components(pb, {}, {}, dp, dest, mode);
      }
    }
  };

  const int workers = opts.exec == Exec::Serial ? 1 : std::min(num_workers(), total_chunks);
  if (workers <= 1 || opts.grad_mode == GradAccumulation::Atomic) {
    const GradRefs<Real> dest = fields.grad_refs();
    if (workers <= 1) {
      RenderCache<Real> rc;
      FieldBatch<Real> pb;
      for (int c = 0; c < total_chunks; ++c) run_chunk(c, dest, GradAccumulation::PerWorker, rc, pb);
    } else {
#pragma omp parallel num_threads(workers)
      {
        RenderCache<Real> rc;
        FieldBatch<Real> pb;
#pragma omp for schedule(dynamic, 1)
        for (int c = 0; c < total_chunks; ++c) run_chunk(c, dest, GradAccumulation::Atomic, rc, pb);
      }
    }
  } else {
    // Private buffers merged in worker order: deterministic for a fixed worker count.
    std::vector<FieldGrads<Real>> local(workers);
#pragma omp parallel num_threads(workers)
    {
      const int w = omp_get_thread_num();
      local[w] = fields.make_grad_buffer();
      RenderCache<Real> rc;
      FieldBatch<Real> pb;
#pragma omp for schedule(static, 1)
      for (int c = 0; c < total_chunks; ++c) run_chunk(c, refs(local[w]), GradAccumulation::PerWorker, rc, pb);
    }
    for (const auto& g : local) fields.accumulate(g);
  }

  LossTerms terms;
  for (double s : chunk_l1) terms.l1 += s;
  terms.l1 *= inv_b;
  if (do_reg) {
    double sp = 0.0;
    for (double s : chunk_p) sp += s;
    terms.lreg = sp / nreg;
  }
  terms.total = terms.l1 + (do_reg ? opts.lambda_reg * terms.lreg : 0.0);
  return terms;
}

void write_loss_csv(const std::string& path, std::span<const LossRecord> log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write loss log " + path);
  out << "iteration,l1,lreg,total,lr,active_levels\n";
  out.precision(9);
  for (const LossRecord& r : log) {
    out << r.iteration << ',' << r.l1 << ',' << r.lreg << ',' << r.total << ',' << r.lr << ','
        << r.active_levels << '\n';
  }
}

template <typename Real>
Trainer<Real>::Trainer(const Dataset& train_set, const TrainConfig& cfg)
    : ds_(&train_set),
      cfg_(cfg),
      fields_([&] {
        cfg.validate();
        FieldSetConfig fc = cfg.fields;
        fc.mode = cfg.composition();
        return FieldSet<Real>(fc, cfg.seed);
      }()),
      sampler_(train_set),
      rng_(mix_seed(cfg.seed, 0x7261797375ULL)) {
  for (const auto& g : fields_.param_groups()) adam_.emplace_back(g.params.size());
  const std::vector<double> ts = train_set.timestamps();
  delta_t_ = training_delta_t(ts);
}

template <typename Real>
LossRecord Trainer<Real>::step(int iteration) {
  const int levels = cfg_.fields.static_grid.levels;
  const int active = cfg_.ablation.use_progressive
                         ? active_levels_at(iteration, cfg_.schedule, levels)
                         : levels;
  fields_.set_active_levels(active);

  RayBatch batch = sampler_.sample(cfg_.ray_batch, rng_);
  if (cfg_.ablation.use_temporal_perturb) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch.t_render[i] = perturb_timestamp(batch.t[i], delta_t_, cfg_.kernel_k, rng_);
    }
  }
  const bool reg = cfg_.ablation.use_lreg && cfg_.ablation.use_vessel_prob && iteration >= cfg_.lreg_start;
  std::vector<Vec3> pts;
  if (reg) pts = sample_reg_points(cfg_.reg_points, rng_);

  LossOptions opts;
  opts.lambda_reg = cfg_.lambda_reg;
  opts.use_lreg = reg;
  opts.rays_per_chunk = cfg_.rays_per_chunk;
  opts.grad_mode = cfg_.grad_mode;
  opts.jitter_seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(iteration), 0x6a6974ULL);
  fields_.zero_grads();
  const LossTerms terms =
      compute_loss(fields_, ds_->manifest.geometry.aabb, batch, pts, cfg_.quad, opts);

  LossRecord rec;
  rec.iteration = iteration;
  rec.l1 = terms.l1;
  rec.lreg = terms.lreg;
  rec.total = terms.total;
  rec.lr = cfg_.adam.lr(iteration);
  rec.active_levels = active;
  if (!std::isfinite(terms.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << iteration << " (lr " << rec.lr << ", L1 " << terms.l1
        << ", Lreg " << terms.lreg << ")";
    throw NumericalError(msg.str());
  }
  auto groups = fields_.param_groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    adam_step(groups[g].params, groups[g].grads, adam_[g], iteration, cfg_.adam);
  }
  fields_.mark_updated();
  log_.push_back(rec);
  return rec;
}

template <typename Real>
void Trainer<Real>::run(const std::function<void(const LossRecord&)>& on_step, int start) {
  for (int it = start; it < cfg_.iterations; ++it) {
    const LossRecord rec = step(it);
    if (on_step) on_step(rec);
  }
  // Leave the model in its final (fully unlocked) evaluation state.
  const int levels = cfg_.fields.static_grid.levels;
  fields_.set_active_levels(cfg_.ablation.use_progressive
                                ? active_levels_at(cfg_.iterations - 1, cfg_.schedule, levels)
                                : levels);
}

template LossTerms compute_loss<float>(FieldSet<float>&, const Aabb&, const RayBatch&,
                                       std::span<const Vec3>, const QuadratureConfig&,
                                       const LossOptions&);
template LossTerms compute_loss<double>(FieldSet<double>&, const Aabb&, const RayBatch&,
                                        std::span<const Vec3>, const QuadratureConfig&,
                                        const LossOptions&);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace dsa4d
