// Static (S), dynamic (D) and vessel-probability (P) implicit fields and
// their composition into contrast attenuation.
//
//   guided:  mu_c = (1 - p) mu_s + p mu_d
//   naive:   mu_c = mu_s + mu_d          (P stays allocated but unused)
//
// All queries take normalized coordinates x in [0,1]^3 and t in [0,1].
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dsa4d/geometry.hpp"
#include "dsa4d/hash_grid.hpp"
#include "dsa4d/mlp.hpp"

namespace dsa4d {

enum class Composition { Guided, Naive };

struct FieldSetConfig {
  HashGridConfig static_grid = HashGridConfig::spatial_default();
  HashGridConfig dynamic_grid = HashGridConfig::temporal_default();
  HashGridConfig prob_grid = HashGridConfig::spatial_default();
  int hidden_dim = 128;
  int num_layers = 3;
  Composition mode = Composition::Guided;
  double table_init = 1e-4;
  double final_layer_scale = 0.1;
  /// Attenuation (mm^-1) per unit of S/D network output.
  double mu_scale = 0.01;
  /// Decoders without bias vectors: a shared offset cannot switch off the
  /// ReLU output everywhere at once, since the output then scales with the
  /// local hash features.
  bool decoder_bias = false;
  /// Non-negative output-layer weights for S and D at initialization, so the
  /// attenuation starts >= 0 (not clipped) wherever a hidden unit is active.
  bool nonneg_output_init = true;
  OutputActivation mu_activation = OutputActivation::ReLU;

  void validate() const;
};

/// Which field networks a forward pass evaluates.
struct FieldNeeds {
  bool static_field = true;
  bool dynamic_field = true;
  bool prob_field = true;
};

/// Flat gradient (or parameter) storage mirroring a FieldSet, used for
/// per-worker accumulation.
template <typename Real>
struct FieldGrads {
  std::vector<Real> s_grid, d_grid, p_grid, s_mlp, d_mlp, p_mlp;

  void zero();
  /// Adds other into *this element-wise.
  void add(const FieldGrads& other);
  std::vector<std::vector<Real>*> parts() { return {&s_grid, &d_grid, &p_grid, &s_mlp, &d_mlp, &p_mlp}; }
  std::vector<const std::vector<Real>*> parts() const {
    return {&s_grid, &d_grid, &p_grid, &s_mlp, &d_mlp, &p_mlp};
  }
};

/// Gradient destinations for a backward pass.
template <typename Real>
struct GradRefs {
  std::span<Real> s_grid, d_grid, p_grid, s_mlp, d_mlp, p_mlp;
};

template <typename Real>
GradRefs<Real> refs(FieldGrads<Real>& g) {
  return {g.s_grid, g.d_grid, g.p_grid, g.s_mlp, g.d_mlp, g.p_mlp};
}

/// Batched query workspace. Fill with set_point, run FieldSet::forward, then
/// FieldSet::backward with matching upstream gradients.
template <typename Real>
struct FieldBatch {
  int n = 0;
  std::vector<Real> x;   // 3 x n
  std::vector<Real> xt;  // 4 x n
  MlpCache<Real> s_cache, d_cache, p_cache;
  std::vector<Real> mu_s, mu_d, p, mu_c;
  /// Replaces the P network output when set (tests and ablations).
  std::optional<Real> forced_p;
  FieldNeeds evaluated;
  std::uint64_t version = 0;
  bool valid = false;

  void resize(int count);
  /// Clamps x to [0,1]^3 and t to [0,1].
  void set_point(int j, const Vec3& unit_x, double t);
};

struct PointQuery {
  double mu_s = 0.0;
  double mu_d = 0.0;
  double p = 0.0;
  double mu_c = 0.0;
  double static_part = 0.0;   // (1 - p) mu_s   (mu_s in naive mode)
  double dynamic_part = 0.0;  // p mu_d         (mu_d in naive mode)
};

template <typename Real>
class FieldSet {
 public:
  FieldSet() = default;
  FieldSet(const FieldSetConfig& cfg, std::uint64_t seed);

  const FieldSetConfig& config() const { return cfg_; }
  Composition mode() const { return cfg_.mode; }
  void set_mode(Composition m) { cfg_.mode = m; }

  HashGrid<Real>& static_grid() { return s_grid_; }
  HashGrid<Real>& dynamic_grid() { return d_grid_; }
  HashGrid<Real>& prob_grid() { return p_grid_; }
  const HashGrid<Real>& static_grid() const { return s_grid_; }
  const HashGrid<Real>& dynamic_grid() const { return d_grid_; }
  const HashGrid<Real>& prob_grid() const { return p_grid_; }
  Mlp<Real>& static_mlp() { return s_mlp_; }
  Mlp<Real>& dynamic_mlp() { return d_mlp_; }
  Mlp<Real>& prob_mlp() { return p_mlp_; }
  const Mlp<Real>& static_mlp() const { return s_mlp_; }
  const Mlp<Real>& dynamic_mlp() const { return d_mlp_; }
  const Mlp<Real>& prob_mlp() const { return p_mlp_; }

  void set_active_levels(int n);

  /// Bumped whenever parameters change; batches computed before are stale.
  std::uint64_t version() const { return version_; }
  void mark_updated() { ++version_; }

  void forward(FieldBatch<Real>& batch, FieldNeeds needs = {}) const;

  /// Routes dL/d(mu_c) per sample into the three fields:
  ///   guided: d/d mu_s = 1 - p, d/d mu_d = p, d/dp = mu_d - mu_s
  ///   naive:  d/d mu_s = d/d mu_d = 1, P untouched.
  void backward(const FieldBatch<Real>& batch, std::span<const Real> dmu_c, GradRefs<Real> dest,
                GradAccumulation mode = GradAccumulation::PerWorker) const;
  /// Backward with explicit per-component upstream gradients (any may be empty).
  void backward_components(const FieldBatch<Real>& batch, std::span<const Real> dmu_s,
                           std::span<const Real> dmu_d, std::span<const Real> dp,
                           GradRefs<Real> dest, GradAccumulation mode) const;

  PointQuery query(const Vec3& unit_x, double t) const;

  /// Gradient buffers owned by the models.
  GradRefs<Real> grad_refs();
  FieldGrads<Real> make_grad_buffer() const;
  void zero_grads();
  /// Adds a worker buffer into the model gradient buffers.
  void accumulate(const FieldGrads<Real>& g);

  struct ParamGroup {
    std::span<Real> params;
    std::span<Real> grads;
  };
  /// Order: static grid, dynamic grid, prob grid, static mlp, dynamic mlp, prob mlp.
  std::vector<ParamGroup> param_groups();
  std::size_t num_params() const;

 private:
  FieldSetConfig cfg_;
  HashGrid<Real> s_grid_, d_grid_, p_grid_;
  Mlp<Real> s_mlp_, d_mlp_, p_mlp_;
  std::uint64_t version_ = 1;
};

extern template class FieldSet<float>;
extern template class FieldSet<double>;
extern template struct FieldBatch<float>;
extern template struct FieldBatch<double>;
extern template struct FieldGrads<float>;
extern template struct FieldGrads<double>;

}  // namespace dsa4d
