#include "dsa4d/fields.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace dsa4d {

void FieldSetConfig::validate() const {
  static_grid.validate();
  dynamic_grid.validate();
  prob_grid.validate();
  if (static_grid.dims != 3 || prob_grid.dims != 3) {
    throw std::invalid_argument("fields: static and probability grids must be 3D");
  }
  if (dynamic_grid.dims != 4) throw std::invalid_argument("fields: dynamic grid must be 4D");
  if (hidden_dim < 1 || num_layers < 2) throw std::invalid_argument("fields: bad decoder shape");
  if (mu_activation == OutputActivation::Sigmoid) {
    throw std::invalid_argument("fields: attenuation outputs must be relu or softplus");
  }
  if (!(mu_scale > 0.0)) throw std::invalid_argument("fields: mu_scale must be positive");
}

template <typename Real>
void FieldGrads<Real>::zero() {
  for (auto* v : parts()) std::fill(v->begin(), v->end(), Real(0));
}

template <typename Real>
void FieldGrads<Real>::add(const FieldGrads& other) {
  auto mine = parts();
  auto theirs = other.parts();
  for (std::size_t k = 0; k < mine.size(); ++k) {
    auto& a = *mine[k];
    const auto& b = *theirs[k];
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
}

template <typename Real>
void FieldBatch<Real>::resize(int count) {
  n = count;
  x.resize(static_cast<std::size_t>(3) * count);
  xt.resize(static_cast<std::size_t>(4) * count);
  mu_s.resize(count);
  mu_d.resize(count);
  p.resize(count);
  mu_c.resize(count);
  valid = false;
}

template <typename Real>
void FieldBatch<Real>::set_point(int j, const Vec3& u, double t) {
  Real* a = x.data() + static_cast<std::size_t>(3) * j;
  Real* b = xt.data() + static_cast<std::size_t>(4) * j;
  for (int d = 0; d < 3; ++d) {
    a[d] = static_cast<Real>(std::clamp(u[d], 0.0, 1.0));
    b[d] = a[d];
  }
  b[3] = static_cast<Real>(std::clamp(t, 0.0, 1.0));
}

template <typename Real>
FieldSet<Real>::FieldSet(const FieldSetConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      s_grid_(cfg.static_grid),
      d_grid_(cfg.dynamic_grid),
      p_grid_(cfg.prob_grid) {
  cfg_.validate();
  auto mlp_cfg = [&](const HashGridConfig& g, OutputActivation act) {
    MlpConfig m;
    m.in_dim = g.output_dim();
    m.hidden_dim = cfg_.hidden_dim;
    m.out_dim = 1;
    m.num_layers = cfg_.num_layers;
    m.output = act;
    m.use_bias = cfg_.decoder_bias;
    return m;
  };
  s_mlp_ = Mlp<Real>(mlp_cfg(cfg_.static_grid, cfg_.mu_activation));
  d_mlp_ = Mlp<Real>(mlp_cfg(cfg_.dynamic_grid, cfg_.mu_activation));
  p_mlp_ = Mlp<Real>(mlp_cfg(cfg_.prob_grid, OutputActivation::Sigmoid));

  std::mt19937_64 rng(seed);
  const Real table = static_cast<Real>(cfg_.table_init);
  const Real final_scale = static_cast<Real>(cfg_.final_layer_scale);
  s_grid_.init_uniform(rng, table);
  s_mlp_.init_kaiming(rng, final_scale);
  d_grid_.init_uniform(rng, table);
  d_mlp_.init_kaiming(rng, final_scale);
  p_grid_.init_uniform(rng, table);
  p_mlp_.init_kaiming(rng, final_scale);
  const int last = cfg_.num_layers - 1;
  if (cfg_.nonneg_output_init) {
    s_mlp_.weight(last) = s_mlp_.weight(last).cwiseAbs();
    d_mlp_.weight(last) = d_mlp_.weight(last).cwiseAbs();
  }
}

template <typename Real>
void FieldSet<Real>::set_active_levels(int n) {
  s_grid_.set_active_levels(n);
  d_grid_.set_active_levels(n);
  p_grid_.set_active_levels(n);
}

namespace {

template <typename Real>
void run_field(const HashGrid<Real>& grid, const Mlp<Real>& mlp, const Real* coords, int n,
               Real scale, MlpCache<Real>& cache, std::vector<Real>& out) {
  cache.input.resize(grid.output_dim(), n);
  grid.encode_batch(coords, n, cache.input.data());
  mlp.forward(cache);
  for (int j = 0; j < n; ++j) out[j] = scale * cache.output(0, j);
}

template <typename Real>
bool all_zero(std::span<const Real> v) {
  return std::all_of(v.begin(), v.end(), [](Real a) { return a == Real(0); });
}

}  // namespace

template <typename Real>
void FieldSet<Real>::forward(FieldBatch<Real>& batch, FieldNeeds needs) const {
  const int n = batch.n;
  const bool guided = cfg_.mode == Composition::Guided;
  const Real scale = static_cast<Real>(cfg_.mu_scale);
  if (!guided || batch.forced_p) needs.prob_field = false;
  batch.s_cache.valid = batch.d_cache.valid = batch.p_cache.valid = false;

  if (needs.static_field) {
    run_field(s_grid_, s_mlp_, batch.x.data(), n, scale, batch.s_cache, batch.mu_s);
  } else {
    std::fill(batch.mu_s.begin(), batch.mu_s.end(), Real(0));
  }
  if (needs.dynamic_field) {
    run_field(d_grid_, d_mlp_, batch.xt.data(), n, scale, batch.d_cache, batch.mu_d);
  } else {
    std::fill(batch.mu_d.begin(), batch.mu_d.end(), Real(0));
  }
  if (needs.prob_field) {
    run_field(p_grid_, p_mlp_, batch.x.data(), n, Real(1), batch.p_cache, batch.p);
  } else {
    const Real fill = batch.forced_p ? *batch.forced_p : Real(0);
    std::fill(batch.p.begin(), batch.p.end(), fill);
  }
  for (int j = 0; j < n; ++j) {
    batch.mu_c[j] = guided ? (Real(1) - batch.p[j]) * batch.mu_s[j] + batch.p[j] * batch.mu_d[j]
                           : batch.mu_s[j] + batch.mu_d[j];
  }
  batch.evaluated = needs;
  batch.version = version_;
  batch.valid = true;
}

template <typename Real>
void FieldSet<Real>::backward(const FieldBatch<Real>& batch, std::span<const Real> dmu_c,
                              GradRefs<Real> dest, GradAccumulation mode) const {
  const int n = batch.n;
  if (static_cast<int>(dmu_c.size()) != n) {
    throw std::invalid_argument("fields backward: gradient size does not match batch");
  }
  std::vector<Real> ds(n), dd(n), dp;
  if (cfg_.mode == Composition::Guided) {
    const bool learn_p = !batch.forced_p;
    if (learn_p) dp.resize(n);
    for (int j = 0; j < n; ++j) {
      const Real g = dmu_c[j];
      ds[j] = (Real(1) - batch.p[j]) * g;
      dd[j] = batch.p[j] * g;
      // Not printed alongside the two weight partials but forced by the
      // composition: d mu_c / d p = mu_d - mu_s.
      if (learn_p) dp[j] = (batch.mu_d[j] - batch.mu_s[j]) * g;
    }
  } else {
    std::copy(dmu_c.begin(), dmu_c.end(), ds.begin());
    std::copy(dmu_c.begin(), dmu_c.end(), dd.begin());
  }
  backward_components(batch, ds, dd, dp, dest, mode);
}

template <typename Real>
void FieldSet<Real>::backward_components(const FieldBatch<Real>& batch,
                                         std::span<const Real> dmu_s, std::span<const Real> dmu_d,
                                         std::span<const Real> dp, GradRefs<Real> dest,
                                         GradAccumulation mode) const {
  if (!batch.valid || batch.version != version_) {
    throw std::logic_error("fields backward: stale or missing forward cache");
  }
  const int n = batch.n;
  const Real scale = static_cast<Real>(cfg_.mu_scale);
  auto one = [&](std::span<const Real> up, Real out_scale, const MlpCache<Real>& cache,
                 const Mlp<Real>& mlp, const HashGrid<Real>& grid, const Real* coords,
                 std::span<Real> mlp_dest, std::span<Real> grid_dest, const char* name) {
    if (up.empty() || all_zero(up)) return;
    if (!cache.valid) {
      throw std::logic_error(std::string("fields backward: ") + name + " field was not evaluated");
    }
    Matrix<Real> dout = Eigen::Map<const Matrix<Real>>(up.data(), 1, n) * out_scale;
    Matrix<Real> dfeat(grid.output_dim(), n);
    mlp.backward(cache, dout, mlp_dest, &dfeat);
    grid.backward_batch(coords, n, dfeat.data(), grid_dest, mode);
  };
  one(dmu_s, scale, batch.s_cache, s_mlp_, s_grid_, batch.x.data(), dest.s_mlp, dest.s_grid, "static");
  one(dmu_d, scale, batch.d_cache, d_mlp_, d_grid_, batch.xt.data(), dest.d_mlp, dest.d_grid, "dynamic");
  one(dp, Real(1), batch.p_cache, p_mlp_, p_grid_, batch.x.data(), dest.p_mlp, dest.p_grid, "probability");
}

template <typename Real>
PointQuery FieldSet<Real>::query(const Vec3& unit_x, double t) const {
  FieldBatch<Real> b;
  b.resize(1);
  b.set_point(0, unit_x, t);
  forward(b);
  PointQuery q;
  q.mu_s = b.mu_s[0];
  q.mu_d = b.mu_d[0];
  q.p = b.p[0];
  q.mu_c = b.mu_c[0];
  if (cfg_.mode == Composition::Guided) {
    q.static_part = (1.0 - q.p) * q.mu_s;
    q.dynamic_part = q.p * q.mu_d;
  } else {
    q.static_part = q.mu_s;
    q.dynamic_part = q.mu_d;
  }
  return q;
}

template <typename Real>
GradRefs<Real> FieldSet<Real>::grad_refs() {
  return {s_grid_.grads(), d_grid_.grads(), p_grid_.grads(),
          s_mlp_.grads(),  d_mlp_.grads(),  p_mlp_.grads()};
}

template <typename Real>
FieldGrads<Real> FieldSet<Real>::make_grad_buffer() const {
  FieldGrads<Real> g;
  g.s_grid.assign(s_grid_.num_params(), Real(0));
  g.d_grid.assign(d_grid_.num_params(), Real(0));
  g.p_grid.assign(p_grid_.num_params(), Real(0));
  g.s_mlp.assign(s_mlp_.num_params(), Real(0));
  g.d_mlp.assign(d_mlp_.num_params(), Real(0));
  g.p_mlp.assign(p_mlp_.num_params(), Real(0));
  return g;
}

template <typename Real>
void FieldSet<Real>::zero_grads() {
  s_grid_.zero_grads();
  d_grid_.zero_grads();
  p_grid_.zero_grads();
  s_mlp_.zero_grads();
  d_mlp_.zero_grads();
  p_mlp_.zero_grads();
}

template <typename Real>
void FieldSet<Real>::accumulate(const FieldGrads<Real>& g) {
  const GradRefs<Real> r = grad_refs();
  const std::span<Real> dst[] = {r.s_grid, r.d_grid, r.p_grid, r.s_mlp, r.d_mlp, r.p_mlp};
  const auto src = g.parts();
  for (std::size_t k = 0; k < 6; ++k) {
    const auto& s = *src[k];
    for (std::size_t i = 0; i < s.size(); ++i) dst[k][i] += s[i];
  }
}

template <typename Real>
std::vector<typename FieldSet<Real>::ParamGroup> FieldSet<Real>::param_groups() {
  return {{s_grid_.params(), s_grid_.grads()}, {d_grid_.params(), d_grid_.grads()},
          {p_grid_.params(), p_grid_.grads()}, {s_mlp_.params(), s_mlp_.grads()},
          {d_mlp_.params(), d_mlp_.grads()},   {p_mlp_.params(), p_mlp_.grads()}};
}

template <typename Real>
std::size_t FieldSet<Real>::num_params() const {
  return s_grid_.num_params() + d_grid_.num_params() + p_grid_.num_params() +
         s_mlp_.num_params() + d_mlp_.num_params() + p_mlp_.num_params();
}

template class FieldSet<float>;
template class FieldSet<double>;
template struct FieldBatch<float>;
template struct FieldBatch<double>;
template struct FieldGrads<float>;
template struct FieldGrads<double>;

}  // namespace dsa4d
