#include "dsa4d/hash_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dsa4d {

void HashGridConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("hash grid: " + m); };
  if (dims != 3 && dims != 4) fail("dims must be 3 or 4");
  if (levels < 1 || levels > 64) fail("levels must be in [1, 64]");
  if (feat_dim < 1 || feat_dim > 64) fail("feat_dim must be in [1, 64]");
  if (log2_table_size < 1 || log2_table_size > 30) fail("log2_table_size must be in [1, 30]");
  if (base_res < 1) fail("base_res must be >= 1");
  if (!(growth > 1.0)) fail("growth must be > 1");
}

int level_resolution(const HashGridConfig& cfg, int level) {
  if (level < 0 || level >= cfg.levels) throw std::invalid_argument("level out of range");
  return static_cast<int>(std::floor(cfg.base_res * std::pow(cfg.growth, level)));
}

int active_levels_at(int iteration, const ProgressiveSchedule& schedule, int levels) {
  if (iteration < 0) throw std::invalid_argument("iteration must be >= 0");
  const long unlocked = schedule.unlock_every > 0 ? iteration / schedule.unlock_every : levels;
  return static_cast<int>(std::min<long>(levels, schedule.initial_levels + unlocked));
}

template <typename Real>
HashGrid<Real>::HashGrid(const HashGridConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::uint64_t table = cfg_.table_size();
  offset_.push_back(0);
  for (int l = 0; l < cfg_.levels; ++l) {
    const int n = level_resolution(cfg_, l);
    std::uint64_t vertices = 1;
    bool dense = true;
    for (int d = 0; d < cfg_.dims; ++d) {
      vertices *= static_cast<std::uint64_t>(n) + 1;
      if (vertices > table) {
        dense = false;
        break;
      }
    }
    res_.push_back(n);
    dense_.push_back(dense);
    entries_.push_back(static_cast<std::uint32_t>(dense ? vertices : table));
    offset_.push_back(offset_.back() + entries_.back());
  }
  params_.assign(offset_.back() * cfg_.feat_dim, Real(0));
  grads_.assign(params_.size(), Real(0));
  active_ = cfg_.levels;
}

template <typename Real>
void HashGrid<Real>::set_active_levels(int n) {
  active_ = std::clamp(n, 0, cfg_.levels);
}

template <typename Real>
int HashGrid<Real>::set_active_levels(int iteration, const ProgressiveSchedule& schedule) {
  set_active_levels(active_levels_at(iteration, schedule, cfg_.levels));
  return active_;
}

template <typename Real>
std::span<Real> HashGrid<Real>::row(int level, std::uint32_t index) {
  return {params_.data() + (offset_[level] + index) * cfg_.feat_dim,
          static_cast<std::size_t>(cfg_.feat_dim)};
}

template <typename Real>
std::span<const Real> HashGrid<Real>::row(int level, std::uint32_t index) const {
  return {params_.data() + (offset_[level] + index) * cfg_.feat_dim,
          static_cast<std::size_t>(cfg_.feat_dim)};
}

template <typename Real>
void HashGrid<Real>::init_uniform(std::mt19937_64& rng, Real scale) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(scale),
                                              static_cast<double>(scale));
  for (Real& p : params_) p = static_cast<Real>(dist(rng));
}

template <typename Real>
void HashGrid<Real>::zero_grads() {
  std::fill(grads_.begin(), grads_.end(), Real(0));
}

template <typename Real>
std::uint32_t HashGrid<Real>::cell_index(int level, std::span<const std::uint32_t> c) const {
  if (dense_[level]) {
    const std::uint32_t stride = static_cast<std::uint32_t>(res_[level]) + 1;
    std::uint32_t idx = 0;
    for (int d = cfg_.dims - 1; d >= 0; --d) idx = idx * stride + c[d];
    return idx;
  }
  std::uint32_t h = 0;
  for (int d = 0; d < cfg_.dims; ++d) h ^= c[d] * kHashPrimes[d];
  return h & (cfg_.table_size() - 1);
}

namespace {

template <typename Real, int D>
struct LevelPoint {
  std::uint32_t cell[D];
  Real frac[D];
};

template <typename Real, int D>
inline LevelPoint<Real, D> locate(const Real* u, int res) {
  LevelPoint<Real, D> p;
  for (int d = 0; d < D; ++d) {
    const Real x = std::clamp(u[d], Real(0), Real(1)) * static_cast<Real>(res);
    int c = static_cast<int>(std::floor(x));
    c = std::clamp(c, 0, res - 1);
    p.cell[d] = static_cast<std::uint32_t>(c);
    p.frac[d] = x - static_cast<Real>(c);
  }
  return p;
}

template <typename Real, int D>
inline void corner_of(const LevelPoint<Real, D>& p, int corner, bool dense, std::uint32_t stride,
                      std::uint32_t mask, std::uint32_t& index, Real& weight) {
  weight = Real(1);
  if (dense) {
    index = 0;
    for (int d = D - 1; d >= 0; --d) {
      const std::uint32_t bit = (corner >> d) & 1u;
      index = index * stride + p.cell[d] + bit;
      weight *= bit ? p.frac[d] : Real(1) - p.frac[d];
    }
  } else {
    std::uint32_t h = 0;
    for (int d = 0; d < D; ++d) {
      const std::uint32_t bit = (corner >> d) & 1u;
      h ^= (p.cell[d] + bit) * kHashPrimes[d];
      weight *= bit ? p.frac[d] : Real(1) - p.frac[d];
    }
    index = h & mask;
  }
}

}  // namespace

namespace {

// Corner table indices and trilinear (quadrilinear) weights of one point at one level.
template <typename Real, int D>
inline void level_corners(const LevelPoint<Real, D>& p, bool dense, std::uint32_t stride,
                          std::uint32_t mask, std::uint32_t* idx, Real* w) {
  constexpr int C = 1 << D;
  if (dense) {
    std::uint32_t base = 0;
    std::uint32_t step[D];
    std::uint32_t s = 1;
    for (int d = 0; d < D; ++d) {
      base += p.cell[d] * s;
      step[d] = s;
      s *= stride;
    }
    for (int c = 0; c < C; ++c) {
      std::uint32_t i = base;
      for (int d = 0; d < D; ++d) i += ((c >> d) & 1u) * step[d];
      idx[c] = i;
    }
  } else {
    std::uint32_t h0[D], h1[D];
    for (int d = 0; d < D; ++d) {
      h0[d] = p.cell[d] * kHashPrimes[d];
      h1[d] = (p.cell[d] + 1u) * kHashPrimes[d];
    }
    for (int c = 0; c < C; ++c) {
      std::uint32_t h = 0;
      for (int d = 0; d < D; ++d) h ^= ((c >> d) & 1u) ? h1[d] : h0[d];
      idx[c] = h & mask;
    }
  }
  for (int c = 0; c < C; ++c) {
    Real wc = Real(1);
    for (int d = 0; d < D; ++d) wc *= ((c >> d) & 1u) ? p.frac[d] : Real(1) - p.frac[d];
    w[c] = wc;
  }
}

// FF > 0 fixes the feature width at compile time; FF == 0 reads it at run time.
template <typename Real, int D, int FF>
void encode_kernel(const Real* u, int n, Real* out, int F, int L, int active, const int* res,
                   const std::vector<bool>& dense_levels, const std::size_t* offset,
                   const Real* params, std::uint32_t mask) {
  constexpr int C = 1 << D;
  if constexpr (FF > 0) F = FF;
  bool dense[64];
  for (int l = 0; l < L; ++l) dense[l] = dense_levels[l];
  for (int j = 0; j < n; ++j) {
    const Real* uj = u + static_cast<std::size_t>(j) * D;
    Real* oj = out + static_cast<std::size_t>(j) * L * F;
    std::fill(oj + static_cast<std::size_t>(active) * F, oj + static_cast<std::size_t>(L) * F, Real(0));
    for (int l = 0; l < active; ++l) {
      Real acc[FF > 0 ? FF : 64] = {};
      const auto p = locate<Real, D>(uj, res[l]);
      std::uint32_t idx[C];
      Real w[C];
      level_corners<Real, D>(p, dense[l], static_cast<std::uint32_t>(res[l]) + 1, mask, idx, w);
      const Real* table = params + offset[l] * F;
      for (int c = 0; c < C; ++c) {
        const Real* r = table + static_cast<std::size_t>(idx[c]) * F;
        for (int f = 0; f < F; ++f) acc[f] += w[c] * r[f];
      }
      std::copy(acc, acc + F, oj + l * F);
    }
  }
}

template <typename Real, int D, int FF, bool Atomic>
void backward_kernel(const Real* u, int n, const Real* dfeat, Real* grad, int F, int L, int active,
                     const int* res, const std::vector<bool>& dense_levels,
                     const std::size_t* offset, std::uint32_t mask) {
  constexpr int C = 1 << D;
  if constexpr (FF > 0) F = FF;
  bool dense[64];
  for (int l = 0; l < L; ++l) dense[l] = dense_levels[l];
  for (int j = 0; j < n; ++j) {
    const Real* uj = u + static_cast<std::size_t>(j) * D;
    const Real* gj = dfeat + static_cast<std::size_t>(j) * L * F;
    for (int l = 0; l < active; ++l) {
      const Real* g = gj + l * F;
      bool any = false;
      for (int f = 0; f < F; ++f) any = any || g[f] != Real(0);
      if (!any) continue;
      const auto p = locate<Real, D>(uj, res[l]);
      std::uint32_t idx[C];
      Real w[C];
      level_corners<Real, D>(p, dense[l], static_cast<std::uint32_t>(res[l]) + 1, mask, idx, w);
      Real* table = grad + offset[l] * F;
      for (int c = 0; c < C; ++c) {
        Real* r = table + static_cast<std::size_t>(idx[c]) * F;
        for (int f = 0; f < F; ++f) {
          if constexpr (Atomic) {
#pragma omp atomic
            r[f] += w[c] * g[f];
          } else {
            r[f] += w[c] * g[f];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Real>
template <int D>
void HashGrid<Real>::encode_impl(const Real* u, int n, Real* out) const {
  const int F = cfg_.feat_dim;
  const int L = cfg_.levels;
  const std::uint32_t mask = cfg_.table_size() - 1;
  auto run = [&](auto ff) {
    encode_kernel<Real, D, decltype(ff)::value>(u, n, out, F, L, active_, res_.data(), dense_,
                                                offset_.data(), params_.data(), mask);
  };
  switch (F) {
    case 1: run(std::integral_constant<int, 1>{}); break;
    case 2: run(std::integral_constant<int, 2>{}); break;
    case 4: run(std::integral_constant<int, 4>{}); break;
    case 8: run(std::integral_constant<int, 8>{}); break;
    default: run(std::integral_constant<int, 0>{}); break;
  }
}

template <typename Real>
template <int D, bool Atomic>
void HashGrid<Real>::backward_impl(const Real* u, int n, const Real* dfeat, Real* grad) const {
  const int F = cfg_.feat_dim;
  const int L = cfg_.levels;
  const std::uint32_t mask = cfg_.table_size() - 1;
  auto run = [&](auto ff) {
    backward_kernel<Real, D, decltype(ff)::value, Atomic>(u, n, dfeat, grad, F, L, active_,
                                                          res_.data(), dense_, offset_.data(), mask);
  };
  switch (F) {
    case 1: run(std::integral_constant<int, 1>{}); break;
    case 2: run(std::integral_constant<int, 2>{}); break;
    case 4: run(std::integral_constant<int, 4>{}); break;
    case 8: run(std::integral_constant<int, 8>{}); break;
    default: run(std::integral_constant<int, 0>{}); break;
  }
}

template <typename Real>
void HashGrid<Real>::encode(std::span<const Real> u, std::span<Real> out) const {
  if (static_cast<int>(u.size()) != cfg_.dims || static_cast<int>(out.size()) != output_dim()) {
    throw std::invalid_argument("hash grid encode: size mismatch");
  }
  encode_batch(u.data(), 1, out.data());
}

template <typename Real>
void HashGrid<Real>::encode_batch(const Real* u, int n, Real* out) const {
  if (cfg_.dims == 3) {
    encode_impl<3>(u, n, out);
  } else {
    encode_impl<4>(u, n, out);
  }
}

template <typename Real>
void HashGrid<Real>::backward(std::span<const Real> u, std::span<const Real> dfeat,
                              std::span<Real> grad_dest, GradAccumulation mode) const {
  if (static_cast<int>(u.size()) != cfg_.dims || static_cast<int>(dfeat.size()) != output_dim()) {
    throw std::invalid_argument("hash grid backward: size mismatch");
  }
  backward_batch(u.data(), 1, dfeat.data(), grad_dest, mode);
}

template <typename Real>
void HashGrid<Real>::backward_batch(const Real* u, int n, const Real* dfeat,
                                    std::span<Real> grad_dest, GradAccumulation mode) const {
  if (grad_dest.size() != params_.size()) {
    throw std::invalid_argument("hash grid backward: gradient buffer size mismatch");
  }
  const bool atomic = mode == GradAccumulation::Atomic;
  if (cfg_.dims == 3) {
    atomic ? backward_impl<3, true>(u, n, dfeat, grad_dest.data())
           : backward_impl<3, false>(u, n, dfeat, grad_dest.data());
  } else {
    atomic ? backward_impl<4, true>(u, n, dfeat, grad_dest.data())
           : backward_impl<4, false>(u, n, dfeat, grad_dest.data());
  }
}

template <typename Real>
std::vector<typename HashGrid<Real>::Corner> HashGrid<Real>::corners(
    int level, std::span<const Real> u) const {
  std::vector<Corner> out;
  const std::uint32_t mask = cfg_.table_size() - 1;
  const std::uint32_t stride = static_cast<std::uint32_t>(res_[level]) + 1;
  auto collect = [&](auto tag) {
    constexpr int D = decltype(tag)::value;
    const auto p = locate<Real, D>(u.data(), res_[level]);
    for (int c = 0; c < (1 << D); ++c) {
      std::uint32_t idx;
      Real w;
      corner_of<Real, D>(p, c, dense_[level], stride, mask, idx, w);
      out.push_back({offset_[level] + idx, w});
    }
  };
  if (cfg_.dims == 3) {
    collect(std::integral_constant<int, 3>{});
  } else {
    collect(std::integral_constant<int, 4>{});
  }
  return out;
}

template class HashGrid<float>;
template class HashGrid<double>;

}  // namespace dsa4d
