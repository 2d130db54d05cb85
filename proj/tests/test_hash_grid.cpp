#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "dsa4d/hash_grid.hpp"

using namespace dsa4d;

namespace {

// Straightforward re-derivation of one level's table index.
std::uint32_t oracle_index(const HashGridConfig& cfg, int res, const std::vector<std::uint32_t>& c) {
  std::uint64_t verts = 1;
  for (int d = 0; d < cfg.dims; ++d) verts *= static_cast<std::uint64_t>(res) + 1;
  if (verts <= cfg.table_size()) {
    std::uint64_t idx = 0, stride = 1;
    for (int d = 0; d < cfg.dims; ++d) {
      idx += c[d] * stride;
      stride *= res + 1;
    }
    return static_cast<std::uint32_t>(idx);
  }
  const std::uint64_t primes[4] = {1ull, 2654435761ull, 805459861ull, 3674653429ull};
  std::uint64_t h = 0;
  for (int d = 0; d < cfg.dims; ++d) h ^= (c[d] * primes[d]) & 0xffffffffull;
  return static_cast<std::uint32_t>(h % cfg.table_size());
}

// Multilinear interpolation written out corner by corner.
std::vector<double> oracle_encode(const HashGrid<double>& g, const std::vector<double>& u) {
  const HashGridConfig& cfg = g.config();
  std::vector<double> out(cfg.output_dim(), 0.0);
  for (int l = 0; l < g.active_levels(); ++l) {
    const int res = level_resolution(cfg, l);
    std::vector<std::uint32_t> base(cfg.dims);
    std::vector<double> f(cfg.dims);
    for (int d = 0; d < cfg.dims; ++d) {
      const double x = std::clamp(u[d], 0.0, 1.0) * res;
      int c = static_cast<int>(std::floor(x));
      if (c >= res) c = res - 1;
      base[d] = c;
      f[d] = x - c;
    }
    for (int corner = 0; corner < (1 << cfg.dims); ++corner) {
      std::vector<std::uint32_t> c(cfg.dims);
      double w = 1.0;
      for (int d = 0; d < cfg.dims; ++d) {
        const int bit = (corner >> d) & 1;
        c[d] = base[d] + bit;
        w *= bit ? f[d] : 1.0 - f[d];
      }
      const auto row = g.row(l, oracle_index(cfg, res, c));
      for (int k = 0; k < cfg.feat_dim; ++k) out[l * cfg.feat_dim + k] += w * row[k];
    }
  }
  return out;
}

HashGridConfig small_cfg(int dims) {
  HashGridConfig c;
  c.dims = dims;
  c.levels = 6;
  c.feat_dim = 2;
  c.log2_table_size = 10;
  c.base_res = dims == 3 ? 4 : 2;
  c.growth = 1.6;
  return c;
}

}  // namespace

TEST_CASE("level resolutions") {
  const HashGridConfig s = HashGridConfig::spatial_default();
  CHECK(level_resolution(s, 0) == 8);
  CHECK(level_resolution(s, 1) == 11);
  const HashGridConfig t = HashGridConfig::temporal_default();
  CHECK(level_resolution(t, 0) == 2);
  int prev = 0;
  for (int l = 0; l < s.levels; ++l) {
    CHECK(level_resolution(s, l) >= prev);
    CHECK(level_resolution(s, l) == static_cast<int>(std::floor(8 * std::pow(1.45, l))));
    prev = level_resolution(s, l);
  }
}

TEST_CASE("progressive schedule") {
  const ProgressiveSchedule sch;
  CHECK(active_levels_at(0, sch, 12) == 4);
  CHECK(active_levels_at(2499, sch, 12) == 4);
  CHECK(active_levels_at(2500, sch, 12) == 5);
  CHECK(active_levels_at(19999, sch, 12) == 11);
  CHECK(active_levels_at(20000, sch, 12) == 12);
  CHECK(active_levels_at(1000000, sch, 12) == 12);
}

TEST_CASE("dense and hashed cell indices") {
  const HashGrid<double> g(HashGridConfig::spatial_default());
  REQUIRE(g.resolution(0) == 8);
  REQUIRE(g.is_dense(0));
  const std::uint32_t zero[3] = {0, 0, 0};
  const std::uint32_t x1[3] = {1, 0, 0};
  const std::uint32_t y1[3] = {0, 1, 0};
  const std::uint32_t z1[3] = {0, 0, 1};
  CHECK(g.cell_index(0, zero) == 0);
  CHECK(g.cell_index(0, x1) == 1);
  CHECK(g.cell_index(0, y1) == 9);
  CHECK(g.cell_index(0, z1) == 81);

  const int fine = g.config().levels - 1;
  REQUIRE_FALSE(g.is_dense(fine));
  const std::uint32_t T = g.config().table_size();
  std::mt19937_64 rng(1);
  const std::uint32_t n = static_cast<std::uint32_t>(g.resolution(fine));
  std::uniform_int_distribution<std::uint32_t> coord(0, n);
  for (int i = 0; i < 1000000; ++i) {
    const std::uint32_t c[3] = {coord(rng), coord(rng), coord(rng)};
    const std::uint32_t idx = g.cell_index(fine, c);
    REQUIRE(idx < T);
    if (i < 1000) CHECK(idx == oracle_index(g.config(), n, {c[0], c[1], c[2]}));
  }
}

TEST_CASE("encode matches the corner-by-corner oracle in 3D and 4D") {
  for (int dims : {3, 4}) {
    HashGrid<double> g(small_cfg(dims));
    std::mt19937_64 rng(dims);
    g.init_uniform(rng, 1.0);
    for (int active : {1, 3, 6}) {
      g.set_active_levels(active);
      std::uniform_real_distribution<double> u01(-0.05, 1.05);
      for (int i = 0; i < 200; ++i) {
        std::vector<double> u(dims);
        for (double& x : u) x = u01(rng);
        std::vector<double> out(g.output_dim());
        g.encode(u, out);
        const auto ref = oracle_encode(g, u);
        for (int k = 0; k < g.output_dim(); ++k) CHECK(out[k] == doctest::Approx(ref[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("vertex and cell-center queries") {
  HashGrid<double> g(small_cfg(3));
  std::mt19937_64 rng(2);
  g.init_uniform(rng, 1.0);
  g.set_active_levels(1);
  const int n = g.resolution(0);
  // Vertex (1, 2, 3) returns its row.
  const std::vector<double> u = {1.0 / n, 2.0 / n, 3.0 / n};
  std::vector<double> out(g.output_dim());
  g.encode(u, out);
  const std::uint32_t c[3] = {1, 2, 3};
  const auto row = g.row(0, g.cell_index(0, c));
  for (int k = 0; k < 2; ++k) CHECK(out[k] == doctest::Approx(row[k]).epsilon(1e-14));
  // Center of cell (1, 2, 3) is the mean of its eight corners.
  const std::vector<double> m = {1.5 / n, 2.5 / n, 3.5 / n};
  g.encode(m, out);
  double mean[2] = {0, 0};
  for (int corner = 0; corner < 8; ++corner) {
    const std::uint32_t cc[3] = {1u + (corner & 1), 2u + ((corner >> 1) & 1), 3u + ((corner >> 2) & 1)};
    const auto r = g.row(0, g.cell_index(0, cc));
    mean[0] += r[0] / 8.0;
    mean[1] += r[1] / 8.0;
  }
  CHECK(out[0] == doctest::Approx(mean[0]).epsilon(1e-14));
  CHECK(out[1] == doctest::Approx(mean[1]).epsilon(1e-14));
}

TEST_CASE("inactive levels are zero and isolated") {
  HashGrid<double> g(HashGridConfig::spatial_default());
  std::mt19937_64 rng(3);
  g.init_uniform(rng, 1.0);
  g.set_active_levels(4);
  const int F = g.config().feat_dim;
  const std::vector<double> u = {0.31, 0.72, 0.05};
  std::vector<double> before(g.output_dim()), after(g.output_dim());
  g.encode(u, before);
  for (int k = 4 * F; k < 12 * F; ++k) CHECK(before[k] == 0.0);
  // Perturb every table entry of levels >= 4.
  auto p = g.params();
  for (std::size_t i = g.level_offset(4) * F; i < p.size(); ++i) p[i] += 0.5;
  g.encode(u, after);
  CHECK(before == after);
  // Locked levels receive exactly zero gradient.
  g.zero_grads();
  std::vector<double> dfeat(g.output_dim(), 1.0);
  g.backward(u, dfeat, g.grads());
  auto gr = g.grads();
  for (std::size_t i = g.level_offset(4) * F; i < gr.size(); ++i) REQUIRE(gr[i] == 0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < g.level_offset(4) * F; ++i) s += gr[i];
  CHECK(s == doctest::Approx(4.0 * F));
}

TEST_CASE("corner weights form a partition of unity") {
  for (int dims : {3, 4}) {
    HashGrid<double> g(small_cfg(dims));
    g.set_active_levels(g.config().levels);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
      std::vector<double> u(dims);
      for (double& x : u) x = u01(rng);
      for (int l = 0; l < g.config().levels; ++l) {
        const auto cs = g.corners(l, u);
        CHECK(cs.size() == (1u << dims));
        double w = 0.0;
        for (const auto& c : cs) w += c.weight;
        CHECK(std::abs(w - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("encoding is continuous") {
  HashGrid<double> g(small_cfg(4));
  std::mt19937_64 rng(6);
  g.init_uniform(rng, 1.0);
  g.set_active_levels(6);
  double max_abs = 0.0;
  for (double v : g.params()) max_abs = std::max(max_abs, std::abs(v));
  const int top_res = g.resolution(5);
  std::uniform_real_distribution<double> u01(0.0, 1.0 - 1e-6);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> u(4), v(4);
    for (int d = 0; d < 4; ++d) {
      u[d] = u01(rng);
      v[d] = u[d] + 1e-6;
    }
    std::vector<double> a(g.output_dim()), b(g.output_dim());
    g.encode(u, a);
    g.encode(v, b);
    // Each coordinate step moves a weight by at most res * eps; 2 * max|row| bounds a row change.
    const double bound = 4 * top_res * 1e-6 * 2.0 * max_abs + 1e-15;
    for (int k = 0; k < g.output_dim(); ++k) CHECK(std::abs(a[k] - b[k]) <= bound);
  }
}

TEST_CASE("backward matches finite differences") {
  for (int dims : {3, 4}) {
    HashGrid<double> g(small_cfg(dims));
    std::mt19937_64 rng(10 + dims);
    g.init_uniform(rng, 1.0);
    g.set_active_levels(5);
    std::uniform_real_distribution<double> u01(0.0, 1.0), w(-1.0, 1.0);
    // Scalar loss: sum_k c_k * feature_k over a few points.
    const int npts = 7;
    std::vector<double> pts(dims * npts), coef(g.output_dim());
    for (double& x : pts) x = u01(rng);
    for (double& c : coef) c = w(rng);
    auto loss = [&] {
      std::vector<double> out(g.output_dim() * npts);
      g.encode_batch(pts.data(), npts, out.data());
      double s = 0.0;
      for (int j = 0; j < npts; ++j) {
        for (int k = 0; k < g.output_dim(); ++k) s += coef[k] * out[j * g.output_dim() + k] * (j + 1);
      }
      return s;
    };
    std::vector<double> dfeat(g.output_dim() * npts);
    for (int j = 0; j < npts; ++j) {
      for (int k = 0; k < g.output_dim(); ++k) dfeat[j * g.output_dim() + k] = coef[k] * (j + 1);
    }
    g.zero_grads();
    g.backward_batch(pts.data(), npts, dfeat.data(), g.grads());
    // Test touched entries plus random ones.
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < g.num_params() && ids.size() < 10; ++i) {
      if (g.grads()[i] != 0.0) ids.push_back(i);
    }
    std::uniform_int_distribution<std::size_t> pick(0, g.num_params() - 1);
    while (ids.size() < 20) ids.push_back(pick(rng));
    const double h = 1e-5;
    for (std::size_t i : ids) {
      const double keep = g.params()[i];
      g.params()[i] = keep + h;
      const double lp = loss();
      g.params()[i] = keep - h;
      const double lm = loss();
      g.params()[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      const double an = g.grads()[i];
      CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(an)));
    }
  }
}

TEST_CASE("atomic and per-worker accumulation agree") {
  HashGrid<double> g(small_cfg(3));
  std::mt19937_64 rng(21);
  g.init_uniform(rng, 1.0);
  g.set_active_levels(6);
  const int n = 500;
  std::vector<double> pts(3 * n), dfeat(g.output_dim() * n);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (double& x : pts) x = u01(rng);
  for (double& x : dfeat) x = u01(rng);
  std::vector<double> a(g.num_params(), 0.0), b(g.num_params(), 0.0);
  g.backward_batch(pts.data(), n, dfeat.data(), a, GradAccumulation::PerWorker);
  g.backward_batch(pts.data(), n, dfeat.data(), b, GradAccumulation::Atomic);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("config validation") {
  HashGridConfig c;
  CHECK_NOTHROW(c.validate());
  c.growth = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = HashGridConfig{};
  c.log2_table_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = HashGridConfig{};
  c.dims = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
