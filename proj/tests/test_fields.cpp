#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "dsa4d/fields.hpp"

using namespace dsa4d;

namespace {

FieldSetConfig small_config(Composition mode = Composition::Guided) {
  FieldSetConfig c;
  for (HashGridConfig* g : {&c.static_grid, &c.dynamic_grid, &c.prob_grid}) {
    g->levels = 4;
    g->feat_dim = 2;
    g->log2_table_size = 12;
  }
  c.hidden_dim = 8;
  c.mode = mode;
  return c;
}

// Zeroes every weight of a decoder and puts `value` in the output bias, so
// the field is the constant act(value) regardless of the input.
void make_constant(Mlp<double>& m, double value) {
  for (int l = 0; l < m.config().num_layers; ++l) {
    m.weight(l).setZero();
    m.bias(l).setZero();
  }
  m.bias(m.config().num_layers - 1).setConstant(value);
}

FieldSet<double> constant_fields(double mu_s, double mu_d, double p, Composition mode) {
  FieldSetConfig c = small_config(mode);
  c.decoder_bias = true;
  c.mu_scale = 1.0;
  FieldSet<double> f(c, 1);
  make_constant(f.static_mlp(), mu_s);
  make_constant(f.dynamic_mlp(), mu_d);
  make_constant(f.prob_mlp(), std::log(p / (1.0 - p)));
  return f;
}

FieldBatch<double> random_batch(int n, std::uint64_t seed) {
  FieldBatch<double> b;
  b.resize(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int j = 0; j < n; ++j) b.set_point(j, {u(rng), u(rng), u(rng)}, u(rng));
  return b;
}

// Non-negative output weights keep the ReLU attenuation outputs active.
void positive_output(FieldSet<double>& f) {
  for (Mlp<double>* m : {&f.static_mlp(), &f.dynamic_mlp()}) {
    const int last = m->config().num_layers - 1;
    m->weight(last) = m->weight(last).cwiseAbs();
  }
  f.mark_updated();
}

bool all_zero(const std::vector<double>& v) {
  for (double a : v) {
    if (a != 0.0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("guided composition of constant fields") {
  const auto f = constant_fields(1.0, 3.0, 0.3, Composition::Guided);
  const PointQuery q = f.query({0.2, 0.7, 0.4}, 0.6);
  CHECK(q.mu_s == doctest::Approx(1.0));
  CHECK(q.mu_d == doctest::Approx(3.0));
  CHECK(q.p == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(q.mu_c == doctest::Approx(0.7 * 1.0 + 0.3 * 3.0).epsilon(1e-12));
  CHECK(q.static_part + q.dynamic_part == q.mu_c);
}

TEST_CASE("naive composition adds and ignores p") {
  const auto f = constant_fields(1.0, 3.0, 0.3, Composition::Naive);
  const PointQuery q = f.query({0.5, 0.5, 0.5}, 0.1);
  CHECK(q.mu_c == doctest::Approx(4.0));
  CHECK(q.static_part == doctest::Approx(1.0));
  CHECK(q.dynamic_part == doctest::Approx(3.0));
}

TEST_CASE("naive equals twice guided at p = 0.5") {
  FieldSet<double> f(small_config(), 7);
  auto b = random_batch(64, 2);
  b.forced_p = 0.5;
  f.forward(b);
  const auto guided = b.mu_c;
  f.set_mode(Composition::Naive);
  f.forward(b);
  for (int j = 0; j < b.n; ++j) CHECK(b.mu_c[j] == doctest::Approx(2.0 * guided[j]).epsilon(1e-12));
}

TEST_CASE("forced p routes gradients to exactly one attenuation field") {
  FieldSet<double> f(small_config(), 11);
  // Random non-trivial parameters so every field is active somewhere.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& g : f.param_groups()) {
    for (double& v : g.params) v = u(rng);
  }
  positive_output(f);
  for (double forced : {0.0, 1.0}) {
    auto b = random_batch(200, 9);
    b.forced_p = forced;
    f.forward(b);
    std::vector<double> up(b.n, 1.0);
    auto g = f.make_grad_buffer();
    f.backward(b, up, refs(g));
    if (forced == 0.0) {
      CHECK(all_zero(g.d_grid));
      CHECK(all_zero(g.d_mlp));
      CHECK_FALSE(all_zero(g.s_mlp));
      for (int j = 0; j < b.n; ++j) CHECK(b.mu_c[j] == b.mu_s[j]);
    } else {
      CHECK(all_zero(g.s_grid));
      CHECK(all_zero(g.s_mlp));
      CHECK_FALSE(all_zero(g.d_mlp));
      for (int j = 0; j < b.n; ++j) CHECK(b.mu_c[j] == b.mu_d[j]);
    }
    CHECK(all_zero(g.p_grid));
    CHECK(all_zero(g.p_mlp));
  }
}

TEST_CASE("composition gradient matches finite differences in every group") {
  FieldSetConfig c = small_config();
  c.decoder_bias = true;
  FieldSet<double> f(c, 3);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& g : f.param_groups()) {
    for (double& v : g.params) v = u(rng);
  }
  positive_output(f);
  auto b = random_batch(50, 5);
  std::vector<double> w(b.n);
  for (double& v : w) v = u(rng);
  auto loss = [&] {
    f.mark_updated();
    f.forward(b);
    double s = 0.0;
    for (int j = 0; j < b.n; ++j) s += w[j] * b.mu_c[j];
    return s;
  };
  loss();
  f.zero_grads();
  f.backward(b, w, f.grad_refs());
  auto groups = f.param_groups();
  std::vector<std::vector<double>> analytic;
  for (auto& g : groups) analytic.emplace_back(g.grads.begin(), g.grads.end());
  const double h = 1e-6;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    int checked = 0;
    for (int trial = 0; trial < 2000 && checked < 12; ++trial) {
      const std::size_t i = rng() % groups[k].params.size();
      if (analytic[k][i] == 0.0) continue;  // untouched table rows
      const double keep = groups[k].params[i];
      groups[k].params[i] = keep + h;
      const double lp = loss();
      groups[k].params[i] = keep - h;
      const double lm = loss();
      groups[k].params[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      CHECK(std::abs(fd - analytic[k][i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
      ++checked;
    }
    CHECK(checked == 12);
  }
}

TEST_CASE("static field and p do not depend on time") {
  FieldSet<double> f(small_config(), 21);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& g : f.param_groups()) {
    for (double& v : g.params) v = u(rng);
  }
  f.mark_updated();
  const Vec3 x{0.3, 0.6, 0.2};
  const PointQuery a = f.query(x, 0.0);
  const PointQuery b = f.query(x, 0.77);
  CHECK(a.mu_s == b.mu_s);
  CHECK(a.p == b.p);
}

TEST_CASE("activation ranges and default initialization") {
  FieldSet<double> f(small_config(), 5);
  auto b = random_batch(500, 3);
  f.forward(b);
  for (int j = 0; j < b.n; ++j) {
    CHECK(b.mu_s[j] >= 0.0);
    CHECK(b.mu_d[j] >= 0.0);
    CHECK(b.p[j] > 0.0);
    CHECK(b.p[j] < 1.0);
    CHECK(std::abs(b.p[j] - 0.5) < 1e-3);
    CHECK(b.mu_s[j] < 1e-3);
  }
  const int last = f.config().num_layers - 1;
  CHECK(f.static_mlp().weight(last).minCoeff() >= 0.0);
  CHECK(f.dynamic_mlp().weight(last).minCoeff() >= 0.0);
  CHECK(f.static_mlp().bias(0).size() == 0);
}

TEST_CASE("seeded construction is reproducible") {
  FieldSet<double> a(small_config(), 99), b(small_config(), 99), c(small_config(), 100);
  auto ga = a.param_groups(), gb = b.param_groups(), gc = c.param_groups();
  bool differs = false;
  for (std::size_t k = 0; k < ga.size(); ++k) {
    CHECK(std::equal(ga[k].params.begin(), ga[k].params.end(), gb[k].params.begin()));
    differs |= !std::equal(ga[k].params.begin(), ga[k].params.end(), gc[k].params.begin());
  }
  CHECK(differs);
}

TEST_CASE("stale batches are rejected") {
  FieldSet<double> f(small_config(), 5);
  auto b = random_batch(4, 3);
  f.forward(b);
  f.mark_updated();
  std::vector<double> up(4, 1.0);
  auto g = f.make_grad_buffer();
  CHECK_THROWS_AS(f.backward(b, up, refs(g)), std::logic_error);
}

TEST_CASE("config validation") {
  FieldSetConfig c = small_config();
  c.mu_scale = 0.0;
  CHECK_THROWS_AS(FieldSet<double>(c, 1), std::invalid_argument);
  c = small_config();
  c.mu_activation = OutputActivation::Sigmoid;
  CHECK_THROWS_AS(FieldSet<double>(c, 1), std::invalid_argument);
  c = small_config();
  c.dynamic_grid.dims = 3;
  CHECK_THROWS_AS(FieldSet<double>(c, 1), std::invalid_argument);
}
