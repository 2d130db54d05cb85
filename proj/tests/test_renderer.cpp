#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "dsa4d/phantom.hpp"
#include "dsa4d/renderer.hpp"

using namespace dsa4d;

namespace {

Ray box_ray(const Vec3& origin, Vec3 dir, const Aabb& box) {
  dir.normalize();
  Ray r;
  r.origin = origin;
  r.direction = dir;
  const auto iv = aabb_intersect(origin, dir, box);
  REQUIRE(iv);
  r.s_near = iv->s_near;
  r.s_far = iv->s_far;
  return r;
}

// Ray passing at distance b from `center`, in a random orientation.
Ray ray_with_impact(const Vec3& center, double b, std::mt19937_64& rng, const Aabb& box) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 d(n(rng), n(rng), n(rng));
  d.normalize();
  Vec3 perp = d.cross(Vec3(n(rng), n(rng), n(rng))).normalized();
  const Vec3 closest = center + b * perp;
  return box_ray(closest - 400.0 * d, d, box);
}

PhantomScene one_sphere(double radius, double mu) {
  PhantomScene s;
  Primitive p;
  p.shape = Sphere{Vec3(5.0, -3.0, 8.0), radius};
  p.mu_peak = mu;
  s.primitives.push_back(p);
  return s;
}

FieldSetConfig small_fields(Composition mode = Composition::Guided) {
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

void randomize(FieldSet<double>& f, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& g : f.param_groups()) {
    for (double& v : g.params) v = u(rng);
  }
  f.mark_updated();
}

}  // namespace

TEST_CASE("zero and constant integrands") {
  const Aabb box;
  const Ray r = box_ray(Vec3(-300, 10, 20), Vec3(1, 0.2, -0.1), box);
  QuadratureConfig q{37, false};
  CHECK(render_line(r, q, [](const Vec3&) { return 0.0; }) == 0.0);
  const double c = 0.0123;
  CHECK(render_line(r, q, [&](const Vec3&) { return c; }) == doctest::Approx(c * r.length()).epsilon(1e-13));
  std::mt19937_64 rng(1);
  q.jitter = true;
  CHECK(render_line(r, q, [&](const Vec3&) { return c; }, &rng) ==
        doctest::Approx(c * r.length()).epsilon(1e-13));
}

TEST_CASE("ray missing the box renders zero without samples") {
  Ray r;
  r.s_near = r.s_far = 0.0;
  std::vector<double> s;
  CHECK(sample_distances(r, {16, false}, nullptr, s) == 0.0);
  CHECK(s.empty());
  int calls = 0;
  CHECK(render_line(r, {16, false}, [&](const Vec3&) { ++calls; return 1.0; }) == 0.0);
  CHECK(calls == 0);
}

TEST_CASE("sphere ground truth against the analytic chord") {
  const double radius = 20.0, mu = 0.02;
  const PhantomScene scene = one_sphere(radius, mu);
  const Vec3 c(5.0, -3.0, 8.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 0.8);
  const QuadratureConfig q{1024, false};
  for (int i = 0; i < 200; ++i) {
    const double b = radius * u(rng);
    const Ray r = ray_with_impact(c, b, rng, scene.aabb);
    const double oracle = mu * 2.0 * std::sqrt(radius * radius - b * b);
    const double got = render_line(r, q, [&](const Vec3& x) { return atten_at(scene, x, 0.5); });
    CHECK(std::abs(got - oracle) <= 0.01 * oracle);
  }
}

TEST_CASE("quadrature error shrinks as K doubles") {
  const double radius = 20.0, mu = 0.02;
  const PhantomScene scene = one_sphere(radius, mu);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 0.95);
  std::vector<Ray> rays;
  std::vector<double> oracle;
  for (int i = 0; i < 300; ++i) {
    const double b = radius * u(rng);
    rays.push_back(ray_with_impact(Vec3(5.0, -3.0, 8.0), b, rng, scene.aabb));
    oracle.push_back(mu * 2.0 * std::sqrt(radius * radius - b * b));
  }
  double prev = 1e300;
  for (int k = 64; k <= 1024; k *= 2) {
    double err = 0.0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
      err += std::abs(render_line(rays[i], {k, false}, [&](const Vec3& x) { return atten_at(scene, x, 1.0); }) -
                      oracle[i]);
    }
    err /= rays.size();
    CHECK(err < prev * 1.05);
    prev = err;
  }
  CHECK(prev < 0.005 * 2.0 * mu * radius);
}

TEST_CASE("linearity in the integrand") {
  const PhantomScene y = branching_y_scene();
  const PhantomScene s = one_sphere(15.0, 0.03);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-60.0, 60.0);
  const QuadratureConfig q{200, false};
  const double a = 2.5, b = -0.75;
  for (int i = 0; i < 50; ++i) {
    const Ray r = box_ray(Vec3(u(rng), -700.0, u(rng)), Vec3(u(rng) / 3000, 1.0, u(rng) / 3000), y.aabb);
    auto f1 = [&](const Vec3& x) { return atten_at(y, x, 0.6); };
    auto f2 = [&](const Vec3& x) { return atten_at(s, x, 0.6); };
    const double lhs = render_line(r, q, [&](const Vec3& x) { return a * f1(x) + b * f2(x); });
    const double rhs = a * render_line(r, q, f1) + b * render_line(r, q, f2);
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("splitting a ray at a segment boundary is additive") {
  const PhantomScene y = branching_y_scene();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  auto f = [&](const Vec3& x) { return atten_at(y, x, 0.8); };
  for (int i = 0; i < 50; ++i) {
    const Ray whole = box_ray(Vec3(u(rng), u(rng), -500.0), Vec3(u(rng) / 400, u(rng) / 400, 1.0), y.aabb);
    const int k = 128;
    const double ds = whole.length() / k;
    Ray a = whole, b = whole;
    a.s_far = whole.s_near + 50 * ds;
    b.s_near = a.s_far;
    const double parts = render_line(a, {50, false}, f) + render_line(b, {k - 50, false}, f);
    CHECK(std::abs(parts - render_line(whole, {k, false}, f)) <= 1e-12);
  }
}

TEST_CASE("constant field gradient is the segment length") {
  FieldSetConfig c = small_fields(Composition::Naive);
  c.decoder_bias = true;
  c.mu_scale = 1.0;
  FieldSet<double> f(c, 2);
  for (Mlp<double>* m : {&f.static_mlp(), &f.dynamic_mlp()}) {
    for (int l = 0; l < 3; ++l) {
      m->weight(l).setZero();
      m->bias(l).setZero();
    }
  }
  f.static_mlp().bias(2).setConstant(0.25);
  const Aabb box;
  const std::vector<Ray> rays = {box_ray(Vec3(-500, 3, 4), Vec3(1, 0.1, 0), box)};
  const std::vector<double> times = {0.3};
  RenderCache<double> cache;
  std::vector<double> out(1);
  render_forward<double>(f, box, rays, times, {2, false}, Integrand::MuC, 0, cache, out);
  CHECK(out[0] == doctest::Approx(0.25 * rays[0].length()));
  const std::vector<double> up = {1.0};
  auto g = f.make_grad_buffer();
  render_backward<double>(f, cache, up, refs(g));
  const std::size_t bias_at = f.static_mlp().bias_offset(2);
  CHECK(g.s_mlp[bias_at] == doctest::Approx(rays[0].length()));

  // Zero upstream gradient leaves every buffer at zero.
  auto z = f.make_grad_buffer();
  const std::vector<double> zero = {0.0};
  render_backward<double>(f, cache, zero, refs(z));
  for (const auto* part : z.parts()) {
    for (double v : *part) CHECK(v == 0.0);
  }
}

TEST_CASE("rendering gradient matches finite differences") {
  FieldSetConfig c = small_fields();
  c.decoder_bias = true;
  FieldSet<double> f(c, 4);
  randomize(f, 8);
  const Aabb box;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-80.0, 80.0), t(0.0, 1.0);
  std::vector<Ray> rays;
  std::vector<double> times, w;
  for (int i = 0; i < 12; ++i) {
    rays.push_back(box_ray(Vec3(u(rng), -600.0, u(rng)), Vec3(u(rng) / 500, 1.0, u(rng) / 500), box));
    times.push_back(t(rng));
    w.push_back(t(rng) - 0.5);
  }
  const QuadratureConfig q{24, true};
  RenderCache<double> cache;
  std::vector<double> out(rays.size());
  auto loss = [&] {
    f.mark_updated();
    render_forward<double>(f, box, rays, times, q, Integrand::MuC, 77, cache, out);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
    return s;
  };
  loss();
  f.zero_grads();
  render_backward<double>(f, cache, w, f.grad_refs());
  auto groups = f.param_groups();
  std::vector<std::vector<double>> analytic;
  for (auto& g : groups) analytic.emplace_back(g.grads.begin(), g.grads.end());
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 20000 && checked < 30; ++trial) {
    const std::size_t k = rng() % groups.size();
    const std::size_t i = rng() % groups[k].params.size();
    if (analytic[k][i] == 0.0) continue;
    const double keep = groups[k].params[i];
    groups[k].params[i] = keep + h;
    const double lp = loss();
    groups[k].params[i] = keep - h;
    const double lm = loss();
    groups[k].params[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(fd - analytic[k][i]) <= 1e-3 * std::max(std::abs(fd), 1e-6));
    ++checked;
  }
  CHECK(checked == 30);
}

TEST_CASE("images of freshly initialized fields") {
  ScanGeometry geom;
  geom.det_cols = geom.det_rows = 24;
  geom.pitch_u_mm = geom.pitch_v_mm = 16.0;
  FieldSet<double> f(small_fields(), 3);
  const FramePose pose{1, 0.4, 0.5};
  const auto img = render_image(f, geom, pose, 0.5, Integrand::MuC, {64, false});
  float mx = 0.0f;
  for (float v : img.values) mx = std::max(mx, v);
  CHECK(mx < 1e-3f);
}

TEST_CASE("static component image does not depend on time") {
  ScanGeometry geom;
  geom.det_cols = geom.det_rows = 16;
  geom.pitch_u_mm = geom.pitch_v_mm = 20.0;
  FieldSet<double> f(small_fields(), 3);
  randomize(f, 4);
  const FramePose pose{1, 1.1, 0.0};
  const auto a = render_image(f, geom, pose, 0.0, Integrand::Static, {32, false});
  const auto b = render_image(f, geom, pose, 0.9, Integrand::Static, {32, false});
  const auto d0 = render_image(f, geom, pose, 0.0, Integrand::Dynamic, {32, false});
  const auto d1 = render_image(f, geom, pose, 0.9, Integrand::Dynamic, {32, false});
  CHECK(a.values == b.values);
  CHECK(d0.values != d1.values);
  // Components add up to the full rendering.
  const auto m = render_image(f, geom, pose, 0.9, Integrand::MuC, {32, false});
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    CHECK(m.values[i] == doctest::Approx(b.values[i] + d1.values[i]).epsilon(1e-5));
  }
}

TEST_CASE("serial and parallel images agree bitwise") {
  ScanGeometry geom;
  geom.det_cols = geom.det_rows = 16;
  geom.pitch_u_mm = geom.pitch_v_mm = 20.0;
  FieldSet<double> f(small_fields(), 5);
  randomize(f, 6);
  const FramePose pose{1, 0.3, 0.2};
  const auto a = render_image(f, geom, pose, 0.2, Integrand::MuC, {32, true}, Exec::Serial, 5);
  const auto b = render_image(f, geom, pose, 0.2, Integrand::MuC, {32, true}, Exec::Parallel, 5);
  CHECK(a.values == b.values);
}

TEST_CASE("phantom integrand reproduces the analytic projection") {
  const PhantomScene y = branching_y_scene();
  ScanGeometry geom;
  geom.det_cols = geom.det_rows = 32;
  geom.pitch_u_mm = geom.pitch_v_mm = 10.0;
  const FramePose pose{1, 0.7, 0.85};
  const auto exact = project_image(y, geom, pose);
  const auto num = render_image_fn(geom, pose, {1024, false},
                                   [&](const Vec3& x) { return atten_at(y, x, pose.t_norm); });
  double mx = 0.0, err = 0.0;
  for (std::size_t i = 0; i < exact.values.size(); ++i) {
    mx = std::max(mx, static_cast<double>(exact.values[i]));
    err += std::abs(exact.values[i] - num.values[i]);
  }
  REQUIRE(mx > 0.0);
  CHECK(err / exact.values.size() <= 0.01 * mx);
}
