#include "dsa4d/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "dsa4d/errors.hpp"

namespace dsa4d {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Span1 {
  double a = kInf;
  double b = -kInf;
  bool empty() const { return !(a < b); }
};

Span1 intersect(Span1 x, Span1 y) { return {std::max(x.a, y.a), std::min(x.b, y.b)}; }

// Roots of A s^2 + 2 B s + C <= 0 for A > 0.
Span1 quadratic_span(double a, double b, double c) {
  const double disc = b * b - a * c;
  if (disc <= 0.0) return {};
  const double root = std::sqrt(disc);
  // Numerically stable pair.
  const double q = -(b + std::copysign(root, b));
  double s0 = q / a;
  double s1 = (q != 0.0) ? c / q : -s0;
  if (s0 > s1) std::swap(s0, s1);
  return {s0, s1};
}

Span1 sphere_span(const Ray& ray, const Vec3& center, double radius) {
  const Vec3 w = ray.origin - center;
  return quadratic_span(ray.direction.squaredNorm(), w.dot(ray.direction),
                        w.squaredNorm() - radius * radius);
}

Span1 capsule_span(const Ray& ray, const Capsule& cap) {
  const Vec3 axis = cap.p1 - cap.p0;
  const double h = axis.norm();
  Span1 hull = sphere_span(ray, cap.p0, cap.radius);
  const Span1 end = sphere_span(ray, cap.p1, cap.radius);
  if (h == 0.0) return hull;

  // Cylinder body: radial quadratic intersected with the axial slab.
  const Vec3 a = axis / h;
  const Vec3 w = ray.origin - cap.p0;
  const Vec3& d = ray.direction;
  const double da = d.dot(a);
  const double wa = w.dot(a);
  const Vec3 dp = d - da * a;
  const Vec3 wp = w - wa * a;
  const double qa = dp.squaredNorm();
  Span1 body;
  if (qa <= 1e-300) {
    body = (wp.squaredNorm() <= cap.radius * cap.radius) ? Span1{-kInf, kInf} : Span1{};
  } else {
    body = quadratic_span(qa, wp.dot(dp), wp.squaredNorm() - cap.radius * cap.radius);
  }
  Span1 slab;
  if (da == 0.0) {
    slab = (wa >= 0.0 && wa <= h) ? Span1{-kInf, kInf} : Span1{};
  } else {
    double s0 = -wa / da;
    double s1 = (h - wa) / da;
    if (s0 > s1) std::swap(s0, s1);
    slab = {s0, s1};
  }
  body = intersect(body, slab);

  // A capsule is convex, so the union of the three pieces is one interval.
  for (const Span1& piece : {end, body}) {
    if (piece.empty()) continue;
    if (hull.empty()) {
      hull = piece;
    } else {
      hull.a = std::min(hull.a, piece.a);
      hull.b = std::max(hull.b, piece.b);
    }
  }
  return hull;
}

double positive_length(Span1 s) {
  if (s.empty()) return 0.0;
  return std::max(0.0, s.b - std::max(s.a, 0.0));
}

double capsule_distance2(const Capsule& c, const Vec3& x) {
  const Vec3 axis = c.p1 - c.p0;
  const double len2 = axis.squaredNorm();
  double u = 0.0;
  if (len2 > 0.0) u = std::clamp((x - c.p0).dot(axis) / len2, 0.0, 1.0);
  return (x - (c.p0 + u * axis)).squaredNorm();
}

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError(std::string("scene: '") + what + "' must be an array of 3 numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

}  // namespace

double Primitive::fill(double t) const {
  if (t < fill_start) return 0.0;
  if (fill_ramp <= 0.0) return mu_peak;
  return mu_peak * std::min(1.0, (t - fill_start) / fill_ramp);
}

bool Primitive::contains(const Vec3& x) const {
  return std::visit(
      [&](const auto& s) -> bool {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          return (x - s.center).squaredNorm() <= s.radius * s.radius;
        } else {
          return capsule_distance2(s, x) <= s.radius * s.radius;
        }
      },
      shape);
}

double Primitive::radius() const {
  return std::visit([](const auto& s) { return s.radius; }, shape);
}

double Primitive::surface_area() const {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        const double r = s.radius;
        if constexpr (std::is_same_v<T, Sphere>) {
          return 4.0 * std::numbers::pi * r * r;
        } else {
          return 4.0 * std::numbers::pi * r * r + 2.0 * std::numbers::pi * r * (s.p1 - s.p0).norm();
        }
      },
      shape);
}

Aabb Primitive::bounds() const {
  return std::visit(
      [](const auto& s) -> Aabb {
        using T = std::decay_t<decltype(s)>;
        const Vec3 r = Vec3::Constant(s.radius);
        if constexpr (std::is_same_v<T, Sphere>) {
          return {s.center - r, s.center + r};
        } else {
          return {s.p0.cwiseMin(s.p1) - r, s.p0.cwiseMax(s.p1) + r};
        }
      },
      shape);
}

void PhantomScene::validate() const {
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const Primitive& p = primitives[i];
    const std::string tag = "scene primitive " + std::to_string(i) + ": ";
    if (!(p.radius() > 0)) throw ConfigError(tag + "radius must be positive");
    if (!(p.mu_peak >= 0)) throw ConfigError(tag + "mu_peak must be non-negative");
    if (!(p.fill_start >= 0)) throw ConfigError(tag + "fill_start must be non-negative");
    if (!(p.fill_ramp >= 0)) throw ConfigError(tag + "fill_ramp must be non-negative");
    const Aabb b = p.bounds();
    if (!aabb.contains(b.lo) || !aabb.contains(b.hi)) {
      throw ConfigError(tag + "extends outside the scene box");
    }
  }
  if (!(background.mu_bg >= 0)) throw ConfigError("scene background: mu_bg must be non-negative");
  if (!(background.i0 > 0)) throw ConfigError("scene background: i0 must be positive");
  if (!(background.semi_axes.minCoeff() > 0)) {
    throw ConfigError("scene background: semi-axes must be positive");
  }
}

Aabb PhantomScene::tight_bounds() const {
  if (primitives.empty()) return aabb;
  Aabb out = primitives.front().bounds();
  for (const Primitive& p : primitives) {
    const Aabb b = p.bounds();
    out.lo = out.lo.cwiseMin(b.lo);
    out.hi = out.hi.cwiseMax(b.hi);
  }
  return out;
}

double atten_at(const PhantomScene& scene, const Vec3& x, double t) {
  double mu = 0.0;
  for (const Primitive& p : scene.primitives) {
    if (p.contains(x)) mu += p.fill(t);
  }
  return mu;
}

double chord_length(const Ray& ray, const Sphere& sphere) {
  return positive_length(sphere_span(ray, sphere.center, sphere.radius));
}

double chord_length(const Ray& ray, const Capsule& capsule) {
  return positive_length(capsule_span(ray, capsule));
}

double chord_length(const Ray& ray, const Primitive& prim) {
  return std::visit([&](const auto& s) { return chord_length(ray, s); }, prim.shape);
}

double background_chord(const Ray& ray, const BackgroundModel& bg) {
  const Vec3 o = (ray.origin - bg.center).cwiseQuotient(bg.semi_axes);
  const Vec3 d = ray.direction.cwiseQuotient(bg.semi_axes);
  return positive_length(quadratic_span(d.squaredNorm(), o.dot(d), o.squaredNorm() - 1.0));
}

double project_analytic(const PhantomScene& scene, const Ray& ray, double t) {
  double sum = 0.0;
  for (const Primitive& p : scene.primitives) {
    const double f = p.fill(t);
    if (f == 0.0) continue;
    sum += f * chord_length(ray, p);
  }
  return sum;
}

MaskFillSample simulate_mask_fill(const PhantomScene& scene, const Ray& ray, double t) {
  const double tissue = scene.background.mu_bg * background_chord(ray, scene.background);
  const double contrast = project_analytic(scene, ray, t);
  MaskFillSample s;
  s.i1 = scene.background.i0 * std::exp(-tissue);
  s.i2 = s.i1 * std::exp(-contrast);
  s.dsa = std::log(s.i1) - std::log(s.i2);
  return s;
}

ProjectionImage project_image(const PhantomScene& scene, const ScanGeometry& geom,
                              const FramePose& pose, Exec exec) {
  ProjectionImage img(geom.det_cols, geom.det_rows);
  const int rows = geom.det_rows;
  const int cols = geom.det_cols;
  auto row_kernel = [&](int row) {
    for (int col = 0; col < cols; ++col) {
      const Ray r = pixel_line(geom, pose, col + 0.5, row + 0.5);
      img.at(col, row) = static_cast<float>(project_analytic(scene, r, pose.t_norm));
    }
  };
  if (exec == Exec::Serial) {
    for (int row = 0; row < rows; ++row) row_kernel(row);
  } else {
#pragma omp parallel for schedule(dynamic, 4)
    for (int row = 0; row < rows; ++row) row_kernel(row);
  }
  return img;
}

Dataset generate_dataset(const PhantomScene& scene, const ScanGeometry& geom,
                         std::span<const int> frame_indices, const GenerateOptions& opts,
                         Exec exec) {
  geom.validate();
  if (!std::is_sorted(frame_indices.begin(), frame_indices.end())) {
    throw std::invalid_argument("generate_dataset: frame indices must be sorted");
  }
  Dataset ds;
  ds.manifest.geometry = geom;
  ds.manifest.provenance = opts.provenance;
  if (!ds.manifest.provenance.is_object()) ds.manifest.provenance = nlohmann::json::object();
  ds.manifest.provenance["generator"] = "phantom";
  ds.manifest.provenance["seed"] = opts.seed;
  ds.manifest.provenance["noise_sigma"] = opts.noise_sigma;
  for (int idx : frame_indices) {
    const FramePose pose = pose_for_frame(geom, idx);
    ProjectionImage img = project_image(scene, geom, pose, exec);
    if (opts.noise_sigma > 0.0) {
      // Per-frame stream so the result does not depend on frame order or workers.
      std::mt19937_64 rng(opts.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(idx));
      std::normal_distribution<double> noise(0.0, opts.noise_sigma);
      for (float& v : img.values) v = static_cast<float>(std::max(0.0, v + noise(rng)));
    }
    char name[64];
    std::snprintf(name, sizeof(name), "frames/frame_%04d.raw", idx);
    ds.manifest.frames.push_back(
        {idx, pose.angle_rad * 180.0 / std::numbers::pi, pose.t_norm, name});
    ds.images.push_back(std::move(img));
  }
  return ds;
}

VolumeImage ground_truth_volume(const PhantomScene& scene, const Lattice& lattice, double t) {
  VolumeImage vol(lattice, "ground_truth_mu_c", t);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < lattice.nz; ++k) {
    for (int j = 0; j < lattice.ny; ++j) {
      for (int i = 0; i < lattice.nx; ++i) {
        vol.at(i, j, k) = static_cast<float>(atten_at(scene, lattice.center(i, j, k), t));
      }
    }
  }
  return vol;
}

VolumeImage ground_truth_average(const PhantomScene& scene, const Lattice& lattice,
                                 std::span<const double> timestamps) {
  if (timestamps.empty()) throw std::invalid_argument("ground_truth_average: no timestamps");
  VolumeImage vol(lattice, "ground_truth_mean_mu_c");
  const double inv = 1.0 / static_cast<double>(timestamps.size());
#pragma omp parallel for schedule(static)
  for (int k = 0; k < lattice.nz; ++k) {
    for (int j = 0; j < lattice.ny; ++j) {
      for (int i = 0; i < lattice.nx; ++i) {
        const Vec3 x = lattice.center(i, j, k);
        double sum = 0.0;
        for (double t : timestamps) sum += atten_at(scene, x, t);
        vol.at(i, j, k) = static_cast<float>(sum * inv);
      }
    }
  }
  return vol;
}

VolumeImage vessel_mask(const PhantomScene& scene, const Lattice& lattice) {
  VolumeImage vol(lattice, "vessel_mask");
#pragma omp parallel for schedule(static)
  for (int k = 0; k < lattice.nz; ++k) {
    for (int j = 0; j < lattice.ny; ++j) {
      for (int i = 0; i < lattice.nx; ++i) {
        const Vec3 x = lattice.center(i, j, k);
        bool inside = false;
        for (const Primitive& p : scene.primitives) inside = inside || p.contains(x);
        vol.at(i, j, k) = inside ? 1.0f : 0.0f;
      }
    }
  }
  return vol;
}

std::vector<Vec3> sample_vessel_surface(const PhantomScene& scene, std::size_t count,
                                        std::uint64_t seed) {
  std::vector<Vec3> out;
  if (scene.primitives.empty() || count == 0) return out;
  std::vector<double> areas;
  for (const Primitive& p : scene.primitives) areas.push_back(p.surface_area());
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  out.reserve(count);
  // Points strictly inside another primitive are not on the union boundary;
  // rejecting them keeps the accepted set uniform over that boundary.
  const double shrink = 1.0 - 1e-9;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > 1000 * count + 1000000) {
      throw std::runtime_error("sample_vessel_surface: union boundary is (almost) empty");
    }
    const std::size_t which = pick(rng);
    const Primitive& prim = scene.primitives[which];
    Vec3 x;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Sphere>) {
            x = s.center + s.radius * random_unit(rng);
          } else {
            const Vec3 axis = s.p1 - s.p0;
            const double h = axis.norm();
            const double cyl = 2.0 * std::numbers::pi * s.radius * h;
            const double caps = 4.0 * std::numbers::pi * s.radius * s.radius;
            if (h > 0.0 && uni(rng) * (cyl + caps) < cyl) {
              const Vec3 a = axis / h;
              Vec3 e1 = a.unitOrthogonal();
              Vec3 e2 = a.cross(e1);
              const double phi = 2.0 * std::numbers::pi * uni(rng);
              x = s.p0 + uni(rng) * axis + s.radius * (std::cos(phi) * e1 + std::sin(phi) * e2);
            } else {
              const Vec3 n = random_unit(rng);
              // Hemisphere pointing along the axis belongs to the p1 cap.
              x = (h > 0.0 && n.dot(axis) > 0.0) ? s.p1 + s.radius * n : s.p0 + s.radius * n;
            }
          }
        },
        prim.shape);
    bool buried = false;
    for (std::size_t i = 0; i < scene.primitives.size() && !buried; ++i) {
      if (i == which) continue;
      const Primitive& other = scene.primitives[i];
      std::visit(
          [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            const double r = s.radius * shrink;
            if constexpr (std::is_same_v<T, Sphere>) {
              buried = (x - s.center).squaredNorm() < r * r;
            } else {
              buried = capsule_distance2(s, x) < r * r;
            }
          },
          other.shape);
    }
    if (!buried) out.push_back(x);
  }
  return out;
}

PhantomScene branching_y_scene() {
  PhantomScene s;
  auto capsule = [](Vec3 a, Vec3 b, double r, double mu, double start, double ramp) {
    return Primitive{Capsule{a, b, r}, mu, start, ramp};
  };
  const Vec3 fork(0.0, 0.0, -10.0);
  // Trunk fills first; branches and the aneurysm follow along the flow.
  s.primitives.push_back(capsule({0.0, 0.0, -85.0}, fork, 7.0, 0.02, 0.0, 0.15));
  s.primitives.push_back(capsule(fork, {-50.0, 20.0, 65.0}, 5.0, 0.02, 0.10, 0.20));
  s.primitives.push_back(capsule(fork, {45.0, -25.0, 70.0}, 5.0, 0.02, 0.12, 0.20));
  s.primitives.push_back(Primitive{Sphere{{30.0, -10.0, 36.0}, 9.0}, 0.02, 0.20, 0.20});
  return s;
}

PhantomScene fast_fill_scene() {
  PhantomScene s = branching_y_scene();
  const double starts[] = {0.0, 0.02, 0.03, 0.05};
  for (std::size_t i = 0; i < s.primitives.size(); ++i) {
    s.primitives[i].fill_start = starts[i];
    s.primitives[i].fill_ramp = 0.08;
  }
  return s;
}

nlohmann::json scene_to_json(const PhantomScene& scene) {
  nlohmann::json j;
  j["format"] = "dsa4d-scene";
  j["version"] = 1;
  j["aabb"] = {{"lo", vec_json(scene.aabb.lo)}, {"hi", vec_json(scene.aabb.hi)}};
  j["background"] = {{"center", vec_json(scene.background.center)},
                     {"semi_axes", vec_json(scene.background.semi_axes)},
                     {"mu_bg", scene.background.mu_bg},
                     {"i0", scene.background.i0}};
  nlohmann::json prims = nlohmann::json::array();
  for (const Primitive& p : scene.primitives) {
    nlohmann::json e;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Sphere>) {
            e["type"] = "sphere";
            e["center"] = vec_json(s.center);
          } else {
            e["type"] = "capsule";
            e["p0"] = vec_json(s.p0);
            e["p1"] = vec_json(s.p1);
          }
          e["radius"] = s.radius;
        },
        p.shape);
    e["mu_peak"] = p.mu_peak;
    e["fill_start"] = p.fill_start;
    e["fill_ramp"] = p.fill_ramp;
    prims.push_back(e);
  }
  j["primitives"] = prims;
  return j;
}

PhantomScene scene_from_json(const nlohmann::json& j) {
  try {
    if (j.value("version", 1) != 1) throw ConfigError("scene: unsupported version");
    PhantomScene s;
    if (j.contains("aabb")) {
      s.aabb.lo = json_vec(j.at("aabb").at("lo"), "aabb.lo");
      s.aabb.hi = json_vec(j.at("aabb").at("hi"), "aabb.hi");
    }
    if (j.contains("background")) {
      const auto& b = j.at("background");
      s.background.center = json_vec(b.at("center"), "background.center");
      s.background.semi_axes = json_vec(b.at("semi_axes"), "background.semi_axes");
      s.background.mu_bg = b.at("mu_bg").get<double>();
      s.background.i0 = b.value("i0", 1.0);
    }
    for (const auto& e : j.at("primitives")) {
      Primitive p;
      const std::string type = e.at("type").get<std::string>();
      const double r = e.at("radius").get<double>();
      if (type == "sphere") {
        p.shape = Sphere{json_vec(e.at("center"), "center"), r};
      } else if (type == "capsule") {
        p.shape = Capsule{json_vec(e.at("p0"), "p0"), json_vec(e.at("p1"), "p1"), r};
      } else {
        throw ConfigError("scene: unknown primitive type '" + type + "'");
      }
      p.mu_peak = e.at("mu_peak").get<double>();
      p.fill_start = e.value("fill_start", 0.0);
      p.fill_ramp = e.value("fill_ramp", 0.0);
      s.primitives.push_back(p);
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
}

PhantomScene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

void save_scene(const std::filesystem::path& path, const PhantomScene& scene) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scene file " + path.string());
  out << scene_to_json(scene).dump(2) << "\n";
}

}  // namespace dsa4d
