// Serial vs parallel kernels. Each benchmark takes one argument: 0 serial, 1 parallel.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dsa4d/config.hpp"
#include "dsa4d/mesh.hpp"
#include "dsa4d/parallel.hpp"
#include "dsa4d/phantom.hpp"
#include "dsa4d/reconstructor.hpp"
#include "dsa4d/renderer.hpp"
#include "dsa4d/trainer.hpp"

using namespace dsa4d;

namespace {

Exec exec_of(const benchmark::State& s) { return s.range(0) ? Exec::Parallel : Exec::Serial; }

const PhantomScene& scene() {
  static const PhantomScene s = branching_y_scene();
  return s;
}

ScanGeometry geometry(int det) {
  ScanGeometry g;
  g.det_cols = g.det_rows = det;
  g.pitch_u_mm = g.pitch_v_mm = 3.0 * 128 / det;
  g.aabb = scene().aabb;
  return g;
}

const FieldSet<float>& fields() {
  static const FieldSet<float> f(desk_config().fields, 1);
  return f;
}

const Dataset& dataset() {
  static const Dataset ds = [] {
    std::vector<int> idx;
    for (int i = 1; i <= 60; i += 2) idx.push_back(i);
    return generate_dataset(scene(), geometry(64), idx, {});
  }();
  return ds;
}

void BM_ProjectImage(benchmark::State& state) {
  const ScanGeometry g = geometry(128);
  const FramePose pose = pose_for_frame(g, 7);
  for (auto _ : state) benchmark::DoNotOptimize(project_image(scene(), g, pose, exec_of(state)));
}

void BM_RenderImage(benchmark::State& state) {
  const ScanGeometry g = geometry(32);
  const FramePose pose = pose_for_frame(g, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        render_image(fields(), g, pose, 0.4, Integrand::MuC, QuadratureConfig{96, false}, exec_of(state)));
  }
}

void BM_TrainingLoss(benchmark::State& state) {
  FieldSet<float> f(desk_config().fields, 2);
  std::mt19937_64 rng(3);
  const RayBatch batch = sample_ray_batch(dataset(), 256, rng);
  const std::vector<Vec3> reg = sample_reg_points(2048, rng);
  LossOptions opts;
  opts.exec = exec_of(state);
  for (auto _ : state) {
    f.zero_grads();
    benchmark::DoNotOptimize(compute_loss<float>(f, scene().aabb, batch, reg, QuadratureConfig{96, true}, opts));
  }
}

void BM_ExtractVolume(benchmark::State& state) {
  const Lattice l = Lattice::covering(scene().aabb, 48);
  for (auto _ : state) {
    benchmark::DoNotOptimize(extract_volume(fields(), scene().aabb, l, VolumeKind::MuC, 0.5, exec_of(state)));
  }
}

void BM_MarchingCubes(benchmark::State& state) {
  static const VolumeImage v = ground_truth_volume(scene(), Lattice::covering(scene().aabb, 128), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(marching_cubes(v, 0.01, exec_of(state)));
}

}  // namespace

BENCHMARK(BM_ProjectImage)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RenderImage)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainingLoss)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExtractVolume)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MarchingCubes)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
