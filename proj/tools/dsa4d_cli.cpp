// dsa4d: phantom generation, training, rendering, extraction, meshing and evaluation.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsa4d/checkpoint.hpp"
#include "dsa4d/config.hpp"
#include "dsa4d/dataset_io.hpp"
#include "dsa4d/errors.hpp"
#include "dsa4d/mesh.hpp"
#include "dsa4d/metrics.hpp"
#include "dsa4d/parallel.hpp"
#include "dsa4d/phantom.hpp"
#include "dsa4d/pipeline.hpp"
#include "dsa4d/reconstructor.hpp"
#include "dsa4d/renderer.hpp"
#include "dsa4d/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dsa4d;

namespace {

void write_snapshot(const fs::path& out, const std::string& command, json resolved) {
  fs::create_directories(out);
  resolved["command"] = command;
  resolved["workers"] = num_workers();
  std::ofstream f(out / "resolved_config.json");
  if (!f) throw DataError("cannot write " + (out / "resolved_config.json").string());
  f << resolved.dump(2) << '\n';
}

json aabb_json(const Aabb& b) {
  return {{"lo", {b.lo.x(), b.lo.y(), b.lo.z()}}, {"hi", {b.hi.x(), b.hi.y(), b.hi.z()}}};
}

Aabb aabb_from(const json& j) {
  const auto lo = j.at("lo").get<std::array<double, 3>>();
  const auto hi = j.at("hi").get<std::array<double, 3>>();
  Aabb b;
  b.lo = Vec3(lo[0], lo[1], lo[2]);
  b.hi = Vec3(hi[0], hi[1], hi[2]);
  return b;
}

PhantomScene resolve_scene(const std::string& spec) {
  if (spec == "builtin:branching_y") return branching_y_scene();
  if (spec == "builtin:fast_fill") return fast_fill_scene();
  return load_scene(spec);
}

char tag_buf[64];
std::string frame_tag(int index) {
  std::snprintf(tag_buf, sizeof tag_buf, "frame_%04d", index);
  return tag_buf;
}
std::string time_tag(double t) {
  std::snprintf(tag_buf, sizeof tag_buf, "t%.4f", t);
  return tag_buf;
}

ScanGeometry checkpoint_geometry(const Checkpoint& ck) {
  if (!ck.meta.contains("geometry")) throw DataError("checkpoint has no geometry metadata");
  return geometry_from_json(ck.meta.at("geometry"));
}

std::vector<double> checkpoint_timestamps(const Checkpoint& ck) {
  if (!ck.meta.contains("timestamps")) throw DataError("checkpoint has no training timestamps");
  return ck.meta.at("timestamps").get<std::vector<double>>();
}

// ---------------------------------------------------------------- phantom-gen
struct PhantomArgs {
  std::string scene = "builtin:branching_y";
  std::string geometry;
  int frames = 0;
  int views = 30;
  double noise = 0.0;
  std::uint64_t seed = 0;
  int gt_res = 128;
  std::vector<double> gt_times;
  std::string out;
};

int run_phantom(const PhantomArgs& a) {
  const PhantomScene scene = resolve_scene(a.scene);
  ScanGeometry geom;
  if (!a.geometry.empty()) geom = geometry_from_json(load_json_file(a.geometry));
  if (a.frames > 0) geom.num_frames_total = a.frames;
  geom.aabb = scene.aabb;
  try {
    geom.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto [train_idx, test_idx] = split_views(geom.num_frames_total, a.views);
  const fs::path out = a.out;
  GenerateOptions opts;
  opts.noise_sigma = a.noise;
  opts.seed = a.seed;
  opts.provenance = {{"scene", a.scene}, {"seed", a.seed}, {"noise_sigma", a.noise}};
  const Dataset train = generate_dataset(scene, geom, train_idx, opts);
  save_dataset(train, out / "train");
  if (!test_idx.empty()) save_dataset(generate_dataset(scene, geom, test_idx, opts), out / "test");
  save_scene(out / "scene.json", scene);

  const Lattice lattice = Lattice::covering(geom.aabb, a.gt_res);
  const std::vector<double> ts = train.timestamps();
  save_volume(out / "gt" / "mean_mu_c", ground_truth_average(scene, lattice, ts));
  save_volume(out / "gt" / "vessel_mask", vessel_mask(scene, lattice));
  for (double t : a.gt_times) save_volume(out / "gt" / ("mu_c_" + time_tag(t)), ground_truth_volume(scene, lattice, t));

  write_snapshot(out, "phantom-gen",
                 {{"scene", a.scene},
                  {"geometry", geometry_to_json(geom)},
                  {"views", a.views},
                  {"train_frames", train_idx},
                  {"test_frames", test_idx},
                  {"noise_sigma", a.noise},
                  {"seed", a.seed},
                  {"gt_res", a.gt_res},
                  {"gt_times", a.gt_times}});
  std::cout << "wrote " << train_idx.size() << " train and " << test_idx.size() << " test frames to "
            << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------- train
struct TrainArgs {
  std::string data;
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_train(const TrainArgs& a) {
  json cj = a.config.empty() ? train_config_to_json(desk_config()) : load_json_file(a.config);
  if (a.seed) cj["seed"] = *a.seed;
  apply_overrides(cj, a.overrides);
  const TrainConfig cfg = train_config_from_json(cj);
  const Dataset ds = load_dataset(a.data);
  const fs::path out = a.out;
  write_snapshot(out, "train",
                 {{"data", fs::absolute(a.data).string()},
                  {"config_file", a.config},
                  {"overrides", a.overrides},
                  {"train", train_config_to_json(cfg)},
                  {"config_hash", config_hash(train_config_to_json(cfg))}});

  Trainer<float> trainer(ds, cfg);
  const json meta = {{"geometry", geometry_to_json(ds.manifest.geometry)},
                     {"aabb", aabb_json(ds.manifest.geometry.aabb)},
                     {"timestamps", ds.timestamps()},
                     {"delta_t", trainer.delta_t()},
                     {"dataset", fs::absolute(a.data).string()}};
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run([&](const LossRecord& r) {
    const int done = r.iteration + 1;
    if (cfg.log_every > 0 && (done % cfg.log_every == 0 || done == cfg.iterations)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("iter %6d  L1 %.6f  Lreg %.5f  total %.6f  lr %.3g  levels %2d  %.1fs\n", done, r.l1,
                  r.lreg, r.total, r.lr, r.active_levels, secs);
      std::fflush(stdout);
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.iterations) {
      char name[64];
      std::snprintf(name, sizeof name, "iter_%06d.ckpt", done);
      save_checkpoint(out / "checkpoints" / name, trainer.fields(), cfg, done, meta);
    }
  });
  write_loss_csv((out / "loss.csv").string(), trainer.log());
  save_checkpoint(out / "model.ckpt", trainer.fields(), cfg, cfg.iterations, meta);
  std::cout << "final checkpoint: " << (out / "model.ckpt").string() << '\n';
  return 0;
}

// --------------------------------------------------------------------- render
struct RenderArgs {
  std::string checkpoint;
  std::string data;
  std::vector<std::string> frames{"all"};
  std::optional<double> t;
  std::vector<std::string> kinds{"full"};
  int samples = 0;
  std::string out;
};

Integrand parse_integrand(const std::string& k) {
  if (k == "full") return Integrand::MuC;
  if (k == "static") return Integrand::Static;
  if (k == "dynamic") return Integrand::Dynamic;
  throw ConfigError("unknown render kind '" + k + "' (full, static, dynamic)");
}

int run_render(const RenderArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  ScanGeometry geom = checkpoint_geometry(ck);
  std::vector<int> frames;
  if (!a.data.empty()) {
    const Dataset ds = load_dataset(a.data);
    geom = ds.manifest.geometry;
    for (const auto& f : ds.manifest.frames) frames.push_back(f.index);
  }
  if (!(a.frames.size() == 1 && a.frames[0] == "all")) {
    frames.clear();
    for (const auto& s : a.frames) {
      try {
        frames.push_back(std::stoi(s));
      } catch (const std::exception&) {
        throw ConfigError("bad frame index '" + s + "'");
      }
    }
  } else if (frames.empty()) {
    for (int i = 1; i <= geom.num_frames_total; ++i) frames.push_back(i);
  }
  QuadratureConfig quad = ck.config.eval_quad;
  if (a.samples > 0) quad.samples_per_ray = a.samples;
  quad.jitter = false;
  const fs::path out = a.out;
  write_snapshot(out, "render",
                 {{"checkpoint", fs::absolute(a.checkpoint).string()},
                  {"frames", frames},
                  {"t", a.t ? json(*a.t) : json(nullptr)},
                  {"kinds", a.kinds},
                  {"samples_per_ray", quad.samples_per_ray}});
  for (const std::string& kind : a.kinds) {
    const Integrand integ = parse_integrand(kind);
    for (int f : frames) {
      FramePose pose;
      try {
        pose = pose_for_frame(geom, f);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const double t = a.t.value_or(pose.t_norm);
      const ProjectionImage img = render_image(ck.fields, geom, pose, t, integ, quad);
      std::string stem = kind + "_" + frame_tag(f);
      if (a.t) stem += "_" + time_tag(t);
      save_image(out / stem, img, {{"kind", kind}, {"frame", f}, {"t_norm", t}, {"samples_per_ray", quad.samples_per_ray}});
    }
  }
  std::cout << "rendered " << frames.size() * a.kinds.size() << " images to " << out.string() << '\n';
  return 0;
}

// -------------------------------------------------------------------- extract
struct ExtractArgs {
  std::string checkpoint;
  std::vector<std::string> kinds{"mean_mu_c"};
  std::vector<double> times;
  int res = 128;
  std::string out;
};

int run_extract(const ExtractArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Aabb box = aabb_from(ck.meta.at("aabb"));
  const Lattice lattice = Lattice::covering(box, a.res);
  const fs::path out = a.out;
  write_snapshot(out, "extract",
                 {{"checkpoint", fs::absolute(a.checkpoint).string()},
                  {"kinds", a.kinds},
                  {"times", a.times},
                  {"res", a.res}});
  const std::vector<double> ts = checkpoint_timestamps(ck);
  for (const std::string& k : a.kinds) {
    if (k == "mean_mu_c" || k == "mean_mu_d" || k == "mean_dynamic_component") {
      const VolumeKind kind = parse_kind(k.substr(5));
      save_volume(out / k, average_volume(ck.fields, box, lattice, ts, kind));
      continue;
    }
    const VolumeKind kind = parse_kind(k);
    if (time_dependent(kind)) {
      if (a.times.empty()) throw ConfigError("kind " + k + " needs --t");
      for (double t : a.times) save_volume(out / (k + "_" + time_tag(t)), extract_volume(ck.fields, box, lattice, kind, t));
    } else {
      save_volume(out / k, extract_volume(ck.fields, box, lattice, kind));
    }
  }
  std::cout << "extracted " << a.kinds.size() << " kind(s) to " << out.string() << '\n';
  return 0;
}

// ----------------------------------------------------------------------- mesh
struct MeshArgs {
  std::string volume;
  std::optional<double> iso;
  double iso_fraction = 0.5;
  std::string out;
  std::string name = "vessels.ply";
};

int run_mesh(const MeshArgs& a) {
  const VolumeImage vol = load_volume(a.volume);
  const double iso = a.iso ? *a.iso : default_iso_level(vol, a.iso_fraction);
  const TriMesh mesh = marching_cubes(vol, iso);
  const fs::path out = a.out;
  const std::string rule = a.iso ? "explicit" : "fraction of 99.9th percentile";
  write_snapshot(out, "mesh",
                 {{"volume", fs::absolute(a.volume).string()},
                  {"iso", iso},
                  {"iso_rule", rule},
                  {"iso_fraction", a.iso_fraction}});
  std::ostringstream c1, c2;
  c1 << "iso " << iso;
  c2 << "iso_rule " << rule << " " << a.iso_fraction;
  save_ply(out / a.name, mesh, {c1.str(), c2.str(), "units mm"});
  std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
            << " triangles, iso " << iso << '\n';
  return 0;
}

// ----------------------------------------------------------------------- eval
struct EvalArgs {
  std::string mesh;
  std::string ref;
  std::string scene;
  std::string checkpoint;
  std::string data;
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  int eval_samples = 0;
  bool save_renders = false;
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const fs::path out = a.out;
  json snap = {{"samples", a.samples}, {"seed", a.seed}};
  bool did = false;
  if (!a.mesh.empty()) {
    if (a.ref.empty() == a.scene.empty()) throw ConfigError("eval: give exactly one of --ref or --scene with --mesh");
    const TriMesh m = load_ply(a.mesh);
    SurfaceDistance d;
    if (!a.ref.empty()) {
      d = surface_distance(m, load_ply(a.ref), a.samples, a.seed);
    } else {
      d = phantom_surface_distance(m, resolve_scene(a.scene), a.samples, a.seed);
    }
    MetricReport r;
    r.columns = {"chamfer_mm", "hausdorff_mm"};
    r.add(fs::path(a.mesh).filename().string(), {d.chamfer, d.hausdorff});
    fs::create_directories(out);
    r.write_csv(out / "mesh_metrics.csv");
    std::cout << r.table();
    snap["mesh"] = a.mesh;
    snap["reference"] = a.ref.empty() ? a.scene : a.ref;
    did = true;
  }
  if (!a.checkpoint.empty()) {
    if (a.data.empty()) throw ConfigError("eval: --checkpoint needs --data (test dataset)");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Dataset test = load_dataset(a.data);
    QuadratureConfig quad = ck.config.eval_quad;
    if (a.eval_samples > 0) quad.samples_per_ray = a.eval_samples;
    quad.jitter = false;
    std::vector<ProjectionImage> renders;
    const MetricReport r = evaluate_views(ck.fields, test, quad, Exec::Parallel, a.save_renders ? &renders : nullptr);
    fs::create_directories(out);
    r.write_csv(out / "view_metrics.csv");
    std::cout << r.table();
    for (std::size_t i = 0; i < renders.size(); ++i) {
      save_image(out / "renders" / frame_tag(test.manifest.frames[i].index), renders[i]);
    }
    snap["checkpoint"] = a.checkpoint;
    snap["data"] = a.data;
    snap["view_meta"] = r.meta;
    did = true;
  }
  if (!did) throw ConfigError("eval: nothing to do (use --mesh or --checkpoint)");
  write_snapshot(out, "eval", snap);
  return 0;
}

// ----------------------------------------------------------------------- info
int run_info(const std::string& path) {
  if (path == "builtin:desk" || path == "builtin:paper") {
    std::cout << train_config_to_json(path == "builtin:desk" ? desk_config() : paper_config()).dump(2) << '\n';
    return 0;
  }
  if (path.rfind("builtin:", 0) == 0) {
    std::cout << scene_to_json(resolve_scene(path)).dump(2) << '\n';
    return 0;
  }
  const fs::path p = path;
  if (fs::is_directory(p)) {
    const Dataset ds = load_dataset(p);
    const auto& g = ds.manifest.geometry;
    std::cout << "dataset: " << ds.images.size() << " frames, detector " << g.det_cols << "x" << g.det_rows
              << ", sweep " << g.angle_range_deg << " deg over " << g.num_frames_total << " frames\n";
    for (const auto& f : ds.manifest.frames) {
      std::printf("  frame %4d  angle %8.3f  t %.4f  %s\n", f.index, f.angle_deg, f.t_norm, f.file.c_str());
    }
    return 0;
  }
  if (p.extension() == ".ckpt") {
    const Checkpoint ck = load_checkpoint(p);
    std::cout << "checkpoint: iteration " << ck.iteration << ", " << ck.fields.num_params()
              << " parameters, composition " << (ck.fields.mode() == Composition::Guided ? "guided" : "naive")
              << "\nconfig hash " << config_hash(train_config_to_json(ck.config)) << '\n'
              << train_config_to_json(ck.config).dump(2) << '\n';
    return 0;
  }
  if (p.extension() == ".ply") {
    const TriMesh m = load_ply(p);
    const MeshTopology t = mesh_topology(m);
    std::cout << "mesh: " << m.vertices.size() << " vertices, " << m.triangles.size() << " triangles, area "
              << m.area() << " mm^2, euler " << t.euler() << (t.closed() ? ", closed" : ", open") << '\n';
    return 0;
  }
  fs::path stem = p;
  stem.replace_extension();
  if (fs::exists(fs::path(stem.string() + ".json"))) {
    const json h = load_json_file(stem.string() + ".json");
    if (h.value("format", "") == "dsa4d-volume") {
      const VolumeImage v = load_volume(stem);
      const auto [mn, mx] = std::minmax_element(v.values.begin(), v.values.end());
      std::cout << "volume " << v.kind << ": " << v.lattice.nx << "x" << v.lattice.ny << "x" << v.lattice.nz
                << " voxel " << v.lattice.voxel_mm << " mm, range [" << *mn << ", " << *mx << "]\n";
      return 0;
    }
    if (h.value("format", "") == "dsa4d-image") {
      const ProjectionImage img = load_image(stem);
      const auto [mn, mx] = std::minmax_element(img.values.begin(), img.values.end());
      std::cout << "image: " << img.cols << "x" << img.rows << ", range [" << *mn << ", " << *mx << "]\n";
      return 0;
    }
  }
  throw DataError("info: cannot identify " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view 4D DSA vessel reconstruction with static, dynamic and vessel-probability fields"};
  app.require_subcommand(1);
  int workers = 0;
  app.add_option("--workers", workers, "Worker threads (0: all available; 1: bitwise reproducible)");

  PhantomArgs pa;
  auto* pg = app.add_subcommand("phantom-gen", "Generate train/test projection datasets from a phantom scene");
  pg->add_option("--scene", pa.scene, "Scene JSON, or builtin:branching_y / builtin:fast_fill")->capture_default_str();
  pg->add_option("--geometry", pa.geometry, "Scan geometry JSON (defaults to the desk geometry)");
  pg->add_option("--frames", pa.frames, "Override the total frame count");
  pg->add_option("--views", pa.views, "Training views, evenly spaced; the rest are test frames")->capture_default_str();
  pg->add_option("--noise", pa.noise, "Gaussian noise sigma on the line integrals")->capture_default_str();
  pg->add_option("--seed", pa.seed, "Noise seed")->capture_default_str();
  pg->add_option("--gt-res", pa.gt_res, "Ground-truth lattice resolution")->capture_default_str();
  pg->add_option("--gt-t", pa.gt_times, "Timestamps for ground-truth volumes");
  pg->add_option("--out", pa.out, "Output directory")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Fit the fields to a training dataset");
  tr->add_option("--data", ta.data, "Training dataset directory")->required();
  tr->add_option("--config", ta.config, "Config JSON (default: built-in desk config)");
  tr->add_option("--set", ta.overrides, "Override key=value (dotted keys; applied after the file)");
  tr->add_option("--seed", ta.seed, "Seed override");
  tr->add_option("--out", ta.out, "Output directory")->required();

  RenderArgs ra;
  auto* rd = app.add_subcommand("render", "Render projections of a trained model");
  rd->add_option("--checkpoint", ra.checkpoint, "Model checkpoint")->required();
  rd->add_option("--data", ra.data, "Dataset whose frames to render (default: every frame)");
  rd->add_option("--frames", ra.frames, "Frame indices, or 'all'");
  rd->add_option("--t", ra.t, "Render time (default: the frame's own timestamp)");
  rd->add_option("--kind", ra.kinds, "full, static and/or dynamic");
  rd->add_option("--samples", ra.samples, "Samples per ray (default: eval config)");
  rd->add_option("--out", ra.out, "Output directory")->required();

  ExtractArgs ea;
  auto* ex = app.add_subcommand("extract", "Sample field volumes on a lattice");
  ex->add_option("--checkpoint", ea.checkpoint, "Model checkpoint")->required();
  ex->add_option("--kind", ea.kinds,
                 "mu_c, p, mu_s, mu_d, static_component, dynamic_component, mean_mu_c, mean_mu_d, "
                 "mean_dynamic_component");
  ex->add_option("--t", ea.times, "Timestamps for time-dependent kinds");
  ex->add_option("--res", ea.res, "Voxels along the longest box axis")->capture_default_str();
  ex->add_option("--out", ea.out, "Output directory")->required();

  MeshArgs ma;
  auto* me = app.add_subcommand("mesh", "Marching-cubes isosurface of a volume");
  me->add_option("--volume", ma.volume, "Volume stem (without .json/.raw)")->required();
  me->add_option("--iso", ma.iso, "Explicit iso level");
  me->add_option("--iso-fraction", ma.iso_fraction, "Fraction of the 99.9th percentile when --iso is absent")
      ->capture_default_str();
  me->add_option("--name", ma.name, "Output file name")->capture_default_str();
  me->add_option("--out", ma.out, "Output directory")->required();

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "Mesh distances and/or held-out view PSNR/SSIM");
  ev->add_option("--mesh", va.mesh, "Mesh to evaluate (PLY)");
  ev->add_option("--ref", va.ref, "Reference mesh (PLY)");
  ev->add_option("--scene", va.scene, "Reference phantom scene (analytic surface)");
  ev->add_option("--samples", va.samples, "Surface samples per mesh")->capture_default_str();
  ev->add_option("--seed", va.seed, "Surface sampling seed")->capture_default_str();
  ev->add_option("--checkpoint", va.checkpoint, "Model checkpoint for view metrics");
  ev->add_option("--data", va.data, "Test dataset directory");
  ev->add_option("--eval-samples", va.eval_samples, "Samples per ray for rendering (default: eval config)");
  ev->add_flag("--save-renders", va.save_renders, "Write the rendered test views");
  ev->add_option("--out", va.out, "Output directory")->required();

  std::string info_path;
  auto* in = app.add_subcommand("info", "Describe a dataset, checkpoint, volume, image or mesh");
  in->add_option("path", info_path,
                 "Dataset directory or file; builtin:desk / builtin:paper print a config, "
                 "builtin:<scene> a scene")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    set_num_workers(workers);
    if (*pg) return run_phantom(pa);
    if (*tr) return run_train(ta);
    if (*rd) return run_render(ra);
    if (*ex) return run_extract(ea);
    if (*me) return run_mesh(ma);
    if (*ev) return run_eval(va);
    if (*in) return run_info(info_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
