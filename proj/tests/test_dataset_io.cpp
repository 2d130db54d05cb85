#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "dsa4d/checkpoint.hpp"
#include "dsa4d/config.hpp"
#include "dsa4d/errors.hpp"
#include "dsa4d/mesh.hpp"
#include "dsa4d/phantom.hpp"
#include "dsa4d/pipeline.hpp"

using namespace dsa4d;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("dsa4d_io_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Dataset small_dataset(std::span<const int> idx) {
  ScanGeometry g;
  g.det_cols = 12;
  g.det_rows = 10;
  g.pitch_u_mm = g.pitch_v_mm = 20.0;
  g.num_frames_total = 60;
  GenerateOptions o;
  o.noise_sigma = 0.01;
  o.seed = 4;
  return generate_dataset(branching_y_scene(), g, idx, o, Exec::Serial);
}

json read(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2);
}

}  // namespace

TEST_CASE("dataset round trip is bitwise") {
  TempDir dir("roundtrip");
  const std::vector<int> idx = {1, 5, 9, 30, 60};
  const Dataset a = small_dataset(idx);
  save_dataset(a, dir.path);
  CHECK(fs::exists(dir.path / "manifest.json"));
  CHECK(fs::exists(dir.path / "previews"));
  const Dataset b = load_dataset(dir.path);
  REQUIRE(b.images.size() == a.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(b.images[i].values == a.images[i].values);
    CHECK(b.manifest.frames[i].index == a.manifest.frames[i].index);
    CHECK(b.manifest.frames[i].t_norm == a.manifest.frames[i].t_norm);
    CHECK(b.manifest.frames[i].angle_deg == a.manifest.frames[i].angle_deg);
  }
  CHECK(b.manifest.geometry.det_cols == 12);
  CHECK(b.manifest.geometry.sod_mm == a.manifest.geometry.sod_mm);
  CHECK(b.manifest.geometry.aabb.lo == a.manifest.geometry.aabb.lo);
  CHECK(b.manifest.provenance == a.manifest.provenance);
}

TEST_CASE("training subset keeps the original timestamps") {
  const auto [train, test] = split_views(60, 30);
  CHECK(train.size() == 30);
  CHECK(test.size() == 30);
  CHECK(train.front() == 1);
  const Dataset sub = small_dataset(train);
  for (std::size_t i = 0; i < train.size(); ++i) {
    // Frame i of a 60-frame sequence sits at (index - 1) / 59.
    CHECK(sub.manifest.frames[i].t_norm == doctest::Approx((train[i] - 1) / 59.0).epsilon(1e-15));
  }
  TempDir dir("subset");
  save_dataset(sub, dir.path);
  const Dataset back = load_dataset(dir.path);
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(back.manifest.frames[i].t_norm == sub.manifest.frames[i].t_norm);
  std::vector<int> all(train);
  all.insert(all.end(), test.begin(), test.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 60; ++i) CHECK(all[i] == i + 1);
}

TEST_CASE("dataset validation errors") {
  TempDir dir("invalid");
  const std::vector<int> idx = {2, 4};
  save_dataset(small_dataset(idx), dir.path);
  const fs::path manifest = dir.path / "manifest.json";
  const json good = read(manifest);

  SUBCASE("missing frame file names the file") {
    const std::string file = good["frames"][1]["file"];
    fs::remove(dir.path / file);
    try {
      load_dataset(dir.path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(fs::path(file).filename().string()) != std::string::npos);
    }
  }
  SUBCASE("future manifest version") {
    json j = good;
    j["version"] = kManifestVersion + 1;
    write(manifest, j);
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
  }
  SUBCASE("wrong endianness") {
    json j = good;
    j["endianness"] = "big";
    write(manifest, j);
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
  }
  SUBCASE("dimension mismatch") {
    json j = good;
    j["geometry"]["det_cols"] = 13;
    write(manifest, j);
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
  }
  SUBCASE("t_norm inconsistent with the frame count") {
    json j = good;
    j["frames"][0]["t_norm"] = 0.5;
    write(manifest, j);
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
  }
  SUBCASE("missing manifest") {
    fs::remove(manifest);
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
  }
}

TEST_CASE("image and volume round trips") {
  TempDir dir("payloads");
  ProjectionImage img(7, 5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : img.values) v = u(rng);
  save_image(dir.path / "img", img, {{"t_norm", 0.25}});
  const ProjectionImage back = load_image(dir.path / "img");
  CHECK(back.cols == 7);
  CHECK(back.rows == 5);
  CHECK(back.values == img.values);

  Lattice l;
  l.nx = 4;
  l.ny = 3;
  l.nz = 2;
  l.voxel_mm = 1.5;
  l.origin = Vec3(-1, 2, 3);
  VolumeImage vol(l, "mu_c", 0.4);
  for (float& v : vol.values) v = u(rng);
  save_volume(dir.path / "vol", vol);
  const VolumeImage vb = load_volume(dir.path / "vol");
  CHECK(vb.values == vol.values);
  CHECK(vb.lattice.nx == 4);
  CHECK(vb.lattice.nz == 2);
  CHECK(vb.lattice.voxel_mm == 1.5);
  CHECK(vb.lattice.origin == l.origin);
  CHECK(vb.kind == "mu_c");
  CHECK(vb.t_norm == 0.4);

  // Truncated payload.
  fs::resize_file(dir.path / "vol.raw", 8);
  CHECK_THROWS_AS(load_volume(dir.path / "vol"), DataError);
  CHECK_THROWS_AS(load_image(dir.path / "nothing"), DataError);
}

TEST_CASE("raw floats are little-endian 32-bit") {
  TempDir dir("raw");
  write_raw_floats(dir.path / "x.raw", {1.0f, -2.5f});
  std::ifstream in(dir.path / "x.raw", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 8);
  // 1.0f = 0x3f800000, -2.5f = 0xc0200000.
  CHECK(bytes[0] == 0x00);
  CHECK(bytes[3] == 0x3f);
  CHECK(bytes[2] == 0x80);
  CHECK(bytes[7] == 0xc0);
  CHECK(bytes[6] == 0x20);
  CHECK_THROWS_AS(read_raw_floats(dir.path / "x.raw", 3), DataError);
}

TEST_CASE("ply round trip") {
  TempDir dir("ply");
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1.25, 0, 0), Vec3(0, 2.5, -1), Vec3(0.1, 0.2, 0.3)};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  save_ply(dir.path / "m.ply", m, {"iso 0.5"});
  const TriMesh b = load_ply(dir.path / "m.ply");
  CHECK(b.triangles == m.triangles);
  REQUIRE(b.vertices.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK((b.vertices[i] - m.vertices[i]).norm() < 1e-9);
  std::ofstream(dir.path / "bad.ply") << "not a ply\n";
  CHECK_THROWS_AS(load_ply(dir.path / "bad.ply"), DataError);
}

TEST_CASE("config round trip, overrides and unknown keys") {
  const TrainConfig d = desk_config();
  const json j = train_config_to_json(d);
  const TrainConfig back = train_config_from_json(j);
  CHECK(train_config_to_json(back) == j);
  CHECK(config_hash(j) == config_hash(train_config_to_json(back)));
  CHECK(config_hash(j).size() == 16);

  json k = j;
  apply_overrides(k, {"iterations=123", "fields.static_grid.levels=6", "ablation.use_lreg=false"});
  const TrainConfig o = train_config_from_json(k);
  CHECK(o.iterations == 123);
  CHECK(o.fields.static_grid.levels == 6);
  CHECK_FALSE(o.ablation.use_lreg);
  CHECK(config_hash(k) != config_hash(j));

  json bad = j;
  bad["fields"]["hiden_dim"] = 3;
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
  json bad2 = j;
  bad2["iteratons"] = 3;
  CHECK_THROWS_AS(train_config_from_json(bad2), ConfigError);
  json k2 = j;
  CHECK_THROWS_AS(apply_override(k2, "no_equals_sign"), ConfigError);

  // Partial configs keep defaults.
  const TrainConfig partial = train_config_from_json(json{{"iterations", 7}});
  CHECK(partial.iterations == 7);
  CHECK(partial.ray_batch == TrainConfig{}.ray_batch);

  const TrainConfig paper = paper_config();
  CHECK(paper.ray_batch == 2048);
  CHECK(paper.reg_points == 10000);
  CHECK(paper.iterations == 100000);
  CHECK(paper.fields.hidden_dim == 128);
  CHECK(paper.adam.lr0 == 7.5e-4);
  CHECK(paper.lambda_reg == 0.01);
}

TEST_CASE("checkpoint round trip is bitwise") {
  TempDir dir("ckpt");
  TrainConfig c = desk_config();
  c.fields.static_grid.levels = c.fields.dynamic_grid.levels = c.fields.prob_grid.levels = 3;
  c.fields.hidden_dim = 8;
  c.seed = 5;
  FieldSetConfig fc = c.fields;
  FieldSet<float> f(fc, 42);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& g : f.param_groups()) {
    for (float& v : g.params) v = u(rng);
  }
  const json meta = {{"timestamps", {0.0, 0.5}}, {"aabb_lo", {-110, -110, -110}}, {"aabb_hi", {110, 110, 110}}};
  save_checkpoint(dir.path / "m.ckpt", f, c, 17, meta);
  Checkpoint ck = load_checkpoint(dir.path / "m.ckpt");
  CHECK(ck.iteration == 17);
  CHECK(ck.meta == meta);
  CHECK(train_config_to_json(ck.config) == train_config_to_json(c));
  auto a = f.param_groups(), b = ck.fields.param_groups();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(std::equal(a[k].params.begin(), a[k].params.end(), b[k].params.begin(), b[k].params.end()));
  }
  const PointQuery qa = f.query({0.3, 0.4, 0.5}, 0.2);
  const PointQuery qb = ck.fields.query({0.3, 0.4, 0.5}, 0.2);
  CHECK(qa.mu_c == qb.mu_c);

  // Truncation and trailing bytes are both rejected.
  const auto size = fs::file_size(dir.path / "m.ckpt");
  fs::copy_file(dir.path / "m.ckpt", dir.path / "t.ckpt");
  fs::resize_file(dir.path / "t.ckpt", size - 4);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "t.ckpt"), DataError);
  fs::copy_file(dir.path / "m.ckpt", dir.path / "x.ckpt");
  std::ofstream(dir.path / "x.ckpt", std::ios::app | std::ios::binary) << "zz";
  CHECK_THROWS_AS(load_checkpoint(dir.path / "x.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "none.ckpt"), DataError);
}
