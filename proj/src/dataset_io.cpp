#include "dsa4d/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dsa4d/errors.hpp"
#include "dsa4d/mesh.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dsa4d {

namespace {

constexpr const char* kEndian = "little";
constexpr const char* kDtype = "float32";

std::string path_str(const fs::path& p) { return p.string(); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path_str(path));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path_str(path) + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path_str(path));
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed for " + path_str(path));
}

void check_payload_header(const json& h, const fs::path& where) {
  if (h.value("endianness", "") != kEndian) {
    throw DataError(path_str(where) + ": unsupported endianness '" + h.value("endianness", "") + "'");
  }
  if (h.value("dtype", "") != kDtype) {
    throw DataError(path_str(where) + ": unsupported dtype '" + h.value("dtype", "") + "'");
  }
}

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

template <typename T>
T field(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw DataError(path_str(where) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(path_str(where) + ": bad field '" + key + "': " + e.what());
  }
}

}  // namespace

std::vector<double> Dataset::timestamps() const {
  std::vector<double> t;
  t.reserve(manifest.frames.size());
  for (const FrameRecord& f : manifest.frames) t.push_back(f.t_norm);
  return t;
}

json geometry_to_json(const ScanGeometry& g) {
  return {{"sod_mm", g.sod_mm},
          {"sdd_mm", g.sdd_mm},
          {"det_cols", g.det_cols},
          {"det_rows", g.det_rows},
          {"pitch_u_mm", g.pitch_u_mm},
          {"pitch_v_mm", g.pitch_v_mm},
          {"angle_start_deg", g.angle_start_deg},
          {"angle_range_deg", g.angle_range_deg},
          {"num_frames_total", g.num_frames_total},
          {"aabb_lo", {g.aabb.lo.x(), g.aabb.lo.y(), g.aabb.lo.z()}},
          {"aabb_hi", {g.aabb.hi.x(), g.aabb.hi.y(), g.aabb.hi.z()}}};
}

ScanGeometry geometry_from_json(const json& j) {
  static const char* known[] = {"sod_mm",          "sdd_mm",          "det_cols",
                                "det_rows",        "pitch_u_mm",      "pitch_v_mm",
                                "angle_start_deg", "angle_range_deg", "num_frames_total",
                                "aabb_lo",         "aabb_hi"};
  if (!j.is_object()) throw ConfigError("geometry: expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known)) {
      throw ConfigError("geometry: unknown key '" + key + "'");
    }
  }
  ScanGeometry g;
  try {
    g.sod_mm = j.value("sod_mm", g.sod_mm);
    g.sdd_mm = j.value("sdd_mm", g.sdd_mm);
    g.det_cols = j.value("det_cols", g.det_cols);
    g.det_rows = j.value("det_rows", g.det_rows);
    g.pitch_u_mm = j.value("pitch_u_mm", g.pitch_u_mm);
    g.pitch_v_mm = j.value("pitch_v_mm", g.pitch_v_mm);
    g.angle_start_deg = j.value("angle_start_deg", g.angle_start_deg);
    g.angle_range_deg = j.value("angle_range_deg", g.angle_range_deg);
    g.num_frames_total = j.value("num_frames_total", g.num_frames_total);
    if (j.contains("aabb_lo")) {
      const auto v = j.at("aabb_lo").get<std::array<double, 3>>();
      g.aabb.lo = Vec3(v[0], v[1], v[2]);
    }
    if (j.contains("aabb_hi")) {
      const auto v = j.at("aabb_hi").get<std::array<double, 3>>();
      g.aabb.hi = Vec3(v[0], v[1], v[2]);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return g;
}

void write_raw_floats(const fs::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path_str(path));
  std::vector<unsigned char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed for " + path_str(path));
}

std::vector<float> read_raw_floats(const fs::path& path, std::size_t expected_count) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw DataError("missing file " + path_str(path));
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw DataError("cannot stat " + path_str(path));
  if (bytes != expected_count * 4) {
    std::ostringstream msg;
    msg << path_str(path) << ": expected " << expected_count * 4 << " bytes, found " << bytes;
    throw DataError(msg.str());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path_str(path));
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read from " + path_str(path));
  std::vector<float> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
    values[i] = std::bit_cast<float>(u);
  }
  return values;
}

void write_pgm(const fs::path& path, const ProjectionImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path_str(path));
  float lo = 0.0f, hi = 0.0f;
  if (!img.values.empty()) {
    const auto [a, b] = std::minmax_element(img.values.begin(), img.values.end());
    lo = *a;
    hi = *b;
  }
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  out << "P5\n" << img.cols << ' ' << img.rows << "\n255\n";
  std::vector<unsigned char> line(img.cols);
  for (int row = img.rows - 1; row >= 0; --row) {
    for (int col = 0; col < img.cols; ++col) {
      const float v = (img.at(col, row) - lo) * scale;
      line[col] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
    }
    out.write(reinterpret_cast<const char*>(line.data()), img.cols);
  }
  if (!out) throw DataError("write failed for " + path_str(path));
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  const DatasetManifest& m = ds.manifest;
  if (m.frames.size() != ds.images.size()) {
    throw DataError("save_dataset: frame list and image stack sizes differ");
  }
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "previews");
  json frames = json::array();
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const FrameRecord& f = m.frames[i];
    const ProjectionImage& img = ds.images[i];
    if (img.cols != m.geometry.det_cols || img.rows != m.geometry.det_rows) {
      throw DataError("save_dataset: image " + std::to_string(f.index) + " has wrong dimensions");
    }
    const fs::path rel = f.file.empty() ? fs::path("frames") / ("frame_" + std::to_string(f.index) + ".raw")
                                        : fs::path(f.file);
    fs::create_directories((dir / rel).parent_path());
    write_raw_floats(dir / rel, img.values);
    fs::path preview = dir / "previews" / rel.filename();
    preview.replace_extension(".pgm");
    write_pgm(preview, img);
    frames.push_back({{"index", f.index},
                      {"angle_deg", f.angle_deg},
                      {"t_norm", f.t_norm},
                      {"file", rel.generic_string()}});
  }
  const json manifest = {{"format", "dsa4d-dataset"},
                         {"version", m.version},
                         {"endianness", kEndian},
                         {"dtype", kDtype},
                         {"geometry", geometry_to_json(m.geometry)},
                         {"frames", frames},
                         {"units", m.units},
                         {"provenance", m.provenance}};
  write_json(dir / "manifest.json", manifest);
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  const json j = read_json(mpath);
  if (j.value("format", "") != "dsa4d-dataset") throw DataError(path_str(mpath) + ": not a dataset manifest");
  const int version = field<int>(j, "version", mpath);
  if (version > kManifestVersion || version < 1) {
    throw DataError(path_str(mpath) + ": unsupported manifest version " + std::to_string(version));
  }
  check_payload_header(j, mpath);

  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.version = version;
  try {
    m.geometry = geometry_from_json(field<json>(j, "geometry", mpath));
  } catch (const ConfigError& e) {
    throw DataError(path_str(mpath) + ": " + e.what());
  }
  m.units = j.value("units", m.units);
  m.provenance = j.value("provenance", json("external"));
  const json frames = field<json>(j, "frames", mpath);
  if (!frames.is_array() || frames.empty()) throw DataError(path_str(mpath) + ": empty frame list");

  const ScanGeometry& g = m.geometry;
  const std::size_t npix = static_cast<std::size_t>(g.det_cols) * g.det_rows;
  for (const json& fj : frames) {
    FrameRecord f;
    f.index = field<int>(fj, "index", mpath);
    f.angle_deg = field<double>(fj, "angle_deg", mpath);
    f.t_norm = field<double>(fj, "t_norm", mpath);
    f.file = field<std::string>(fj, "file", mpath);
    if (f.index < 1 || f.index > g.num_frames_total) {
      throw DataError(path_str(mpath) + ": frame index " + std::to_string(f.index) + " out of range");
    }
    const FramePose pose = pose_for_frame(g, f.index);
    if (std::abs(pose.t_norm - f.t_norm) > 1e-9) {
      throw DataError(path_str(mpath) + ": frame " + std::to_string(f.index) +
                      " t_norm disagrees with num_frames_total");
    }
    const fs::path fpath = dir / f.file;
    if (!fs::exists(fpath)) throw DataError("missing frame file " + path_str(fpath));
    ProjectionImage img(g.det_cols, g.det_rows);
    img.values = read_raw_floats(fpath, npix);
    m.frames.push_back(f);
    ds.images.push_back(std::move(img));
  }
  return ds;
}

void save_image(const fs::path& stem, const ProjectionImage& img, const json& meta) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  write_raw_floats(with_ext(stem, ".raw"), img.values);
  write_pgm(with_ext(stem, ".pgm"), img);
  const json h = {{"format", "dsa4d-image"}, {"version", 1},         {"endianness", kEndian},
                  {"dtype", kDtype},         {"cols", img.cols},     {"rows", img.rows},
                  {"data", stem.filename().string() + ".raw"},       {"meta", meta}};
  write_json(with_ext(stem, ".json"), h);
}

ProjectionImage load_image(const fs::path& stem) {
  const fs::path hp = with_ext(stem, ".json");
  const json h = read_json(hp);
  if (h.value("format", "") != "dsa4d-image") throw DataError(path_str(hp) + ": not an image header");
  check_payload_header(h, hp);
  ProjectionImage img(field<int>(h, "cols", hp), field<int>(h, "rows", hp));
  if (img.cols <= 0 || img.rows <= 0) throw DataError(path_str(hp) + ": bad dimensions");
  img.values = read_raw_floats(with_ext(stem, ".raw"), img.values.size());
  return img;
}

void save_volume(const fs::path& stem, const VolumeImage& vol) {
  const Lattice& l = vol.lattice;
  if (vol.values.size() != l.size()) throw DataError("save_volume: value count does not match lattice");
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  write_raw_floats(with_ext(stem, ".raw"), vol.values);
  json h = {{"format", "dsa4d-volume"},
            {"version", 1},
            {"endianness", kEndian},
            {"dtype", kDtype},
            {"dims", {l.nx, l.ny, l.nz}},
            {"voxel_mm", l.voxel_mm},
            {"origin_mm", {l.origin.x(), l.origin.y(), l.origin.z()}},
            {"kind", vol.kind},
            {"data", stem.filename().string() + ".raw"}};
  h["t_norm"] = vol.t_norm >= 0.0 ? json(vol.t_norm) : json(nullptr);
  write_json(with_ext(stem, ".json"), h);
}

VolumeImage load_volume(const fs::path& stem) {
  const fs::path hp = with_ext(stem, ".json");
  const json h = read_json(hp);
  if (h.value("format", "") != "dsa4d-volume") throw DataError(path_str(hp) + ": not a volume header");
  check_payload_header(h, hp);
  const auto dims = field<std::array<int, 3>>(h, "dims", hp);
  const auto origin = field<std::array<double, 3>>(h, "origin_mm", hp);
  Lattice l;
  l.nx = dims[0];
  l.ny = dims[1];
  l.nz = dims[2];
  l.voxel_mm = field<double>(h, "voxel_mm", hp);
  l.origin = Vec3(origin[0], origin[1], origin[2]);
  if (l.nx <= 0 || l.ny <= 0 || l.nz <= 0 || !(l.voxel_mm > 0.0)) {
    throw DataError(path_str(hp) + ": bad lattice");
  }
  VolumeImage vol(l, h.value("kind", std::string()));
  if (h.contains("t_norm") && !h["t_norm"].is_null()) vol.t_norm = h["t_norm"].get<double>();
  vol.values = read_raw_floats(with_ext(stem, ".raw"), l.size());
  return vol;
}

void save_ply(const fs::path& path, const TriMesh& mesh, const std::vector<std::string>& comments) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path_str(path));
  out << "ply\nformat ascii 1.0\n";
  for (const std::string& c : comments) out << "comment " << c << '\n';
  out << "element vertex " << mesh.vertices.size() << "\nproperty float x\nproperty float y\n"
      << "property float z\nelement face " << mesh.triangles.size()
      << "\nproperty list uchar int vertex_indices\nend_header\n";
  out.precision(9);
  for (const Vec3& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  if (!out) throw DataError("write failed for " + path_str(path));
}

TriMesh load_ply(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path_str(path));
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw DataError(path_str(path) + ": not a PLY file");
  std::size_t nv = 0, nf = 0;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      std::string name;
      std::size_t n = 0;
      ls >> name >> n;
      if (name == "vertex") nv = n;
      if (name == "face") nf = n;
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw DataError(path_str(path) + ": only ASCII PLY is supported");
  TriMesh mesh;
  mesh.vertices.resize(nv);
  for (Vec3& v : mesh.vertices) {
    if (!(in >> v.x() >> v.y() >> v.z())) throw DataError(path_str(path) + ": truncated vertex list");
    std::getline(in, line);
  }
  mesh.triangles.resize(nf);
  for (auto& t : mesh.triangles) {
    int k = 0;
    if (!(in >> k) || k != 3) throw DataError(path_str(path) + ": only triangle faces are supported");
    if (!(in >> t[0] >> t[1] >> t[2])) throw DataError(path_str(path) + ": truncated face list");
  }
  try {
    mesh.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(path_str(path) + ": " + e.what());
  }
  return mesh;
}

}  // namespace dsa4d
