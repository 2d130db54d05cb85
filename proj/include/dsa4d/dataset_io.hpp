// On-disk formats: projection datasets, raw float images, volumes, meshes.
//
// Every binary payload is little-endian IEEE-754 float32. Headers are JSON
// and declare the endianness so that loaders reject rather than misread.
// Byte-level layouts are documented in docs/formats.md.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsa4d/geometry.hpp"
#include "dsa4d/volume.hpp"

namespace dsa4d {

struct TriMesh;

inline constexpr int kManifestVersion = 1;

struct ProjectionImage {
  int cols = 0;
  int rows = 0;
  std::vector<float> values;  // row-major: values[row * cols + col]

  ProjectionImage() = default;
  ProjectionImage(int c, int r) : cols(c), rows(r), values(static_cast<std::size_t>(c) * r, 0.0f) {}
  float& at(int col, int row) { return values[static_cast<std::size_t>(row) * cols + col]; }
  float at(int col, int row) const { return values[static_cast<std::size_t>(row) * cols + col]; }
};

struct FrameRecord {
  int index = 1;
  double angle_deg = 0.0;
  double t_norm = 0.0;
  std::string file;  // relative to the dataset directory
};

struct DatasetManifest {
  int version = kManifestVersion;
  ScanGeometry geometry;
  std::vector<FrameRecord> frames;
  std::string units = "line integral of contrast attenuation (dimensionless)";
  nlohmann::json provenance = "external";
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ProjectionImage> images;

  std::vector<double> timestamps() const;
};

nlohmann::json geometry_to_json(const ScanGeometry& g);
ScanGeometry geometry_from_json(const nlohmann::json& j);

/// Writes manifest.json, frames/*.raw and previews/*.pgm under dir.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Loads and validates a dataset directory; throws DataError on any mismatch.
Dataset load_dataset(const std::filesystem::path& dir);

void write_raw_floats(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_raw_floats(const std::filesystem::path& path, std::size_t expected_count);

/// Min-max normalized 8-bit binary PGM. Row 0 of the image is written last so
/// +z points up in viewers.
void write_pgm(const std::filesystem::path& path, const ProjectionImage& img);

/// Standalone image: <stem>.raw plus <stem>.json header.
void save_image(const std::filesystem::path& stem, const ProjectionImage& img,
                const nlohmann::json& meta = nlohmann::json::object());
ProjectionImage load_image(const std::filesystem::path& stem);

/// Volume: <stem>.raw plus <stem>.json header (dims, voxel size, origin, kind, timestamp).
void save_volume(const std::filesystem::path& stem, const VolumeImage& vol);
VolumeImage load_volume(const std::filesystem::path& stem);

/// ASCII PLY with vertex and triangle-face elements.
void save_ply(const std::filesystem::path& path, const TriMesh& mesh,
              const std::vector<std::string>& comments = {});
TriMesh load_ply(const std::filesystem::path& path);

}  // namespace dsa4d
