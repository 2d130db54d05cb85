// Model checkpoints: a JSON header terminated by an "END_HEADER" line,
// followed by the six parameter groups as little-endian float32 in the order
// static grid, dynamic grid, prob grid, static mlp, dynamic mlp, prob mlp.
#pragma once

#include <filesystem>

#include <json.hpp>

#include "dsa4d/fields.hpp"
#include "dsa4d/trainer.hpp"

namespace dsa4d {

struct Checkpoint {
  TrainConfig config;
  int iteration = 0;  // number of completed optimization steps
  nlohmann::json meta = nlohmann::json::object();
  FieldSet<float> fields;
};

/// meta should carry at least "aabb_lo", "aabb_hi" and "timestamps" for downstream tools.
void save_checkpoint(const std::filesystem::path& path, const FieldSet<float>& fields,
                     const TrainConfig& cfg, int iteration, const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsa4d
