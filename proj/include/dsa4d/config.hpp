// JSON configuration: TrainConfig (de)serialization, dotted overrides and
// config hashing. Unknown keys are rejected so typos fail loudly.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsa4d/trainer.hpp"

namespace dsa4d {

/// Single-workstation configuration used by the CLI when no config file is given.
TrainConfig desk_config();
/// Hyperparameters at the published scale (config-only; far too slow for CI).
TrainConfig paper_config();

nlohmann::json train_config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json load_json_file(const std::filesystem::path& path);

/// Applies "a.b.c=value" to j. The value is parsed as JSON when possible and
/// taken as a string otherwise. Throws ConfigError on malformed input.
void apply_override(nlohmann::json& j, const std::string& assignment);
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& assignments);

/// 16-hex-digit FNV-1a hash of the compact JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace dsa4d
