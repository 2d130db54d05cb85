#include "dsa4d/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "dsa4d/config.hpp"
#include "dsa4d/errors.hpp"

using nlohmann::json;

namespace dsa4d {

namespace {

constexpr const char* kEndMarker = "END_HEADER";

template <typename F>
void for_each_group(const FieldSet<float>& f, F&& fn) {
  fn(f.static_grid().params());
  fn(f.dynamic_grid().params());
  fn(f.prob_grid().params());
  fn(f.static_mlp().params());
  fn(f.dynamic_mlp().params());
  fn(f.prob_mlp().params());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FieldSet<float>& fields,
                     const TrainConfig& cfg, int iteration, const json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  json sizes = json::array();
  for_each_group(fields, [&](std::span<const float> p) { sizes.push_back(p.size()); });
  const json header = {{"format", "dsa4d-checkpoint"}, {"version", 1},
                       {"endianness", "little"},       {"dtype", "float32"},
                       {"iteration", iteration},       {"config", train_config_to_json(cfg)},
                       {"composition", fields.mode() == Composition::Guided ? "guided" : "naive"},
                       {"group_sizes", sizes},         {"meta", meta}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n' << kEndMarker << '\n';
  std::vector<unsigned char> buf;
  for_each_group(fields, [&](std::span<const float> p) {
    buf.resize(p.size() * 4);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(p[i]);
      for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>(u >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  });
  if (!out) throw DataError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line, marker;
  std::getline(in, line);
  std::getline(in, marker);
  if (marker != kEndMarker) throw DataError(path.string() + ": missing checkpoint header terminator");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  if (h.value("format", "") != "dsa4d-checkpoint") throw DataError(path.string() + ": not a checkpoint");
  if (h.value("version", 0) != 1) throw DataError(path.string() + ": unsupported checkpoint version");
  if (h.value("endianness", "") != "little" || h.value("dtype", "") != "float32") {
    throw DataError(path.string() + ": unsupported payload encoding");
  }
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(h.at("config"));
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  ck.iteration = h.value("iteration", 0);
  ck.meta = h.value("meta", json::object());
  FieldSetConfig fc = ck.config.fields;
  fc.mode = h.value("composition", "guided") == "naive" ? Composition::Naive : Composition::Guided;
  ck.fields = FieldSet<float>(fc, ck.config.seed);
  const auto sizes = h.at("group_sizes").get<std::vector<std::size_t>>();
  auto groups = ck.fields.param_groups();
  if (sizes.size() != groups.size()) throw DataError(path.string() + ": wrong number of parameter groups");
  std::vector<unsigned char> buf;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (sizes[g] != groups[g].params.size()) {
      throw DataError(path.string() + ": parameter group " + std::to_string(g) + " size mismatch");
    }
    buf.resize(sizes[g] * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError(path.string() + ": truncated payload");
    for (std::size_t i = 0; i < sizes[g]; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
      groups[g].params[i] = std::bit_cast<float>(u);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes");
  const int levels = ck.config.fields.static_grid.levels;
  ck.fields.set_active_levels(ck.config.ablation.use_progressive
                                  ? active_levels_at(std::max(0, ck.iteration - 1), ck.config.schedule, levels)
                                  : levels);
  return ck;
}

}  // namespace dsa4d
