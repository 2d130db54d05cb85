#include "dsa4d/config.hpp"

#include <cstdio>
#include <fstream>

#include "dsa4d/errors.hpp"

using nlohmann::json;

namespace dsa4d {

namespace {

json grid_to_json(const HashGridConfig& g) {
  return {{"dims", g.dims},
          {"levels", g.levels},
          {"feat_dim", g.feat_dim},
          {"log2_table_size", g.log2_table_size},
          {"base_res", g.base_res},
          {"growth", g.growth}};
}

HashGridConfig grid_from_json(const json& j) {
  HashGridConfig g;
  g.dims = j.at("dims").get<int>();
  g.levels = j.at("levels").get<int>();
  g.feat_dim = j.at("feat_dim").get<int>();
  g.log2_table_size = j.at("log2_table_size").get<int>();
  g.base_res = j.at("base_res").get<int>();
  g.growth = j.at("growth").get<double>();
  return g;
}

json quad_to_json(const QuadratureConfig& q) {
  return {{"samples_per_ray", q.samples_per_ray}, {"jitter", q.jitter}};
}

QuadratureConfig quad_from_json(const json& j) {
  return {j.at("samples_per_ray").get<int>(), j.at("jitter").get<bool>()};
}

// Every key of `given` must exist in `schema` with a compatible kind.
void check_keys(const json& given, const json& schema, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config: '" + prefix + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    const json& ref = schema.at(key);
    if (ref.is_object()) {
      check_keys(value, ref, path);
    } else if (ref.is_number() != value.is_number() || ref.is_boolean() != value.is_boolean() ||
               ref.is_string() != value.is_string()) {
      throw ConfigError("config: wrong type for '" + path + "'");
    }
  }
}

}  // namespace

TrainConfig desk_config() {
  TrainConfig c;
  c.ray_batch = 256;
  c.reg_points = 2048;
  c.iterations = 20000;
  c.quad = {96, true};
  c.eval_quad = {256, false};
  c.fields.hidden_dim = 32;
  for (HashGridConfig* g : {&c.fields.static_grid, &c.fields.dynamic_grid, &c.fields.prob_grid}) {
    g->feat_dim = 2;
    g->log2_table_size = 14;
  }
  // Coarse dynamic levels settle on zero under L1 and never recover through the ReLU.
  c.fields.dynamic_grid.base_res = 8;
  c.fields.dynamic_grid.growth = 1.45;
  c.lreg_start = 2500;
  c.rays_per_chunk = 16;
  c.log_every = 500;
  return c;
}

TrainConfig paper_config() {
  TrainConfig c;
  c.iterations = 100000;
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {
      {"ray_batch", c.ray_batch},
      {"reg_points", c.reg_points},
      {"lambda_reg", c.lambda_reg},
      {"lreg_start", c.lreg_start},
      {"kernel_k", c.kernel_k},
      {"iterations", c.iterations},
      {"seed", c.seed},
      {"quad", quad_to_json(c.quad)},
      {"eval_quad", quad_to_json(c.eval_quad)},
      {"schedule", {{"initial_levels", c.schedule.initial_levels}, {"unlock_every", c.schedule.unlock_every}}},
      {"adam",
       {{"lr0", c.adam.lr0},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"eps", c.adam.eps},
        {"decay_factor", c.adam.decay_factor},
        {"decay_every", c.adam.decay_every}}},
      {"ablation",
       {{"use_vessel_prob", c.ablation.use_vessel_prob},
        {"use_progressive", c.ablation.use_progressive},
        {"use_temporal_perturb", c.ablation.use_temporal_perturb},
        {"use_lreg", c.ablation.use_lreg}}},
      {"fields",
       {{"static_grid", grid_to_json(c.fields.static_grid)},
        {"dynamic_grid", grid_to_json(c.fields.dynamic_grid)},
        {"prob_grid", grid_to_json(c.fields.prob_grid)},
        {"hidden_dim", c.fields.hidden_dim},
        {"num_layers", c.fields.num_layers},
        {"table_init", c.fields.table_init},
        {"final_layer_scale", c.fields.final_layer_scale},
        {"mu_scale", c.fields.mu_scale},
        {"decoder_bias", c.fields.decoder_bias},
        {"nonneg_output_init", c.fields.nonneg_output_init},
        {"mu_activation", c.fields.mu_activation == OutputActivation::Softplus ? "softplus" : "relu"}}},
      {"rays_per_chunk", c.rays_per_chunk},
      {"grad_mode", c.grad_mode == GradAccumulation::Atomic ? "atomic" : "per_worker"},
      {"checkpoint_every", c.checkpoint_every},
      {"log_every", c.log_every},
  };
}

TrainConfig train_config_from_json(const json& given) {
  const json schema = train_config_to_json(TrainConfig{});
  check_keys(given, schema, "");
  json j = schema;
  j.merge_patch(given);
  TrainConfig c;
  try {
    c.ray_batch = j.at("ray_batch").get<int>();
    c.reg_points = j.at("reg_points").get<int>();
    c.lambda_reg = j.at("lambda_reg").get<double>();
    c.lreg_start = j.at("lreg_start").get<int>();
    c.kernel_k = j.at("kernel_k").get<double>();
    c.iterations = j.at("iterations").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.quad = quad_from_json(j.at("quad"));
    c.eval_quad = quad_from_json(j.at("eval_quad"));
    c.schedule.initial_levels = j.at("schedule").at("initial_levels").get<int>();
    c.schedule.unlock_every = j.at("schedule").at("unlock_every").get<int>();
    const json& a = j.at("adam");
    c.adam.lr0 = a.at("lr0").get<double>();
    c.adam.beta1 = a.at("beta1").get<double>();
    c.adam.beta2 = a.at("beta2").get<double>();
    c.adam.eps = a.at("eps").get<double>();
    c.adam.decay_factor = a.at("decay_factor").get<double>();
    c.adam.decay_every = a.at("decay_every").get<int>();
    const json& ab = j.at("ablation");
    c.ablation.use_vessel_prob = ab.at("use_vessel_prob").get<bool>();
    c.ablation.use_progressive = ab.at("use_progressive").get<bool>();
    c.ablation.use_temporal_perturb = ab.at("use_temporal_perturb").get<bool>();
    c.ablation.use_lreg = ab.at("use_lreg").get<bool>();
    const json& f = j.at("fields");
    c.fields.static_grid = grid_from_json(f.at("static_grid"));
    c.fields.dynamic_grid = grid_from_json(f.at("dynamic_grid"));
    c.fields.prob_grid = grid_from_json(f.at("prob_grid"));
    c.fields.hidden_dim = f.at("hidden_dim").get<int>();
    c.fields.num_layers = f.at("num_layers").get<int>();
    c.fields.table_init = f.at("table_init").get<double>();
    c.fields.final_layer_scale = f.at("final_layer_scale").get<double>();
    c.fields.mu_scale = f.at("mu_scale").get<double>();
    c.fields.decoder_bias = f.at("decoder_bias").get<bool>();
    c.fields.nonneg_output_init = f.at("nonneg_output_init").get<bool>();
    const std::string act = f.at("mu_activation").get<std::string>();
    if (act != "relu" && act != "softplus") throw ConfigError("fields.mu_activation must be relu or softplus");
    c.fields.mu_activation = act == "softplus" ? OutputActivation::Softplus : OutputActivation::ReLU;
    c.fields.mode = c.composition();
    c.rays_per_chunk = j.at("rays_per_chunk").get<int>();
    const std::string gm = j.at("grad_mode").get<std::string>();
    if (gm == "atomic") {
      c.grad_mode = GradAccumulation::Atomic;
    } else if (gm == "per_worker") {
      c.grad_mode = GradAccumulation::PerWorker;
    } else {
      throw ConfigError("config: grad_mode must be 'per_worker' or 'atomic'");
    }
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.log_every = j.at("log_every").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

void apply_overrides(json& j, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) apply_override(j, a);
}

std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dsa4d
