#include "dualtrack/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "dualtrack/error.hpp"

namespace dualtrack {

namespace {

using json = nlohmann::json;

json to_json(const TransformerConfig& t) {
  return {{"hidden", t.hidden}, {"intermediate", t.intermediate}, {"layers", t.layers}, {"heads", t.heads}};
}

json model_json(const ModelConfig& m) {
  return {{"image", {m.image_height, m.image_width}},
          {"local",
           {{"channels", m.local.channels},
            {"temporal_kernels", m.local.temporal_kernels},
            {"causal", m.local.causal},
            {"pooled_dim", m.local.pooled_dim},
            {"pool_heads", m.local.pool_heads}}},
          {"global",
           {{"backbone", m.global.backbone},
            {"channels", m.global.channels},
            {"feature_dim", m.global.feature_dim},
            {"temporal", to_json(m.global.temporal)},
            {"input", {m.global.input_height, m.global.input_width}}}},
          {"fusion",
           {{"interposer", to_json(m.fusion.interposer)},
            {"decoder", to_json(m.fusion.decoder)},
            {"global_stride", m.fusion.global_stride}}},
          {"coupled", to_json(m.coupled)}};
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (!node || !node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception& e) {
    fail(ErrorCategory::invalid_argument, std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void read_transformer(const YAML::Node& node, TransformerConfig& t) {
  if (!node) return;
  read(node, "hidden", t.hidden);
  read(node, "intermediate", t.intermediate);
  read(node, "layers", t.layers);
  read(node, "heads", t.heads);
}

void read_model(const YAML::Node& node, ModelConfig& m) {
  if (!node) return;
  read(node, "image_height", m.image_height);
  read(node, "image_width", m.image_width);
  if (const auto l = node["local"]) {
    read(l, "channels", m.local.channels);
    read(l, "temporal_kernels", m.local.temporal_kernels);
    read(l, "causal", m.local.causal);
    read(l, "pooled_dim", m.local.pooled_dim);
    read(l, "pool_heads", m.local.pool_heads);
  }
  if (const auto g = node["global"]) {
    read(g, "backbone", m.global.backbone);
    read(g, "channels", m.global.channels);
    read(g, "feature_dim", m.global.feature_dim);
    read(g, "input_height", m.global.input_height);
    read(g, "input_width", m.global.input_width);
    read_transformer(g["temporal"], m.global.temporal);
  }
  if (const auto f = node["fusion"]) {
    read_transformer(f["interposer"], m.fusion.interposer);
    read_transformer(f["decoder"], m.fusion.decoder);
    read(f, "global_stride", m.fusion.global_stride);
  }
  read_transformer(node["coupled"], m.coupled);
}

void read_generate(const YAML::Node& node, GenerateConfig& g) {
  if (!node) return;
  if (node["splits"]) {
    g.split_counts.clear();
    for (const auto& kv : node["splits"]) g.split_counts[kv.first.as<std::string>()] = kv.second.as<int>();
  }
  read(node, "num_frames", g.num_frames);
  read(node, "width", g.width);
  read(node, "height", g.height);
  read(node, "pixel_spacing_mm", g.pixel_spacing_mm);
  read(node, "phantom_size", g.phantom_size);
  read(node, "voxel_spacing_mm", g.voxel_spacing_mm);
  read(node, "n_landmarks", g.n_landmarks);
  read(node, "sweeps_per_phantom", g.sweeps_per_phantom);
  read(node, "length_range_mm", g.length_range_mm);
  read(node, "rotation_range_deg", g.rotation_range_deg);
  read(node, "noise_level", g.noise_level);
  read(node, "seed", g.seed);
  if (node["family_mix"]) {
    g.family_mix.clear();
    for (const auto& kv : node["family_mix"]) {
      g.family_mix[trajectory_family_from_string(kv.first.as<std::string>())] = kv.second.as<double>();
    }
  }
}

StagePlan* find_plan(TrainConfig& c, Stage s) {
  for (auto& p : c.stages) {
    if (p.stage == s) return &p;
  }
  return nullptr;
}

void read_stages(const YAML::Node& node, TrainConfig& c) {
  if (!node) return;
  require(node.IsMap(), ErrorCategory::invalid_argument, "config: 'stages' must be a map keyed by stage name");
  for (const auto& kv : node) {
    const Stage s = stage_from_string(kv.first.as<std::string>());
    StagePlan* plan = find_plan(c, s);
    if (!plan) {
      c.stages.push_back(StagePlan{});
      plan = &c.stages.back();
      plan->stage = s;
    }
    const auto& n = kv.second;
    read(n, "epochs", plan->epochs);
    read(n, "learning_rate", plan->learning_rate);
    read(n, "weight_decay", plan->weight_decay);
    read(n, "batch_size", plan->batch_size);
    read(n, "window", plan->window);
    read(n, "global_count", plan->global_count);
    read(n, "freeze_local_cnn", plan->freeze_local_cnn);
    read(n, "val_every", plan->val_every);
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

StagePlan make_plan(Stage s, int epochs, double lr, double wd, int batch) {
  StagePlan p;
  p.stage = s;
  p.epochs = epochs;
  p.learning_rate = lr;
  p.weight_decay = wd;
  p.batch_size = batch;
  return p;
}

}  // namespace

void TransformerConfig::validate(const std::string& what) const {
  require(hidden > 0 && intermediate > 0 && layers >= 0 && heads > 0, ErrorCategory::invalid_argument,
          what + ": transformer sizes must be positive");
  require(hidden % heads == 0, ErrorCategory::invalid_argument, what + ": hidden must be divisible by heads");
}

int LocalEncoderConfig::radius() const {
  int r = 0;
  for (int k : temporal_kernels) r += causal ? k - 1 : (k - 1) / 2;
  return r;
}

void LocalEncoderConfig::validate() const {
  require(channels.size() == 4 && temporal_kernels.size() == 4, ErrorCategory::invalid_argument,
          "local encoder: exactly four stages are required");
  for (int c : channels) require(c > 0, ErrorCategory::invalid_argument, "local encoder: channels must be positive");
  int receptive = 1;
  for (int k : temporal_kernels) {
    require(k >= 1, ErrorCategory::invalid_argument, "local encoder: temporal kernels must be >= 1");
    require(causal || k % 2 == 1, ErrorCategory::invalid_argument,
            "local encoder: temporal kernels must be odd unless causal");
    receptive += k - 1;
  }
  require(receptive <= 9, ErrorCategory::invalid_argument, "local encoder: temporal receptive field exceeds 9 frames");
  require(pooled_dim > 0 && pool_heads > 0 && pooled_dim % pool_heads == 0, ErrorCategory::invalid_argument,
          "local encoder: pooled_dim must be divisible by pool_heads");
}

void GlobalEncoderConfig::validate() const {
  require(!backbone.empty(), ErrorCategory::invalid_argument, "global encoder: backbone name is empty");
  require(channels.size() == 4, ErrorCategory::invalid_argument, "global encoder: exactly four stages are required");
  require(input_height % 16 == 0 && input_width % 16 == 0 && input_height > 0 && input_width > 0,
          ErrorCategory::invalid_argument, "global encoder: input size must be a positive multiple of 16");
  require(feature_dim > 0, ErrorCategory::invalid_argument, "global encoder: feature_dim must be positive");
  temporal.validate("global temporal");
}

void FusionConfig::validate() const {
  interposer.validate("interposer");
  decoder.validate("decoder");
  require(global_stride >= 1, ErrorCategory::invalid_argument, "fusion: global_stride must be >= 1");
}

void ModelConfig::validate() const {
  require(image_height % 16 == 0 && image_width % 16 == 0 && image_height > 0 && image_width > 0,
          ErrorCategory::invalid_argument, "model: image size must be a positive multiple of 16");
  local.validate();
  global.validate();
  fusion.validate();
  coupled.validate("coupled");
  require(global.feature_dim == local.pooled_dim, ErrorCategory::invalid_argument,
          "model: global feature_dim must equal local pooled_dim");
}

std::string ModelConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(model_json(*this).dump())));
  return buf;
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::local_cnn: return "local_cnn";
    case Stage::local_pool: return "local_pool";
    case Stage::global: return "global";
    case Stage::fusion: return "fusion";
    case Stage::coupled: return "coupled";
  }
  return "local_cnn";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::local_cnn, Stage::local_pool, Stage::global, Stage::fusion, Stage::coupled}) {
    if (to_string(st) == s) return st;
  }
  fail(ErrorCategory::invalid_argument, "unknown stage '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::zero: return "zero";
    case Variant::local_only: return "local_only";
    case Variant::coupled: return "coupled";
    case Variant::dualtrack: return "dualtrack";
  }
  return "zero";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::zero, Variant::local_only, Variant::coupled, Variant::dualtrack}) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorCategory::invalid_argument, "unknown variant '" + s + "'");
}

void StagePlan::validate() const {
  const std::string name = to_string(stage);
  require(epochs >= 0, ErrorCategory::invalid_argument, name + ": epochs must be >= 0");
  require(learning_rate > 0.0 && weight_decay >= 0.0, ErrorCategory::invalid_argument,
          name + ": learning_rate must be positive and weight_decay non-negative");
  require(batch_size >= 1, ErrorCategory::invalid_argument, name + ": batch_size must be >= 1");
  require(window >= 2 && global_count >= 2, ErrorCategory::invalid_argument,
          name + ": window and global_count must be >= 2");
  require(val_every >= 0, ErrorCategory::invalid_argument, name + ": val_every must be >= 0");
}

const StagePlan& TrainConfig::plan(Stage s) const {
  for (const auto& p : stages) {
    if (p.stage == s) return p;
  }
  fail(ErrorCategory::invalid_argument, "config has no plan for stage '" + to_string(s) + "'");
}

void TrainConfig::validate() const {
  model.validate();
  for (const auto& p : stages) p.validate();
  require(checkpoint_every >= 0, ErrorCategory::invalid_argument, "checkpoint_every must be >= 0");
}

TrainConfig desk_preset() {
  TrainConfig c;
  c.preset = "desk";
  c.stages = {make_plan(Stage::local_cnn, 200, 1e-3, 1e-3, 8), make_plan(Stage::local_pool, 100, 1e-3, 0.0, 8),
              make_plan(Stage::global, 100, 5e-4, 0.0, 8), make_plan(Stage::fusion, 100, 5e-4, 1e-3, 8),
              make_plan(Stage::coupled, 100, 5e-4, 1e-3, 4)};
  return c;
}

TrainConfig paper_preset() {
  TrainConfig c;
  c.preset = "paper";
  c.model.image_height = c.model.image_width = 224;
  c.model.local.channels = {64, 128, 256, 512};
  c.model.local.pooled_dim = 512;
  c.model.local.pool_heads = 8;
  c.model.global.channels = {32, 64, 128, 256};
  c.model.global.feature_dim = 512;
  c.model.global.input_height = c.model.global.input_width = 224;
  c.model.global.temporal = {512, 1024, 8, 8};
  c.model.fusion.interposer = {64, 32, 4, 4};
  c.model.fusion.decoder = {512, 1024, 8, 8};
  c.model.coupled = {512, 1024, 8, 8};
  c.stages = {make_plan(Stage::local_cnn, 4000, 1e-4, 1e-3, 8), make_plan(Stage::local_pool, 500, 1e-4, 0.0, 8),
              make_plan(Stage::global, 800, 1e-4, 0.0, 8), make_plan(Stage::fusion, 500, 1e-4, 1e-3, 1),
              make_plan(Stage::coupled, 500, 1e-4, 1e-3, 1)};
  c.generate.width = c.generate.height = 224;
  return c;
}

TrainConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    fail(ErrorCategory::invalid_argument, std::string("config: ") + e.what());
  }
  std::string preset = "desk";
  read(root, "preset", preset);
  TrainConfig c;
  if (preset == "desk") {
    c = desk_preset();
  } else if (preset == "paper") {
    c = paper_preset();
  } else {
    fail(ErrorCategory::invalid_argument, "config: unknown preset '" + preset + "'");
  }
  std::string root_dir;
  read(root, "dataset_root", root_dir);
  if (!root_dir.empty()) c.dataset_root = root_dir;
  read(root, "seed", c.seed);
  read(root, "deterministic", c.deterministic);
  read(root, "checkpoint_every", c.checkpoint_every);
  read_model(root["model"], c.model);
  read_stages(root["stages"], c);
  read_generate(root["generate"], c.generate);
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCategory::io_error, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  TrainConfig c = parse_config(ss.str());
  if (!c.dataset_root.empty() && c.dataset_root.is_relative()) c.dataset_root = path.parent_path() / c.dataset_root;
  return c;
}

namespace {

void emit(YAML::Emitter& out, const char* key, const TransformerConfig& t) {
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "hidden" << YAML::Value << t.hidden;
  out << YAML::Key << "intermediate" << YAML::Value << t.intermediate;
  out << YAML::Key << "layers" << YAML::Value << t.layers;
  out << YAML::Key << "heads" << YAML::Value << t.heads;
  out << YAML::EndMap;
}

void emit(YAML::Emitter& out, const ModelConfig& m) {
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "image_height" << YAML::Value << m.image_height;
  out << YAML::Key << "image_width" << YAML::Value << m.image_width;
  out << YAML::Key << "local" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "channels" << YAML::Value << YAML::Flow << m.local.channels;
  out << YAML::Key << "temporal_kernels" << YAML::Value << YAML::Flow << m.local.temporal_kernels;
  out << YAML::Key << "causal" << YAML::Value << m.local.causal;
  out << YAML::Key << "pooled_dim" << YAML::Value << m.local.pooled_dim;
  out << YAML::Key << "pool_heads" << YAML::Value << m.local.pool_heads;
  out << YAML::EndMap;
  out << YAML::Key << "global" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "backbone" << YAML::Value << m.global.backbone;
  out << YAML::Key << "channels" << YAML::Value << YAML::Flow << m.global.channels;
  out << YAML::Key << "feature_dim" << YAML::Value << m.global.feature_dim;
  out << YAML::Key << "input_height" << YAML::Value << m.global.input_height;
  out << YAML::Key << "input_width" << YAML::Value << m.global.input_width;
  emit(out, "temporal", m.global.temporal);
  out << YAML::EndMap;
  out << YAML::Key << "fusion" << YAML::Value << YAML::BeginMap;
  emit(out, "interposer", m.fusion.interposer);
  emit(out, "decoder", m.fusion.decoder);
  out << YAML::Key << "global_stride" << YAML::Value << m.fusion.global_stride;
  out << YAML::EndMap;
  emit(out, "coupled", m.coupled);
  out << YAML::EndMap;
}

}  // namespace

std::string dump_config(const TrainConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "preset" << YAML::Value << c.preset;
  out << YAML::Key << "dataset_root" << YAML::Value << c.dataset_root.string();
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "deterministic" << YAML::Value << c.deterministic;
  out << YAML::Key << "checkpoint_every" << YAML::Value << c.checkpoint_every;
  out << YAML::Key << "model_hash" << YAML::Value << c.model.hash();
  out << YAML::Key << "stages" << YAML::Value << YAML::BeginMap;
  for (const auto& p : c.stages) {
    out << YAML::Key << to_string(p.stage) << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "epochs" << YAML::Value << p.epochs;
    out << YAML::Key << "learning_rate" << YAML::Value << p.learning_rate;
    out << YAML::Key << "weight_decay" << YAML::Value << p.weight_decay;
    out << YAML::Key << "batch_size" << YAML::Value << p.batch_size;
    out << YAML::Key << "window" << YAML::Value << p.window;
    out << YAML::Key << "global_count" << YAML::Value << p.global_count;
    out << YAML::Key << "freeze_local_cnn" << YAML::Value << p.freeze_local_cnn;
    out << YAML::Key << "val_every" << YAML::Value << p.val_every;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  emit(out, c.model);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace dualtrack
