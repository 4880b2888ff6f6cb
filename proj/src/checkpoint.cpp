#include "dualtrack/checkpoint.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "dualtrack/error.hpp"

namespace dualtrack {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string tensor_key(const std::string& name) {
  std::string key = name;
  std::replace(key.begin(), key.end(), '.', '$');
  return "t$" + key;
}

bool selected(const std::string& name, const std::vector<std::string>& modules) {
  if (modules.empty()) return true;
  const std::string top = name.substr(0, name.find('.'));
  return std::find(modules.begin(), modules.end(), top) != modules.end();
}

json manifest_json(const CheckpointManifest& m) {
  return {{"config_hash", m.config_hash}, {"stage", m.stage},
          {"step", m.step},               {"total_steps", m.total_steps},
          {"epoch", m.epoch},             {"seed", std::to_string(m.seed)},
          {"best_val_gpe_mm", m.best_val_gpe_mm}, {"complete", m.complete}};
}

CheckpointManifest read_manifest(torch::serialize::InputArchive& archive, const fs::path& path) {
  c10::IValue value;
  require(archive.try_read("manifest", value) && value.isString(), ErrorCategory::incompatible_checkpoint,
          path.string() + ": checkpoint has no manifest");
  try {
    const json j = json::parse(value.toStringRef());
    CheckpointManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.stage = j.at("stage").get<std::string>();
    m.step = j.at("step").get<std::int64_t>();
    m.total_steps = j.at("total_steps").get<std::int64_t>();
    m.epoch = j.at("epoch").get<int>();
    m.seed = std::stoull(j.at("seed").get<std::string>());
    m.best_val_gpe_mm = j.at("best_val_gpe_mm").get<double>();
    m.complete = j.at("complete").get<bool>();
    return m;
  } catch (const std::exception& e) {
    fail(ErrorCategory::incompatible_checkpoint, path.string() + ": bad manifest: " + e.what());
  }
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  require(fs::exists(path), ErrorCategory::io_error, "checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    fail(ErrorCategory::incompatible_checkpoint, path.string() + ": unreadable checkpoint");
  }
  return archive;
}

}  // namespace

void save_checkpoint(const fs::path& path, DualTrackModel& model, const CheckpointManifest& manifest,
                     torch::optim::Optimizer* optimizer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("manifest", c10::IValue(manifest_json(manifest).dump()));
  torch::NoGradGuard guard;
  for (const auto& p : model->named_parameters()) archive.write(tensor_key(p.key()), p.value().detach());
  for (const auto& b : model->named_buffers()) archive.write(tensor_key(b.key()), b.value().detach(), true);
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }
  const fs::path tmp = path.string() + ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
}

CheckpointManifest read_manifest(const fs::path& path) {
  auto archive = open_archive(path);
  return read_manifest(archive, path);
}

CheckpointManifest load_checkpoint(const fs::path& path, DualTrackModel& model, const std::vector<std::string>& modules,
                                   torch::optim::Optimizer* optimizer) {
  auto archive = open_archive(path);
  const CheckpointManifest m = read_manifest(archive, path);
  require(m.config_hash == model->config().hash(), ErrorCategory::incompatible_checkpoint,
          path.string() + ": config hash " + m.config_hash + " does not match model config " + model->config().hash());
  torch::NoGradGuard guard;
  auto load = [&](const std::string& name, torch::Tensor& target) {
    if (!selected(name, modules)) return;
    torch::Tensor value;
    require(archive.try_read(tensor_key(name), value), ErrorCategory::incompatible_checkpoint,
            path.string() + ": missing tensor " + name);
    require(value.sizes() == target.sizes(), ErrorCategory::incompatible_checkpoint,
            path.string() + ": shape mismatch for " + name);
    target.copy_(value);
  };
  for (auto& p : model->named_parameters()) load(p.key(), p.value());
  for (auto& b : model->named_buffers()) load(b.key(), b.value());
  if (optimizer) {
    torch::serialize::InputArchive opt;
    require(archive.try_read("optimizer", opt), ErrorCategory::incompatible_checkpoint,
            path.string() + ": checkpoint has no optimizer state");
    optimizer->load(opt);
  }
  return m;
}

}  // namespace dualtrack
