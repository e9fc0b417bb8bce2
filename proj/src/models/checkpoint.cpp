#include "pocus/models/checkpoint.hpp"

#include <fmt/format.h>

#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus::models {

using nlohmann::json;

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Arch arch, int fold) {
  return dir / fmt::format("{}_fold{}.bin", to_string(arch), fold);
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p.replace_extension(".json");
  return p;
}

json to_json(const CheckpointMeta& m) {
  return json{{"config", to_json(m.config)}, {"fold", m.fold},
              {"seed", m.seed},              {"epoch", m.epoch},
              {"val_metrics", m.val_metrics}, {"split_hash", m.split_hash}};
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  try {
    m.config = config_from_json(j.at("config"));
    m.fold = j.value("fold", -1);
    m.seed = j.value("seed", std::uint64_t{0});
    m.epoch = j.value("epoch", 0);
    m.val_metrics = j.value("val_metrics", json::object());
    m.split_hash = j.value("split_hash", std::string());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint sidecar: ") + e.what());
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Classifier& model,
                     const CheckpointMeta& meta) {
  nn::save_tensors(path, model.state());
  write_file_atomic(sidecar_path(path), to_json(meta).dump(2) + "\n");
}

CheckpointMeta load_checkpoint_meta(const std::filesystem::path& path) {
  const auto side = sidecar_path(path);
  if (!std::filesystem::exists(side)) throw IoError("checkpoint sidecar not found: " + side.string());
  try {
    return meta_from_json(json::parse(read_file(side)));
  } catch (const json::parse_error& e) {
    throw SchemaError(side.string() + ": " + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  CheckpointMeta meta = load_checkpoint_meta(path);
  Classifier model(meta.config);
  model.load_state(nn::load_tensors(path));
  return LoadedCheckpoint{std::move(model), std::move(meta)};
}

}  // namespace pocus::models
