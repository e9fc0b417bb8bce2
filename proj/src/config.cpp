#include "pocus/config.hpp"

#include <cstdlib>
#include <set>

#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus {

using nlohmann::json;

namespace {

void only_keys(const json& j, const std::string& section, const std::set<std::string>& keys) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ConfigError("unknown key " + section + "." + k);
  }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

AppConfig app_config_from_json(const json& j) {
  only_keys(j, "config", {"data", "augment", "model", "train", "eval", "splits", "mmd", "uncertainty", "service"});
  AppConfig c;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      only_keys(d, "data", {"target_hz", "max_frames", "include_uninformative"});
      take(d, "target_hz", c.data.target_hz);
      take(d, "max_frames", c.data.max_frames);
      take(d, "include_uninformative", c.data.include_uninformative);
      if (!(c.data.target_hz > 0) || c.data.max_frames < 1) throw ConfigError("data.target_hz and data.max_frames must be positive");
    }
    if (j.contains("eval")) {
      only_keys(j.at("eval"), "eval", {"exclude_uninformative"});
      take(j.at("eval"), "exclude_uninformative", c.eval.exclude_uninformative);
    }
    if (j.contains("splits")) {
      const auto& s = j.at("splits");
      only_keys(s, "splits", {"n_folds", "seed", "refine_balance", "tolerance"});
      take(s, "n_folds", c.splits.n_folds);
      take(s, "seed", c.splits.seed);
      take(s, "refine_balance", c.splits.refine_balance);
      take(s, "tolerance", c.splits.tolerance);
      if (c.splits.n_folds < 2) throw ConfigError("splits.n_folds must be at least 2");
    }
    if (j.contains("mmd")) {
      const auto& m = j.at("mmd");
      only_keys(m, "mmd", {"n_resamples", "seed", "null", "exact_when_small", "threads"});
      take(m, "n_resamples", c.mmd.n_resamples);
      take(m, "seed", c.mmd.seed);
      if (m.contains("null")) c.mmd.null = explain::parse_null_kind(m.at("null").get<std::string>());
      take(m, "exact_when_small", c.mmd.exact_when_small);
      take(m, "threads", c.mmd.threads);
      if (c.mmd.n_resamples < 1) throw ConfigError("mmd.n_resamples must be positive");
    }
    if (j.contains("uncertainty")) {
      const auto& u = j.at("uncertainty");
      only_keys(u, "uncertainty", {"n_passes", "seed", "dropout_rate"});
      take(u, "n_passes", c.uncertainty.n_passes);
      take(u, "seed", c.uncertainty.seed);
      take(u, "dropout_rate", c.uncertainty.dropout_rate);
      if (c.uncertainty.n_passes < 2) throw ConfigError("uncertainty.n_passes must be at least 2");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("augment")) c.augment = data::policy_from_json(j.at("augment"));
  if (j.contains("model")) {
    c.model = models::config_from_json(j.at("model"));
    c.model.validate();
  }
  if (j.contains("train")) c.train = train::train_config_from_json(j.at("train"));
  if (j.contains("service")) {
    if (!j.at("service").is_object()) throw ConfigError("service must be an object");
    c.service = j.at("service");
  }
  return c;
}

json to_json(const AppConfig& c) {
  return {{"data",
           {{"target_hz", c.data.target_hz},
            {"max_frames", c.data.max_frames},
            {"include_uninformative", c.data.include_uninformative}}},
          {"augment", data::to_json(c.augment)},
          {"model", models::to_json(c.model)},
          {"train", train::to_json(c.train)},
          {"eval", {{"exclude_uninformative", c.eval.exclude_uninformative}}},
          {"splits",
           {{"n_folds", c.splits.n_folds},
            {"seed", c.splits.seed},
            {"refine_balance", c.splits.refine_balance},
            {"tolerance", c.splits.tolerance}}},
          {"mmd",
           {{"n_resamples", c.mmd.n_resamples},
            {"seed", c.mmd.seed},
            {"null", explain::to_string(c.mmd.null)},
            {"exact_when_small", c.mmd.exact_when_small},
            {"threads", c.mmd.threads}}},
          {"uncertainty",
           {{"n_passes", c.uncertainty.n_passes},
            {"seed", c.uncertainty.seed},
            {"dropout_rate", c.uncertainty.dropout_rate}}},
          {"service", c.service}};
}

AppConfig load_app_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return app_config_from_json(j);
}

std::optional<std::filesystem::path> config_path(const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path && !explicit_path->empty()) return explicit_path;
  if (const char* env = std::getenv("POCUS_CONFIG"); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

}  // namespace pocus
