#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "pocus/data/augment.hpp"
#include "pocus/error.hpp"
#include "pocus/models/checkpoint.hpp"

namespace pocus::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  // Either explicit checkpoint files or <checkpoint_dir>/<arch>_fold<K>.bin
  // for K in [0, folds).
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path checkpoint_dir;
  std::string arch = "vgg_cam";
  int folds = 5;
  bool ensemble = true;  // false: only `single_fold`
  int single_fold = 0;
  std::size_t max_upload_bytes = 50u * 1024 * 1024;
  double target_hz = 3.0;
  int max_frames = 30;
  int http_threads = 4;
  int decode_workers = 2;
  double heatmap_alpha = 0.5;
  data::AugmentationPolicy tta_policy;  // aleatoric passes

  void validate() const;
};

nlohmann::json to_json(const ServiceConfig& c);
// Unknown keys and bad values are ConfigErrors.
ServiceConfig service_config_from_json(const nlohmann::json& j);

// Files the service will load, in fold order.
std::vector<std::filesystem::path> resolve_checkpoints(const ServiceConfig& c);

struct PredictOptions {
  bool want_heatmap = false;
  bool want_confidence = false;
  int n_passes = 10;
  std::uint64_t seed = 0;
};
nlohmann::json to_json(const PredictOptions& o);
// ValidationError for unknown keys or bad values.
PredictOptions predict_options_from_json(const nlohmann::json& j);

// Payload that decodes neither as an image nor as a video. HTTP 400.
class MediaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Loaded models plus the /predict logic, without HTTP. Immutable after
// construction; predict() may run concurrently.
class InferenceEngine {
 public:
  // IoError naming the first missing checkpoint.
  explicit InferenceEngine(ServiceConfig config);
  ~InferenceEngine();

  const ServiceConfig& config() const;
  nlohmann::json model_info() const;
  // filename only supplies an extension hint for the video decoder.
  nlohmann::json predict(std::string_view payload, const std::string& filename, const PredictOptions& options) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// HTTP front end: GET /health, GET /model, POST /predict.
class Server {
 public:
  explicit Server(ServiceConfig config);
  ~Server();

  // Binds and returns the port (useful with port 0).
  int bind();
  // Blocks until stop().
  void listen();
  void stop();
  const InferenceEngine& engine() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pocus::service
