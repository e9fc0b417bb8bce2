#include "pocus/service/server.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/videoio.hpp>
#include <random>
#include <semaphore>
#include <set>

#include "pocus/data/frames.hpp"
#include "pocus/eval/metrics.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/explain/cam.hpp"
#include "pocus/service/schema.hpp"
#include "pocus/uncertainty/confidence.hpp"
#include "pocus/util.hpp"

namespace pocus::service {

using nlohmann::json;

// ------------------------------------------------------------------ config

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ConfigError("port out of range");
  if (checkpoints.empty() && checkpoint_dir.empty()) throw ConfigError("no checkpoints configured (checkpoints or checkpoint_dir)");
  if (folds < 1) throw ConfigError("folds must be positive");
  if (!ensemble && (single_fold < 0 || (checkpoints.empty() && single_fold >= folds) ||
                    (!checkpoints.empty() && single_fold >= static_cast<int>(checkpoints.size())))) {
    throw ConfigError(fmt::format("single_fold {} out of range", single_fold));
  }
  if (max_upload_bytes == 0) throw ConfigError("max_upload_bytes must be positive");
  if (!(target_hz > 0)) throw ConfigError("target_hz must be positive");
  if (http_threads < 1 || decode_workers < 1) throw ConfigError("thread counts must be positive");
  if (!(heatmap_alpha >= 0 && heatmap_alpha <= 1)) throw ConfigError("heatmap_alpha must be in [0, 1]");
  models::parse_arch(arch);
  tta_policy.validate();
}

json to_json(const ServiceConfig& c) {
  json cps = json::array();
  for (const auto& p : c.checkpoints) cps.push_back(p.string());
  return {{"host", c.host},
          {"port", c.port},
          {"checkpoints", cps},
          {"checkpoint_dir", c.checkpoint_dir.string()},
          {"arch", c.arch},
          {"folds", c.folds},
          {"ensemble", c.ensemble},
          {"single_fold", c.single_fold},
          {"max_upload_bytes", c.max_upload_bytes},
          {"target_hz", c.target_hz},
          {"max_frames", c.max_frames},
          {"http_threads", c.http_threads},
          {"decode_workers", c.decode_workers},
          {"heatmap_alpha", c.heatmap_alpha},
          {"tta_policy", data::to_json(c.tta_policy)}};
}

ServiceConfig service_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("service config must be an object");
  static const std::set<std::string> known{"host",           "port",       "checkpoints",   "checkpoint_dir",
                                           "arch",           "folds",      "ensemble",      "single_fold",
                                           "max_upload_bytes", "target_hz", "max_frames",   "http_threads",
                                           "decode_workers", "heatmap_alpha", "tta_policy"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown key service." + k);
  }
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    if (j.contains("checkpoints")) {
      for (const auto& p : j.at("checkpoints")) c.checkpoints.emplace_back(p.get<std::string>());
    }
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir.string());
    c.arch = j.value("arch", c.arch);
    c.folds = j.value("folds", c.folds);
    c.ensemble = j.value("ensemble", c.ensemble);
    c.single_fold = j.value("single_fold", c.single_fold);
    c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
    c.target_hz = j.value("target_hz", c.target_hz);
    c.max_frames = j.value("max_frames", c.max_frames);
    c.http_threads = j.value("http_threads", c.http_threads);
    c.decode_workers = j.value("decode_workers", c.decode_workers);
    c.heatmap_alpha = j.value("heatmap_alpha", c.heatmap_alpha);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("service config: ") + e.what());
  }
  if (j.contains("tta_policy")) c.tta_policy = data::policy_from_json(j.at("tta_policy"));
  c.validate();
  return c;
}

std::vector<std::filesystem::path> resolve_checkpoints(const ServiceConfig& c) {
  std::vector<std::filesystem::path> all = c.checkpoints;
  if (all.empty()) {
    const auto arch = models::parse_arch(c.arch);
    for (int k = 0; k < c.folds; ++k) all.push_back(models::checkpoint_path(c.checkpoint_dir, arch, k));
  }
  if (!c.ensemble) return {all.at(c.single_fold)};
  return all;
}

json to_json(const PredictOptions& o) {
  return {{"want_heatmap", o.want_heatmap}, {"want_confidence", o.want_confidence}, {"n_passes", o.n_passes}, {"seed", o.seed}};
}

PredictOptions predict_options_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("options must be a JSON object");
  PredictOptions o;
  for (const auto& [k, v] : j.items()) {
    if (k == "want_heatmap" || k == "want_confidence") {
      if (!v.is_boolean()) throw ValidationError("options." + k + " must be a boolean");
      (k == "want_heatmap" ? o.want_heatmap : o.want_confidence) = v.get<bool>();
    } else if (k == "n_passes") {
      if (!v.is_number_integer() || v.get<long long>() < 2 || v.get<long long>() > 100) {
        throw ValidationError("options.n_passes must be an integer in [2, 100]");
      }
      o.n_passes = v.get<int>();
    } else if (k == "seed") {
      if (!v.is_number_unsigned()) {
        throw ValidationError("options.seed must be a non-negative integer");
      }
      o.seed = v.get<std::uint64_t>();
    } else {
      throw ValidationError("unknown option '" + k + "'");
    }
  }
  return o;
}

// ------------------------------------------------------------------ engine

namespace {

struct DecodedFrame {
  nn::Tensor pixels;
  int source_index = 0;
  double timestamp = 0.0;
};

// Upload spooled to disk for the video decoder; removed on scope exit.
class SpoolFile {
 public:
  SpoolFile(std::string_view bytes, const std::string& ext) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            fmt::format("pocus-upload-{:016x}{}", (std::uint64_t(rd()) << 32) ^ rd(), ext);
    std::ofstream out(path_, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot spool upload to " + path_.string());
  }
  ~SpoolFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

std::string extension_hint(const std::string& filename) {
  std::string ext = std::filesystem::path(filename).extension().string();
  for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  static const std::set<std::string> video{".avi", ".mp4", ".mov", ".mkv", ".mpg", ".mpeg", ".gif", ".webm"};
  return video.count(ext) ? ext : ".bin";
}

std::string png_data_uri(const cv::Mat& bgr) {
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", bgr, buf)) throw IoError("PNG encoding failed");
  return "data:image/png;base64," + base64_encode(buf);
}

}  // namespace

struct InferenceEngine::Impl {
  ServiceConfig config;
  std::vector<models::LoadedCheckpoint> loaded;
  std::vector<const models::Classifier*> models;
  std::vector<std::filesystem::path> files;
  json info;
  mutable std::counting_semaphore<1024> decode_slots{1};

  std::vector<DecodedFrame> decode(std::string_view payload, const std::string& filename, MediaKind& kind) const {
    if (payload.empty()) throw MediaError("empty payload");
    std::vector<DecodedFrame> out;
    const cv::Mat raw(1, static_cast<int>(payload.size()), CV_8U, const_cast<char*>(payload.data()));
    cv::Mat img;
    try {
      img = cv::imdecode(raw, cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
      img.release();
    }
    if (!img.empty()) {
      kind = MediaKind::kImage;
      out.push_back({data::preprocess(data::crop_square(img)), 0, 0.0});
      return out;
    }
    kind = MediaKind::kVideo;
    decode_slots.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{decode_slots};
    const SpoolFile spool(payload, extension_hint(filename));
    double fps = 0;
    {
      cv::VideoCapture cap = data::open_video(spool.path());
      if (!cap.isOpened()) throw MediaError("not a decodable image or video");
      fps = cap.get(cv::CAP_PROP_FPS);
    }
    if (!(fps > 0) || !std::isfinite(fps)) throw MediaError("video has no frame rate");
    std::vector<data::RawFrame> raw_frames;
    try {
      raw_frames = data::extract_frames_from_file(spool.path(), fps, config.target_hz, config.max_frames);
    } catch (const Error& e) {
      throw MediaError(e.what());
    }
    if (raw_frames.empty()) throw MediaError("video contains no frames");
    for (const auto& f : raw_frames) out.push_back({data::preprocess(data::crop_square(f.image)), f.index, f.timestamp});
    return out;
  }
};

InferenceEngine::InferenceEngine(ServiceConfig config) : impl_(std::make_unique<Impl>()) {
  config.validate();
  impl_->config = std::move(config);
  impl_->files = resolve_checkpoints(impl_->config);
  for (const auto& f : impl_->files) {
    if (!std::filesystem::exists(f)) throw IoError("missing checkpoint: " + f.string());
    if (!std::filesystem::exists(models::sidecar_path(f))) throw IoError("missing checkpoint sidecar: " + models::sidecar_path(f).string());
  }
  std::optional<models::Arch> arch;
  json cps = json::array(), hashes = json::array(), folds = json::array();
  for (const auto& f : impl_->files) {
    impl_->loaded.push_back(models::load_checkpoint(f));
    const auto& m = impl_->loaded.back().model;
    if (!m.has_spatial_features() || m.config().arch == models::Arch::kVideo3d) {
      throw UnsupportedError(fmt::format("{}: the service serves single-frame image classifiers", f.string()));
    }
    if (arch && *arch != m.config().arch) throw ConfigError("checkpoints mix architectures");
    arch = m.config().arch;
    cps.push_back(f.string());
    hashes.push_back(sha256_file(f));
    folds.push_back(impl_->loaded.back().meta.fold);
  }
  for (const auto& l : impl_->loaded) impl_->models.push_back(&l.model);
  std::vector<std::string> names;
  for (int c = 0; c < impl_->models.front()->n_classes(); ++c) names.emplace_back(to_string(label_from_index(c)));
  impl_->info = {{"arch", models::to_string(*arch)},
                 {"checkpoints", cps},
                 {"sha256", hashes},
                 {"folds", folds},
                 {"ensemble", impl_->config.ensemble},
                 {"class_names", names}};
  impl_->decode_slots.release(impl_->config.decode_workers - 1);
  spdlog::info("loaded {} checkpoint(s), arch {}", impl_->models.size(), models::to_string(*arch));
}

InferenceEngine::~InferenceEngine() = default;

const ServiceConfig& InferenceEngine::config() const { return impl_->config; }

json InferenceEngine::model_info() const {
  json j = impl_->info;
  j["api_version"] = kApiVersion;
  return j;
}

json InferenceEngine::predict(std::string_view payload, const std::string& filename, const PredictOptions& options) const {
  if (payload.size() > impl_->config.max_upload_bytes) throw MediaError("payload too large");
  MediaKind kind = MediaKind::kImage;
  const auto frames = impl_->decode(payload, filename, kind);
  const auto& models = impl_->models;

  constexpr std::size_t kChunk = 8;
  const int k = models.front()->n_classes();
  json entries = json::array();
  std::vector<double> video(k, 0.0);
  for (std::size_t b = 0; b < frames.size(); b += kChunk) {
    std::vector<nn::Tensor> items;
    const std::size_t end = std::min(frames.size(), b + kChunk);
    for (std::size_t i = b; i < end; ++i) items.push_back(frames[i].pixels);
    const nn::Tensor batch = nn::stack(items);
    const nn::Tensor probs = eval::ensemble_predict(models, batch);
    std::vector<uncertainty::ConfidenceScore> epi, alea;
    if (options.want_confidence) {
      models::StochasticOptions opt;
      opt.n_passes = options.n_passes;
      opt.mode = models::StochasticMode::kDropout;
      opt.seed = derive_seed(options.seed, 2 * b);
      epi = uncertainty::confidence_from_passes(uncertainty::stochastic_stack(models, batch, opt), uncertainty::Kind::kEpistemic);
      opt.mode = models::StochasticMode::kTta;
      opt.policy = impl_->config.tta_policy;
      opt.seed = derive_seed(options.seed, 2 * b + 1);
      alea = uncertainty::confidence_from_passes(uncertainty::stochastic_stack(models, batch, opt), uncertainty::Kind::kAleatoric);
    }
    for (std::size_t i = b; i < end; ++i) {
      std::vector<double> p(k);
      for (int c = 0; c < k; ++c) p[c] = probs[(i - b) * k + c];
      const int pred = eval::argmax(std::span<const double>(p));
      json e{{"frame_index", static_cast<int>(i)}, {"probs", p}, {"pred_class", pred}, {"prob", p[pred]}};
      if (kind == MediaKind::kVideo) {
        e["source_frame"] = frames[i].source_index;
        e["timestamp"] = frames[i].timestamp;
      }
      if (options.want_confidence) {
        e["epistemic_c"] = epi[i - b].value;
        e["aleatoric_c"] = alea[i - b].value;
      }
      if (options.want_heatmap) {
        const auto hm = explain::ensemble_heatmap(models, frames[i].pixels, pred);
        e["heatmap_ref"] = png_data_uri(explain::overlay(frames[i].pixels, hm, impl_->config.heatmap_alpha));
        const auto mp = explain::max_activation_point(hm);
        e["cam_point"] = {{"x", mp.x}, {"y", mp.y}, {"uniform", mp.uniform}, {"source", explain::to_string(hm.source)}};
      }
      for (int c = 0; c < k; ++c) video[c] += p[c];
      entries.push_back(std::move(e));
    }
  }
  for (double& v : video) v /= static_cast<double>(frames.size());
  return {{"api_version", kApiVersion},
          {"kind", "predict_response"},
          {"media_type", std::string(to_string(kind))},
          {"class_names", impl_->info["class_names"]},
          {"frames", entries},
          {"video", {{"probs", video}, {"pred_class", eval::argmax(std::span<const double>(video))}}},
          {"model_info", impl_->info},
          {"options", to_json(options)}};
}

// ------------------------------------------------------------------ HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
  send_json(res, status, {{"api_version", kApiVersion}, {"error", error}, {"detail", detail}});
}

}  // namespace

struct Server::Impl {
  InferenceEngine engine;
  httplib::Server http;
  std::string model_body;
  int port = 0;

  explicit Impl(ServiceConfig c) : engine(std::move(c)) {}
};

Server::Server(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
  auto& http = impl_->http;
  const auto& cfg = impl_->engine.config();
  const int threads = cfg.http_threads;
  http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // multipart framing and the options field ride on top of the file limit
  http.set_payload_max_length(cfg.max_upload_bytes + 64 * 1024);
  impl_->model_body = impl_->engine.model_info().dump();

  http.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });
  http.Get("/model", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl_->model_body, "application/json");
  });
  http.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("file")) {
      send_error(res, 400, "bad request", "expected multipart/form-data with a 'file' field");
      return;
    }
    const auto file = req.get_file_value("file");
    if (file.content.size() > impl_->engine.config().max_upload_bytes) {
      send_error(res, 413, "payload too large",
                 fmt::format("upload of {} bytes exceeds {}", file.content.size(), impl_->engine.config().max_upload_bytes));
      return;
    }
    PredictOptions options;
    if (req.has_file("options")) {
      try {
        options = predict_options_from_json(json::parse(req.get_file_value("options").content));
      } catch (const json::exception& e) {
        send_error(res, 400, "invalid options", e.what());
        return;
      } catch (const ValidationError& e) {
        send_error(res, 400, "invalid options", e.what());
        return;
      }
    }
    try {
      send_json(res, 200, impl_->engine.predict(file.content, file.filename, options));
    } catch (const MediaError& e) {
      send_error(res, 400, "undecodable media", e.what());
    }
  });
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 413) {
      send_error(res, 413, "payload too large", "request body exceeds the configured limit");
    } else if (res.status == 404) {
      send_error(res, 404, "not found", "endpoints: GET /health, GET /model, POST /predict");
    } else {
      send_error(res, res.status, "error", httplib::status_message(res.status));
    }
  });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    spdlog::error("request failed: {}", what);
    send_error(res, 500, "internal error", what);
  });
}

Server::~Server() { stop(); }

int Server::bind() {
  const auto& cfg = impl_->engine.config();
  if (cfg.port == 0) {
    impl_->port = impl_->http.bind_to_any_port(cfg.host);
  } else if (impl_->http.bind_to_port(cfg.host, cfg.port)) {
    impl_->port = cfg.port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port < 0) throw IoError(fmt::format("cannot bind {}:{}", cfg.host, cfg.port));
  return impl_->port;
}

void Server::listen() {
  spdlog::info("serving on {}:{}", impl_->engine.config().host, impl_->port);
  impl_->http.listen_after_bind();
}

void Server::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

const InferenceEngine& Server::engine() const { return impl_->engine; }

}  // namespace pocus::service
