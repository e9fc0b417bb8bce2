#include <gtest/gtest.h>
#include <httplib.h>

#include <fstream>
#include <future>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <thread>

#include "pocus/data/frames.hpp"
#include "pocus/models/checkpoint.hpp"
#include "pocus/service/schema.hpp"
#include "pocus/service/server.hpp"
#include "pocus/util.hpp"
#include "support/fixtures.hpp"

using namespace pocus;
using namespace pocus::service;
using nlohmann::json;

namespace {

models::ClassifierConfig tiny_config(std::uint64_t seed) {
  auto cfg = models::default_config(models::Arch::kVggCam);
  cfg.backbone.vgg_filters = {4, 8};
  cfg.backbone.vgg_convs = {1, 1};
  cfg.init_seed = seed;
  return cfg;
}

// Five distinct folds in one dir, five copies of fold 0 in another.
struct Checkpoints {
  pocus::testing::TempDir folds;
  pocus::testing::TempDir same;

  Checkpoints() {
    for (int k = 0; k < 5; ++k) {
      models::CheckpointMeta meta;
      meta.config = tiny_config(100 + k);
      meta.fold = k;
      models::save_checkpoint(models::checkpoint_path(folds.path(), models::Arch::kVggCam, k),
                              models::build_classifier(meta.config), meta);
    }
    models::CheckpointMeta meta;
    meta.config = tiny_config(100);
    const auto model = models::build_classifier(meta.config);
    for (int k = 0; k < 5; ++k) {
      meta.fold = k;
      models::save_checkpoint(models::checkpoint_path(same.path(), models::Arch::kVggCam, k), model, meta);
    }
  }
};

const Checkpoints& checkpoints() {
  static const Checkpoints c;
  return c;
}

ServiceConfig config_for(const std::filesystem::path& dir) {
  ServiceConfig c;
  c.checkpoint_dir = dir;
  c.port = 0;
  return c;
}

std::string png_bytes(int w, int h, int seed) {
  cv::Mat img(h, w, CV_8UC3);
  cv::randu(img, cv::Scalar::all(seed % 7), cv::Scalar::all(200 + seed % 50));
  std::vector<unsigned char> buf;
  cv::imencode(".png", img, buf);
  return {buf.begin(), buf.end()};
}

std::string video_bytes(const pocus::testing::TempDir& dir, double fps, int n) {
  const auto p = dir / "clip.avi";
  pocus::testing::write_synthetic_video(p, fps, n);
  return read_file(p);
}

const InferenceEngine& shared_engine() {
  static const InferenceEngine e(config_for(checkpoints().folds.path()));
  return e;
}

std::vector<double> probs_of(const json& j) { return j.get<std::vector<double>>(); }

}  // namespace

// ------------------------------------------------------------------ engine

TEST(Engine, ModelInfoListsFiveFoldCheckpoints) {
  const auto info = shared_engine().model_info();
  EXPECT_EQ(info["arch"], "vgg_cam");
  EXPECT_TRUE(info["ensemble"].get<bool>());
  ASSERT_EQ(info["checkpoints"].size(), 5u);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(info["checkpoints"][k], models::checkpoint_path(checkpoints().folds.path(), models::Arch::kVggCam, k).string());
    EXPECT_EQ(info["folds"][k], k);
    EXPECT_EQ(info["sha256"][k].get<std::string>().size(), 64u);
  }
  EXPECT_EQ(info["class_names"], json({"covid", "pneumonia", "healthy", "uninformative"}));
}

TEST(Engine, ImageGivesOneFrameWithHeatmap) {
  PredictOptions o;
  o.want_heatmap = true;
  o.want_confidence = true;
  o.n_passes = 3;
  const auto png = png_bytes(320, 240, 1);
  const auto r = shared_engine().predict(png, "x.png", o);
  EXPECT_TRUE(predict_response_errors(r).empty()) << json(predict_response_errors(r)).dump();
  EXPECT_EQ(r["media_type"], "image");
  ASSERT_EQ(r["frames"].size(), 1u);
  const auto& f = r["frames"][0];
  const std::string uri = f["heatmap_ref"];
  const std::string prefix = "data:image/png;base64,";
  ASSERT_EQ(uri.rfind(prefix, 0), 0u);
  const auto raw = base64_decode(uri.substr(prefix.size()));
  const cv::Mat decoded = cv::imdecode(cv::Mat(1, static_cast<int>(raw.size()), CV_8U, const_cast<unsigned char*>(raw.data())), cv::IMREAD_COLOR);
  EXPECT_EQ(decoded.rows, 224);
  EXPECT_EQ(decoded.cols, 224);
  EXPECT_GE(f["epistemic_c"].get<double>(), 0.0);
  EXPECT_LE(f["aleatoric_c"].get<double>(), 1.0);
  EXPECT_EQ(f["cam_point"]["source"], "cam");

  // oracle: mean of the five members, computed here
  const cv::Mat img = cv::imdecode(cv::Mat(1, static_cast<int>(png.size()), CV_8U, const_cast<char*>(png.data())), cv::IMREAD_COLOR);
  const auto x = nn::stack(std::vector<nn::Tensor>{data::preprocess(data::crop_square(img))});
  std::vector<double> mean(4, 0.0);
  for (int k = 0; k < 5; ++k) {
    const auto m = models::load_checkpoint(models::checkpoint_path(checkpoints().folds.path(), models::Arch::kVggCam, k));
    const auto p = m.model.forward(x);
    for (int c = 0; c < 4; ++c) mean[c] += p[c] / 5.0;
  }
  const auto got = probs_of(f["probs"]);
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(got[c], mean[c], 1e-6);
}

TEST(Engine, FiveSecondVideoGivesFifteenFramesAndMean) {
  pocus::testing::TempDir dir;
  const auto r = shared_engine().predict(video_bytes(dir, 30.0, 150), "clip.avi", {});
  EXPECT_TRUE(predict_response_errors(r).empty());
  EXPECT_EQ(r["media_type"], "video");
  ASSERT_EQ(r["frames"].size(), 15u);
  std::vector<double> mean(4, 0.0);
  for (std::size_t i = 0; i < 15; ++i) {
    const auto& f = r["frames"][i];
    EXPECT_EQ(f["frame_index"], i);
    EXPECT_EQ(f["source_frame"], 10 * i);
    EXPECT_NEAR(f["timestamp"].get<double>(), i / 3.0, 1e-9);
    const auto p = probs_of(f["probs"]);
    for (int c = 0; c < 4; ++c) mean[c] += p[c];
  }
  const auto v = probs_of(r["video"]["probs"]);
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(v[c], mean[c] / 15.0, 1e-6);
}

TEST(Engine, LongVideoCappedAtThirtyFrames) {
  pocus::testing::TempDir dir;
  const auto r = shared_engine().predict(video_bytes(dir, 30.0, 360), "clip.avi", {});
  EXPECT_EQ(r["frames"].size(), 30u);
  EXPECT_EQ(r["frames"][29]["source_frame"], 290);
}

TEST(Engine, TextAndEmptyPayloadsAreMediaErrors) {
  EXPECT_THROW(shared_engine().predict("hello, this is not an image\n", "notes.txt", {}), MediaError);
  EXPECT_THROW(shared_engine().predict("", "x.png", {}), MediaError);
  EXPECT_THROW(shared_engine().predict("RIFF\x10\0\0\0AVI garbage", "x.avi", {}), MediaError);
}

TEST(Engine, SeededRequestsRepeat) {
  PredictOptions o;
  o.want_confidence = true;
  o.want_heatmap = true;
  o.n_passes = 4;
  o.seed = 99;
  const auto png = png_bytes(200, 260, 3);
  const auto a = shared_engine().predict(png, "a.png", o);
  const auto b = shared_engine().predict(png, "a.png", o);
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Engine, FiveIdenticalCheckpointsEqualOneModel) {
  const InferenceEngine five(config_for(checkpoints().same.path()));
  auto cfg = config_for(checkpoints().same.path());
  cfg.ensemble = false;
  const InferenceEngine one(cfg);
  EXPECT_EQ(one.model_info()["checkpoints"].size(), 1u);
  EXPECT_FALSE(one.model_info()["ensemble"].get<bool>());
  pocus::testing::TempDir dir;
  const auto video = video_bytes(dir, 30.0, 60);
  const auto a = five.predict(video, "v.avi", {});
  const auto b = one.predict(video, "v.avi", {});
  EXPECT_EQ(a["frames"].size(), b["frames"].size());
  for (std::size_t i = 0; i < a["frames"].size(); ++i) {
    EXPECT_EQ(probs_of(a["frames"][i]["probs"]), probs_of(b["frames"][i]["probs"]));
  }
  EXPECT_EQ(probs_of(a["video"]["probs"]), probs_of(b["video"]["probs"]));
}

TEST(Engine, SingleFoldFlagPicksThatFold) {
  auto cfg = config_for(checkpoints().folds.path());
  cfg.ensemble = false;
  cfg.single_fold = 3;
  const InferenceEngine e(cfg);
  EXPECT_EQ(e.model_info()["checkpoints"][0],
            models::checkpoint_path(checkpoints().folds.path(), models::Arch::kVggCam, 3).string());
  cfg.single_fold = 5;
  EXPECT_THROW(InferenceEngine{cfg}, ConfigError);
}

TEST(Engine, MissingFoldRefusesToStart) {
  pocus::testing::TempDir dir;
  for (int k = 0; k < 5; ++k) {
    const auto src = models::checkpoint_path(checkpoints().folds.path(), models::Arch::kVggCam, k);
    if (k == 2) continue;
    std::filesystem::copy_file(src, dir / src.filename().string());
    std::filesystem::copy_file(models::sidecar_path(src), dir / models::sidecar_path(src).filename().string());
  }
  const auto missing = models::checkpoint_path(dir.path(), models::Arch::kVggCam, 2).string();
  try {
    InferenceEngine e(config_for(dir.path()));
    FAIL() << "started with 4 of 5 checkpoints";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(missing), std::string::npos) << e.what();
  }
}

TEST(Engine, RestartReproducesModelInfoAndLeavesCheckpoints) {
  std::vector<std::string> before;
  for (int k = 0; k < 5; ++k) before.push_back(sha256_file(models::checkpoint_path(checkpoints().folds.path(), models::Arch::kVggCam, k)));
  std::string first;
  {
    const InferenceEngine e(config_for(checkpoints().folds.path()));
    first = e.model_info().dump();
    e.predict(png_bytes(100, 100, 5), "p.png", {});
  }
  const InferenceEngine again(config_for(checkpoints().folds.path()));
  EXPECT_EQ(again.model_info().dump(), first);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(sha256_file(models::checkpoint_path(checkpoints().folds.path(), models::Arch::kVggCam, k)), before[k]);
  }
}

TEST(Engine, RejectsUnservableModels) {
  pocus::testing::TempDir dir;
  models::CheckpointMeta meta;
  meta.config = models::default_config(models::Arch::kSegmentEnc);
  meta.config.dense_units = {8};
  meta.config.feature_dim = 6;
  const auto p = dir / "seg.bin";
  models::save_checkpoint(p, models::build_classifier(meta.config), meta);
  ServiceConfig c;
  c.checkpoints = {p};
  EXPECT_THROW(InferenceEngine{c}, UnsupportedError);
}

// ------------------------------------------------------------------ options / config

TEST(Options, ParseAndReject) {
  const auto o = predict_options_from_json(json::parse(R"({"want_heatmap":true,"n_passes":5,"seed":12})"));
  EXPECT_TRUE(o.want_heatmap);
  EXPECT_FALSE(o.want_confidence);
  EXPECT_EQ(o.n_passes, 5);
  EXPECT_EQ(o.seed, 12u);
  EXPECT_EQ(to_json(o)["n_passes"], 5);
  for (const char* bad : {R"([])", R"({"n_passes":1})", R"({"n_passes":101})", R"({"n_passes":2.5})",
                          R"({"seed":-1})", R"({"want_heatmap":"yes"})", R"({"colour":1})"}) {
    EXPECT_THROW(predict_options_from_json(json::parse(bad)), ValidationError) << bad;
  }
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  ServiceConfig c;
  c.checkpoint_dir = "/tmp/cks";
  c.port = 9001;
  c.max_upload_bytes = 1234;
  c.tta_policy.h_flip = true;
  const auto back = service_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(service_config_from_json(json{{"checkpoint_dir", "/x"}, {"prot", 1}}), ConfigError);
  EXPECT_THROW(service_config_from_json(json{{"checkpoint_dir", "/x"}, {"port", 70000}}), ConfigError);
  EXPECT_THROW(service_config_from_json(json::object()), ConfigError);
  EXPECT_THROW(service_config_from_json(json{{"checkpoint_dir", "/x"}, {"arch", "resnet"}}), Error);
}

TEST(Config, ResolveCheckpoints) {
  ServiceConfig c;
  c.checkpoint_dir = "/m";
  c.folds = 3;
  const auto all = resolve_checkpoints(c);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[1], std::filesystem::path("/m/vgg_cam_fold1.bin"));
  c.ensemble = false;
  c.single_fold = 2;
  EXPECT_EQ(resolve_checkpoints(c), std::vector<std::filesystem::path>{"/m/vgg_cam_fold2.bin"});
}

// ------------------------------------------------------------------ schema validators

namespace {

json valid_response() {
  return json{{"api_version", "1"},
              {"kind", "predict_response"},
              {"media_type", "video"},
              {"class_names", {"covid", "pneumonia", "healthy", "uninformative"}},
              {"frames",
               {{{"frame_index", 0}, {"probs", {0.7, 0.1, 0.1, 0.1}}, {"pred_class", 0}, {"prob", 0.7}},
                {{"frame_index", 1}, {"probs", {0.1, 0.7, 0.1, 0.1}}, {"pred_class", 1}, {"prob", 0.7}, {"epistemic_c", 0.5}}}},
              {"video", {{"probs", {0.4, 0.4, 0.1, 0.1}}, {"pred_class", 0}}},
              {"model_info", {{"arch", "vgg_cam"}, {"checkpoints", {"a", "b"}}, {"ensemble", true}}},
              {"options", {{"want_heatmap", false}, {"want_confidence", false}, {"n_passes", 10}, {"seed", 0}}}};
}

}  // namespace

TEST(Schema, ValidResponsePasses) { EXPECT_TRUE(predict_response_errors(valid_response()).empty()) << json(predict_response_errors(valid_response())).dump(); }

TEST(Schema, ResponseViolationsAreReported) {
  const std::vector<std::pair<std::string, std::function<void(json&)>>> cases{
      {"api_version", [](json& j) { j["api_version"] = "2"; }},
      {"kind", [](json& j) { j["kind"] = "other"; }},
      {"media_type", [](json& j) { j["media_type"] = "audio"; }},
      {"class_names", [](json& j) { j["class_names"].erase(3); }},
      {"frames", [](json& j) { j["frames"] = json::array(); }},
      {"frames[0].probs", [](json& j) { j["frames"][0]["probs"][0] = 0.8; }},
      {"frames[0].probs", [](json& j) { j["frames"][0]["probs"].erase(3); }},
      {"frames[0].pred_class", [](json& j) { j["frames"][0]["pred_class"] = 2; }},
      {"frames[0].prob", [](json& j) { j["frames"][0]["prob"] = 0.1; }},
      {"frames[1].frame_index", [](json& j) { j["frames"][1]["frame_index"] = 0; }},
      {"frames[1].epistemic_c", [](json& j) { j["frames"][1]["epistemic_c"] = 1.5; }},
      {"frames[0].heatmap_ref", [](json& j) { j["frames"][0]["heatmap_ref"] = "http://x/y.png"; }},
      {"video.probs", [](json& j) { j["video"]["probs"] = {0.7, 0.1, 0.1, 0.1}; }},
      {"model_info", [](json& j) { j["model_info"]["checkpoints"] = json::array(); }},
      {"model_info", [](json& j) { j["model_info"]["ensemble"] = false; }},
      {"options", [](json& j) { j["options"]["n_passes"] = 1; }},
  };
  for (const auto& [where, mutate] : cases) {
    json j = valid_response();
    mutate(j);
    const auto errs = predict_response_errors(j);
    ASSERT_FALSE(errs.empty()) << where;
    EXPECT_NE(errs.front().find(where), std::string::npos) << where << " vs " << errs.front();
  }
}

TEST(Schema, ReviewExport) {
  json r{{"api_version", "1"},
         {"kind", "review_export"},
         {"reviewer", "r1"},
         {"source", {{"filename", "clip.avi"}}},
         {"response", valid_response()},
         {"annotations", {{{"frame_index", 0}, {"agree", true}, {"note", ""}}, {{"frame_index", 1}, {"agree", nullptr}, {"note", "pleura"}}}}};
  EXPECT_TRUE(review_export_errors(r).empty()) << json(review_export_errors(r)).dump();
  auto bad = r;
  bad["annotations"][1]["frame_index"] = 7;
  EXPECT_FALSE(review_export_errors(bad).empty());
  bad = r;
  bad["annotations"][1]["frame_index"] = 0;
  EXPECT_FALSE(review_export_errors(bad).empty());
  bad = r;
  bad["annotations"][0]["agree"] = "yes";
  EXPECT_FALSE(review_export_errors(bad).empty());
  bad = r;
  bad["response"]["frames"][0]["probs"][0] = 2.0;
  EXPECT_FALSE(review_export_errors(bad).empty());
  bad = r;
  bad.erase("source");
  EXPECT_FALSE(review_export_errors(bad).empty());
}

TEST(Schema, CheckedInFixturesValidate) {
  const std::filesystem::path dir = POCUS_SOURCE_DIR "/tests/fixtures";
  EXPECT_TRUE(predict_response_errors(json::parse(read_file(dir / "predict_response.json"))).empty());
  EXPECT_TRUE(review_export_errors(json::parse(read_file(dir / "review_export.json"))).empty());
}

// ------------------------------------------------------------------ HTTP

namespace {

class Running {
 public:
  explicit Running(ServiceConfig c) : server_(std::move(c)) {
    port_ = server_.bind();
    thread_ = std::thread([this] { server_.listen(); });
  }
  ~Running() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

 private:
  Server server_;
  int port_ = 0;
  std::thread thread_;
};

httplib::MultipartFormDataItems upload(const std::string& bytes, const std::string& name, const std::string& options = "") {
  httplib::MultipartFormDataItems items{{"file", bytes, name, "application/octet-stream"}};
  if (!options.empty()) items.push_back({"options", options, "", "application/json"});
  return items;
}

}  // namespace

TEST(Http, EndpointsAndErrors) {
  auto cfg = config_for(checkpoints().folds.path());
  cfg.max_upload_bytes = 200 * 1024;
  Running srv(cfg);
  auto cli = srv.client();

  auto h = cli.Get("/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  EXPECT_EQ(json::parse(h->body), json({{"status", "ok"}}));

  auto m = cli.Get("/model");
  ASSERT_TRUE(m);
  EXPECT_EQ(m->body, shared_engine().model_info().dump());

  auto ok = cli.Post("/predict", upload(png_bytes(120, 90, 2), "a.png", R"({"want_heatmap":true})"));
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200);
  EXPECT_EQ(ok->get_header_value("Content-Type"), "application/json");
  const auto body = json::parse(ok->body);
  EXPECT_TRUE(predict_response_errors(body).empty());
  EXPECT_TRUE(body["frames"][0].contains("heatmap_ref"));

  auto text = cli.Post("/predict", upload("just some words\n", "notes.txt"));
  ASSERT_TRUE(text);
  EXPECT_EQ(text->status, 400);
  EXPECT_EQ(json::parse(text->body)["error"], "undecodable media");

  auto opts = cli.Post("/predict", upload(png_bytes(50, 50, 1), "a.png", R"({"n_passes":0})"));
  ASSERT_TRUE(opts);
  EXPECT_EQ(opts->status, 400);
  EXPECT_EQ(json::parse(opts->body)["error"], "invalid options");
  auto garbled = cli.Post("/predict", upload(png_bytes(50, 50, 1), "a.png", "{not json"));
  ASSERT_TRUE(garbled);
  EXPECT_EQ(garbled->status, 400);

  auto nofile = cli.Post("/predict", "{}", "application/json");
  ASSERT_TRUE(nofile);
  EXPECT_EQ(nofile->status, 400);

  // over the file limit but inside the framing allowance
  auto big = cli.Post("/predict", upload(std::string(210 * 1024, 'x'), "big.png"));
  ASSERT_TRUE(big);
  EXPECT_EQ(big->status, 413);
  EXPECT_EQ(json::parse(big->body)["error"], "payload too large");

  auto missing = cli.Get("/nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["api_version"], "1");
}

TEST(Http, BodyBeyondTransportLimitIs413) {
  auto cfg = config_for(checkpoints().folds.path());
  cfg.max_upload_bytes = 1024;
  Running srv(cfg);
  auto cli = srv.client();
  auto r = cli.Post("/predict", upload(std::string(256 * 1024, 'y'), "big.avi"));
  ASSERT_TRUE(r) << httplib::to_string(r.error());
  EXPECT_EQ(r->status, 413);
}

TEST(Http, ConcurrentIdenticalRequestsAgree) {
  Running srv(config_for(checkpoints().folds.path()));
  pocus::testing::TempDir dir;
  const auto video = video_bytes(dir, 30.0, 45);
  const std::string options = R"({"want_confidence":true,"n_passes":3,"seed":5})";
  std::vector<std::future<std::string>> jobs;
  for (int i = 0; i < 4; ++i) {
    jobs.push_back(std::async(std::launch::async, [&] {
      auto cli = srv.client();
      auto r = cli.Post("/predict", upload(video, "v.avi", options));
      return r && r->status == 200 ? r->body : std::string("failed");
    }));
  }
  std::vector<std::string> bodies;
  for (auto& j : jobs) bodies.push_back(j.get());
  ASSERT_NE(bodies[0], "failed");
  for (const auto& b : bodies) EXPECT_EQ(b, bodies[0]);
  EXPECT_EQ(json::parse(bodies[0])["frames"].size(), 5u);
}
