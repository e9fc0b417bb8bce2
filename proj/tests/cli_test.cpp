// Runs the pocus binary end to end on a tiny synthetic corpus.
#include <fmt/format.h>
#include <gtest/gtest.h>
#include <httplib.h>
#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include <chrono>
#include <fstream>
#include <nlohmann/json.hpp>
#include <opencv2/videoio.hpp>
#include <regex>
#include <thread>

#include "pocus/data/manifest.hpp"
#include "pocus/explain/export.hpp"
#include "pocus/splits/folds.hpp"
#include "pocus/util.hpp"
#include "support/fixtures.hpp"

extern char** environ;

using namespace pocus;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const fs::path& cwd, const std::string& env = "") {
  const fs::path log = cwd / "last_run.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" POCUS_CLI "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

// 2 s at 30 fps of seeded noise, so no two clips share a frame
void write_clip(const fs::path& p, int seed) {
  cv::VideoWriter w(p.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), 30.0, cv::Size(200, 160), true);
  ASSERT_TRUE(w.isOpened());
  cv::RNG rng(1234 + seed);
  for (int i = 0; i < 60; ++i) {
    cv::Mat f(160, 200, CV_8UC3);
    rng.fill(f, cv::RNG::UNIFORM, cv::Scalar::all(0), cv::Scalar::all(255));
    w.write(f);
  }
}

// 15 two-second clips, five per diagnostic class.
class Workspace : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new pocus::testing::TempDir();
    const fs::path root = dir_->path();
    fs::create_directories(root / "raw");
    std::string manifest = std::string(data::kManifestHeader) + "\n";
    const char* labels[] = {"covid", "pneumonia", "healthy"};
    for (int c = 0; c < 3; ++c) {
      for (int v = 0; v < 5; ++v) {
        const std::string id = fmt::format("{}{}", labels[c][0], v);
        write_clip(root / "raw" / (id + ".avi"), 10 * c + v);
        manifest += fmt::format("{},raw/{}.avi,{},convex,video,synthetic,30,,,,,\n", id, id, labels[c]);
      }
    }
    write_file_atomic(root / "manifest.csv", manifest);
    const json cfg{{"model", {{"arch", "vgg_cam"}, {"backbone", {{"vgg_filters", {4, 8}}, {"vgg_convs", {1, 1}}}}}},
                   {"train", {{"epochs", 1}, {"batch_size", 16}, {"learning_rate", 1e-3}}},
                   {"mmd", {{"n_resamples", 200}}},
                   {"uncertainty", {{"n_passes", 3}}}};
    write_file_atomic(root / "pocus.json", cfg.dump(2));
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static const fs::path& root() { return dir_->path(); }
  static std::string env() { return "POCUS_CONFIG='" + (root() / "pocus.json").string() + "'"; }

  static pocus::testing::TempDir* dir_;
};

pocus::testing::TempDir* Workspace::dir_ = nullptr;

}  // namespace

TEST(Cli, UnknownCommandPrintsUsageAndExits2) {
  pocus::testing::TempDir d;
  const auto r = run("frobnicate", d.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("unknown command 'frobnicate'"), std::string::npos);
  EXPECT_NE(r.out.find("Subcommands:"), std::string::npos);
  for (const char* c : {"ingest", "split", "train", "evaluate", "explain", "mmd", "uncertainty", "serve", "bundle"}) {
    EXPECT_NE(r.out.find(c), std::string::npos) << c;
  }
  EXPECT_EQ(run("", d.path()).code, 2);
  EXPECT_EQ(run("split --folds", d.path()).code, 2);
}

TEST(Cli, ModuleErrorsExitNonZero) {
  pocus::testing::TempDir d;
  const auto r = run("mmd --points missing.csv", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("missing.csv"), std::string::npos);
  write_file_atomic(d / "bad.json", R"({"trian": {}})");
  const auto bad = run("mmd --points x.csv", d.path(), "POCUS_CONFIG=bad.json");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("unknown key config.trian"), std::string::npos) << bad.out;
}

TEST(Cli, MmdPrintsStatisticSigmaAndP) {
  pocus::testing::TempDir d;
  std::vector<explain::CamPoint> pts;
  for (int i = 0; i < 12; ++i) {
    pts.push_back({fmt::format("c{}", i), 0, Label::kCovid, 20.0 + i, 30.0 + (i % 3)});
    pts.push_back({fmt::format("p{}", i), 0, Label::kPneumonia, 180.0 + i, 170.0 + (i % 4)});
    pts.push_back({fmt::format("h{}", i), 0, Label::kHealthy, 25.0 + i, 32.0 + (i % 2)});
  }
  write_file_atomic(d / "cams.csv", explain::cam_points_csv(pts));
  const auto r = run("mmd --points cams.csv --resamples 300 --seed 3 --json out.json", d.path());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::regex line(R"(C-P  n=12/12  MMD²=[0-9.e+-]+  MMD=[0-9.e+-]+  σ=[0-9.e+-]+  p=([0-9.e+-]+))");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.out, m, line)) << r.out;
  EXPECT_NEAR(std::stod(m[1]), 1.0 / 301.0, 1e-9);
  EXPECT_NE(r.out.find("C-H"), std::string::npos);
  EXPECT_NE(r.out.find("P-H"), std::string::npos);
  const auto j = json::parse(read_file(d / "out.json"));
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[0]["pair"], "C-P");
  EXPECT_NEAR(j[0]["mmd"].get<double>(), std::sqrt(j[0]["mmd_sq"].get<double>()), 1e-12);

  const auto one = run("mmd --points cams.csv --pair P-H --resamples 100 --null bootstrap", d.path());
  ASSERT_EQ(one.code, 0) << one.out;
  EXPECT_NE(one.out.find("P-H"), std::string::npos);
  EXPECT_EQ(one.out.find("C-P"), std::string::npos);
  EXPECT_NE(one.out.find("bootstrap"), std::string::npos);
}

TEST_F(Workspace, PipelineEndToEnd) {
  const auto ing = run("ingest --manifest manifest.csv --out frames", root(), env());
  ASSERT_EQ(ing.code, 0) << ing.out;
  EXPECT_NE(ing.out.find("15 recordings -> 90 frames"), std::string::npos) << ing.out;

  const auto sp = run("split --folds 5 --seed 7", root(), env());
  ASSERT_EQ(sp.code, 0) << sp.out;
  const auto split = splits::load_split(root() / "split.json");
  EXPECT_EQ(split.n_folds, 5);
  EXPECT_EQ(split.mapping.size(), 15u);
  // same seed, same bytes
  ASSERT_EQ(run("split --folds 5 --seed 7 --out split2.json", root(), env()).code, 0);
  EXPECT_EQ(read_file(root() / "split.json"), read_file(root() / "split2.json"));

  const auto tr = run("train", root(), env());
  ASSERT_EQ(tr.code, 0) << tr.out;
  for (int k = 0; k < 5; ++k) EXPECT_TRUE(fs::exists(root() / "models" / fmt::format("vgg_cam_fold{}.bin", k)));
  EXPECT_TRUE(fs::exists(root() / "models" / "aggregate.json"));
  const auto again = run("train", root(), env());
  ASSERT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("fold 0: reused"), std::string::npos) << again.out;

  const auto ev = run("evaluate --split split.json --no-plots", root(), env());
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_TRUE(fs::exists(root() / "eval" / "fold0" / "report.json"));
  EXPECT_TRUE(fs::exists(root() / "eval" / "aggregate.json"));
  const auto ens = run("evaluate --out eval_ens --no-plots", root(), env());
  ASSERT_EQ(ens.code, 0) << ens.out;
  EXPECT_EQ(json::parse(read_file(root() / "eval_ens" / "report.json"))["n_samples"], 90);

  const auto ex = run("explain --split split.json --all-frames", root(), env());
  ASSERT_EQ(ex.code, 0) << ex.out;
  const auto pts = explain::load_cam_points(root() / "cams" / "cam_points.csv");
  EXPECT_FALSE(pts.empty());
  EXPECT_TRUE(fs::exists(root() / "cams" / "cam_scatter.png"));

  const auto un = run("uncertainty --split split.json --analysis analysis.json", root(), env());
  ASSERT_EQ(un.code, 0) << un.out;
  EXPECT_NE(read_file(root() / "confidence.csv").find("video_id,frame_index,pred_class"), std::string::npos);
  EXPECT_EQ(json::parse(read_file(root() / "analysis.json"))["n"], 90);
  const auto re = run("uncertainty --scores confidence.csv", root(), env());
  EXPECT_EQ(re.code, 0) << re.out;

  const auto bu = run("bundle --video raw/c0.avi --confidence", root(), env());
  ASSERT_EQ(bu.code, 0) << bu.out;
  const auto pred = json::parse(read_file(root() / "bundles" / "c0" / "predictions.json"));
  EXPECT_EQ(pred["kind"], "review_bundle");
  EXPECT_EQ(pred["frames"].size(), 6u);
  EXPECT_TRUE(fs::exists(root() / "bundles" / "c0" / "overlays" / "frame_000.png"));

  json response{{"api_version", "1"}, {"kind", "predict_response"}, {"media_type", "video"},
                {"class_names", pred["class_names"]}, {"frames", json::array()}, {"video", pred["video"]},
                {"model_info", {{"arch", "vgg_cam"}, {"checkpoints", {"m"}}, {"ensemble", false}}},
                {"options", {{"want_heatmap", true}, {"want_confidence", false}, {"n_passes", 10}, {"seed", 0}}}};
  for (const auto& f : pred["frames"]) {
    response["frames"].push_back({{"frame_index", f["frame_index"]}, {"probs", f["probs"]},
                                  {"pred_class", f["pred_class"]}, {"prob", f["prob"]}});
  }
  const json review{{"api_version", "1"}, {"kind", "review_export"}, {"source", {{"filename", "c0.avi"}}},
                    {"response", response}, {"annotations", {{{"frame_index", 2}, {"agree", false}, {"note", "edge"}}}}};
  write_file_atomic(root() / "review.json", review.dump());
  const auto at = run("bundle --attach review.json --bundle bundles/c0", root(), env());
  ASSERT_EQ(at.code, 0) << at.out;
  EXPECT_EQ(json::parse(read_file(root() / "bundles" / "c0" / "annotations.json"))["frames"]["2"]["agree"], false);
}

TEST_F(Workspace, ServeAnswersHealthAndStopsOnSignal) {
  // reuses the models trained by PipelineEndToEnd when it ran first; make
  // sure they exist either way
  if (!fs::exists(root() / "models" / "vgg_cam_fold4.bin")) {
    ASSERT_EQ(run("ingest --manifest manifest.csv --out frames", root(), env()).code, 0);
    ASSERT_EQ(run("split --folds 5 --seed 7", root(), env()).code, 0);
    ASSERT_EQ(run("train", root(), env()).code, 0);
  }
  const fs::path log = root() / "serve.log";
  const std::string out = log.string();
  const std::string cfg = "POCUS_CONFIG=" + (root() / "pocus.json").string();
  const std::string models = (root() / "models").string();
  std::vector<std::string> args{POCUS_CLI, "serve", "--checkpoint-dir", models, "--port", "0"};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&fa, 1, 2);
  std::vector<std::string> env_store{cfg};
  for (char** e = environ; *e; ++e) env_store.emplace_back(*e);
  std::vector<char*> envp;
  for (auto& e : env_store) envp.push_back(e.data());
  envp.push_back(nullptr);
  pid_t pid = 0;
  ASSERT_EQ(posix_spawn(&pid, POCUS_CLI, &fa, nullptr, argv.data(), envp.data()), 0);
  posix_spawn_file_actions_destroy(&fa);

  int port = 0;
  const std::regex listening(R"(listening on [0-9.]+:([0-9]+))");
  for (int i = 0; i < 600 && port == 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    std::smatch m;
    const std::string text = fs::exists(log) ? read_file(log) : "";
    if (std::regex_search(text, m, listening)) port = std::stoi(m[1]);
  }
  ASSERT_GT(port, 0) << read_file(log);
  httplib::Client cli("127.0.0.1", port);
  auto h = cli.Get("/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->body, R"({"status":"ok"})");
  auto m = cli.Get("/model");
  ASSERT_TRUE(m);
  EXPECT_EQ(json::parse(m->body)["checkpoints"].size(), 5u);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  EXPECT_TRUE(WIFEXITED(status)) << read_file(log);
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
