// pocus: command-line front end. Exit status 0 ok, 1 module error, 2 usage.
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <csignal>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>

#include "pocus/config.hpp"
#include "pocus/data/dataset.hpp"
#include "pocus/data/frames.hpp"
#include "pocus/data/manifest.hpp"
#include "pocus/error.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/explain/cam.hpp"
#include "pocus/explain/export.hpp"
#include "pocus/explain/mmd.hpp"
#include "pocus/models/checkpoint.hpp"
#include "pocus/service/server.hpp"
#include "pocus/splits/folds.hpp"
#include "pocus/train/trainer.hpp"
#include "pocus/uncertainty/confidence.hpp"
#include "pocus/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pocus;

namespace {

const std::vector<std::string> kCommands{"ingest", "split", "train", "evaluate", "explain",
                                         "mmd",    "uncertainty", "serve", "bundle"};

// ------------------------------------------------------------------ shared

struct ModelSet {
  std::vector<models::LoadedCheckpoint> loaded;
  std::vector<const models::Classifier*> all;
};

// <dir>/<arch>_fold<K>.bin for K < folds, all of them present.
ModelSet load_models(const fs::path& dir, const std::string& arch, int folds) {
  service::ServiceConfig sc;
  sc.checkpoint_dir = dir;
  sc.arch = arch;
  sc.folds = folds;
  ModelSet set;
  for (const auto& p : service::resolve_checkpoints(sc)) set.loaded.push_back(models::load_checkpoint(p));
  for (const auto& l : set.loaded) set.all.push_back(&l.model);
  return set;
}

// Rows plus the models that score them: either the whole ensemble on every
// frame, or fold model K on the videos held out from it.
struct Route {
  std::string name;
  std::vector<const models::Classifier*> models;
  std::vector<std::size_t> rows;
};

std::vector<Route> routes_for(const ModelSet& set, const data::Dataset& ds, const std::optional<fs::path>& split_file) {
  if (!split_file) {
    std::vector<std::size_t> rows(ds.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return {{"ensemble", set.all, rows}};
  }
  const auto split = splits::load_split(*split_file);
  if (split.n_folds != static_cast<int>(set.loaded.size())) {
    throw ConfigError(fmt::format("split has {} folds but {} checkpoints were loaded", split.n_folds, set.loaded.size()));
  }
  std::vector<Route> out;
  for (int k = 0; k < split.n_folds; ++k) {
    train::require_matching_split(set.loaded[k].meta, split);
    out.push_back({fmt::format("fold{}", k), {set.all[k]}, train::fold_rows(ds, split, k).held_out});
  }
  return out;
}

std::vector<std::string> class_names() {
  std::vector<std::string> names;
  for (int c = 0; c < kNumClasses; ++c) names.emplace_back(to_string(label_from_index(c)));
  return names;
}

// "C" or "covid"
std::optional<Label> parse_class(std::string_view s) {
  for (int c = 0; c < kNumClasses; ++c) {
    if (s.size() == 1 && s[0] == label_letter(label_from_index(c))) return label_from_index(c);
  }
  return parse_label(s);
}

void apply_arch(AppConfig& cfg, const std::string& arch) {
  if (arch.empty()) return;
  const auto a = models::parse_arch(arch);
  if (a != cfg.model.arch) cfg.model = models::default_config(a);
}

// ------------------------------------------------------------------ commands

struct Common {
  std::string config;
  AppConfig cfg;
};

int cmd_ingest(Common& c, const fs::path& manifest, const fs::path& out) {
  const auto records = data::load_manifest(manifest);
  const auto ds = data::build_dataset(records, c.cfg.data);
  data::write_frame_cache(ds, out);
  fmt::print("{} recordings -> {} frames in {}\n{}\n", records.size(), ds.size(), out.string(),
             data::format_class_counts(ds.class_counts()));
  return 0;
}

int cmd_split(Common& c, const fs::path& frames, const fs::path& out) {
  const auto ds = data::load_frame_cache(frames);
  const auto& s = c.cfg.splits;
  const auto assignment = splits::stratified_group_kfold(ds.index(), s.n_folds, s.seed, s.refine_balance);
  const auto audit = splits::audit_folds(ds.index(), assignment, s.tolerance);
  splits::save_split(out, assignment);
  fmt::print("{}wrote {} (sha256 {})\n", audit.summary(), out.string(), splits::split_hash(assignment));
  return audit.ok() ? 0 : 1;
}

int cmd_train(Common& c, const fs::path& frames, const fs::path& split_file, const fs::path& out,
              const std::vector<int>& folds, bool no_resume) {
  const auto ds = data::load_frame_cache(frames);
  const auto split = splits::load_split(split_file);
  train::CvConfig cv;
  cv.model = c.cfg.model;
  cv.train = c.cfg.train;
  cv.augment = c.cfg.augment;
  cv.eval = c.cfg.eval;
  cv.out_dir = out;
  cv.resume = !no_resume;
  cv.folds = folds;
  const auto res = train::run_cross_validation(ds, split, cv);
  for (const auto& f : res.folds) {
    fmt::print("fold {}: {} best_epoch={} frame_acc={:.4f} video_acc={:.4f} -> {}\n", f.fold,
               f.trained ? "trained" : "reused", f.log.best_epoch, f.frames.accuracy, f.videos.accuracy,
               f.checkpoint.string());
  }
  fmt::print("frames: {}\nvideos: {}\n", res.aggregate_frames.dump(), res.aggregate_videos.dump());
  return 0;
}

int cmd_evaluate(Common& c, const fs::path& frames, const fs::path& model_dir, int folds,
                 const std::optional<fs::path>& split_file, const fs::path& out, bool plots) {
  const auto ds = data::load_frame_cache(frames);
  const auto set = load_models(model_dir, models::to_string(c.cfg.model.arch), folds);
  std::vector<eval::MetricsReport> frame_reports, video_reports;
  for (const auto& r : routes_for(set, ds, split_file)) {
    const auto res = eval::evaluate(eval::ensemble(r.models), ds, r.rows, c.cfg.eval);
    const fs::path dir = split_file ? out / r.name : out;
    eval::write_report(dir, res.frames, "", plots);
    eval::write_report(dir, res.videos, "video_", plots);
    fmt::print("{}: frames n={} acc={:.4f} bal_acc={:.4f} | videos n={} acc={:.4f}\n", r.name, res.frames.n_samples,
               res.frames.accuracy, res.frames.balanced_accuracy, res.videos.n_samples, res.videos.accuracy);
    for (const auto& w : res.frames.warnings) spdlog::warn("{}: {}", r.name, w);
    frame_reports.push_back(res.frames);
    video_reports.push_back(res.videos);
  }
  if (split_file) {
    const json agg{{"frames", eval::aggregate_reports(frame_reports)}, {"videos", eval::aggregate_reports(video_reports)}};
    write_file_atomic(out / "aggregate.json", agg.dump(2));
    fmt::print("aggregate: {}\n", agg.dump());
  }
  return 0;
}

int cmd_explain(Common& c, const fs::path& frames, const fs::path& model_dir, int folds,
                const std::optional<fs::path>& split_file, const fs::path& out, bool all_frames) {
  const auto ds = data::load_frame_cache(frames);
  const auto set = load_models(model_dir, models::to_string(c.cfg.model.arch), folds);
  std::vector<explain::CamPoint> points;
  int skipped_wrong = 0, skipped_uniform = 0;
  for (const auto& r : routes_for(set, ds, split_file)) {
    for (std::size_t b = 0; b < r.rows.size(); b += 8) {
      std::vector<nn::Tensor> items;
      const std::size_t end = std::min(r.rows.size(), b + 8);
      for (std::size_t i = b; i < end; ++i) items.push_back(ds[r.rows[i]].pixels);
      const auto probs = eval::ensemble_predict(r.models, nn::stack(items));
      for (std::size_t i = b; i < end; ++i) {
        const auto& s = ds[r.rows[i]];
        std::vector<double> p(kNumClasses);
        for (int k = 0; k < kNumClasses; ++k) p[k] = probs[(i - b) * kNumClasses + k];
        const Label pred = label_from_index(eval::argmax(std::span<const double>(p)));
        if (!all_frames && pred != s.label) {
          ++skipped_wrong;
          continue;
        }
        if (pred == Label::kUninformative) continue;
        const auto hm = explain::ensemble_heatmap(r.models, s.pixels, index_of(pred));
        const auto mp = explain::max_activation_point(hm);
        if (mp.uniform) {
          ++skipped_uniform;
          continue;
        }
        points.push_back({s.video_id, s.frame_index, pred, double(mp.x), double(mp.y)});
      }
    }
  }
  if (skipped_wrong) spdlog::info("{} misclassified frames left out (use --all-frames to keep them)", skipped_wrong);
  if (skipped_uniform) spdlog::warn("{} frames had a constant heatmap and no maximum", skipped_uniform);
  const auto exp = explain::cam_scatter_export(points, out);
  for (const auto& w : exp.warnings) spdlog::warn("{}", w);
  fmt::print("{} cam points; wrote {} files to {}\n", points.size(), exp.files.size(), out.string());
  return 0;
}

int cmd_mmd(Common& c, const fs::path& points_file, const std::string& pair, const std::optional<fs::path>& json_out) {
  const auto points = explain::load_cam_points(points_file);
  std::vector<explain::PairTest> tests;
  std::vector<std::string> warnings;
  if (pair.empty()) {
    tests = explain::class_pair_tests(points, c.cfg.mmd, &warnings);
  } else {
    const auto dash = pair.find_first_of("-,");
    if (dash == std::string::npos) throw ConfigError("--pair expects two classes like C-P");
    const auto a = parse_class(pair.substr(0, dash)), b = parse_class(pair.substr(dash + 1));
    if (!a || !b || *a == *b) throw ConfigError("--pair expects two different classes like C-P");
    auto groups = explain::group_by_class(points);
    tests.push_back({*a, *b, explain::resampling_test(groups[*a], groups[*b], c.cfg.mmd)});
  }
  for (const auto& w : warnings) spdlog::warn("{}", w);
  json all = json::array();
  for (const auto& t : tests) {
    const auto& r = t.result;
    fmt::print("{}-{}  n={}/{}  MMD²={:.6g}  MMD={:.6g}  σ={:.6g}  p={:.6g}  ({} {}{})\n", label_letter(t.a),
               label_letter(t.b), r.n_x, r.n_y, r.mmd_sq, r.mmd, r.sigma, r.p_value, r.null_values.size(),
               explain::to_string(r.null), r.exact ? ", exact" : "");
    for (const auto& w : r.warnings) spdlog::warn("{}", w);
    json j = explain::to_json(r);
    j["pair"] = fmt::format("{}-{}", label_letter(t.a), label_letter(t.b));
    all.push_back(j);
  }
  if (json_out) write_file_atomic(*json_out, all.dump(2));
  return 0;
}

int cmd_uncertainty(Common& c, const std::optional<fs::path>& scores, const fs::path& frames, const fs::path& model_dir,
                    int folds, const std::optional<fs::path>& split_file, const fs::path& out_csv,
                    const std::optional<fs::path>& analysis_out) {
  std::vector<uncertainty::ConfidenceRow> rows;
  if (scores) {
    rows = uncertainty::parse_confidence_csv(read_file(*scores));
  } else {
    const auto ds = data::load_frame_cache(frames);
    const auto set = load_models(model_dir, models::to_string(c.cfg.model.arch), folds);
    uncertainty::ScoringOptions opt;
    opt.n_passes = c.cfg.uncertainty.n_passes;
    opt.seed = c.cfg.uncertainty.seed;
    opt.dropout_rate = c.cfg.uncertainty.dropout_rate;
    opt.policy = c.cfg.augment;
    for (const auto& r : routes_for(set, ds, split_file)) {
      auto part = uncertainty::score_dataset(r.models, ds, r.rows, opt);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    write_file_atomic(out_csv, uncertainty::confidence_csv(rows));
    fmt::print("wrote {} rows to {}\n", rows.size(), out_csv.string());
  }
  const auto analysis = uncertainty::analyze(rows);
  fmt::print("{}\n", analysis.dump(2));
  if (analysis_out) write_file_atomic(*analysis_out, analysis.dump(2));
  return 0;
}

int cmd_serve(Common& c, const json& overrides) {
  json sj = c.cfg.service;
  for (const auto& [k, v] : overrides.items()) sj[k] = v;
  if (!sj.contains("arch")) sj["arch"] = models::to_string(c.cfg.model.arch);
  if (!sj.contains("tta_policy")) sj["tta_policy"] = data::to_json(c.cfg.augment);
  auto sc = service::service_config_from_json(sj);
  // SIGINT/SIGTERM are taken by a waiter thread, which stops the server
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  service::Server server(std::move(sc));
  const int port = server.bind();
  fmt::print("listening on {}:{}\n", server.engine().config().host, port);
  std::fflush(stdout);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("signal {}, stopping", sig);
    server.stop();
  });
  server.listen();
  // listen() can also return on its own; wake the waiter
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

int cmd_bundle(Common& c, const fs::path& video, const fs::path& model_dir, int folds, const fs::path& out,
               std::string video_id, bool heatmaps, bool confidence) {
  if (video_id.empty()) video_id = video.stem().string();
  const auto set = load_models(model_dir, models::to_string(c.cfg.model.arch), folds);
  double fps = 0;
  {
    auto cap = data::open_video(video);
    if (!cap.isOpened()) throw IoError("cannot open video " + video.string());
    fps = cap.get(cv::CAP_PROP_FPS);
  }
  if (!(fps > 0)) throw ValidationError(video.string() + ": no frame rate");
  const auto raw = data::extract_frames_from_file(video, fps, c.cfg.data.target_hz, c.cfg.data.max_frames);
  std::vector<explain::ReviewFrame> frames;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    explain::ReviewFrame f;
    f.frame_index = static_cast<int>(i);
    f.pixels = data::preprocess(data::crop_square(raw[i].image));
    const auto batch = nn::stack(std::vector<nn::Tensor>{f.pixels});
    const auto probs = eval::ensemble_predict(set.all, batch);
    for (int k = 0; k < kNumClasses; ++k) f.probs.push_back(probs[k]);
    const int pred = eval::argmax(std::span<const double>(f.probs));
    if (heatmaps) f.heatmap = explain::ensemble_heatmap(set.all, f.pixels, pred);
    if (confidence) {
      models::StochasticOptions opt;
      opt.n_passes = c.cfg.uncertainty.n_passes;
      opt.dropout_rate = c.cfg.uncertainty.dropout_rate;
      opt.seed = derive_seed(c.cfg.uncertainty.seed, 2 * i);
      f.epistemic_c = uncertainty::confidence_from_passes(uncertainty::stochastic_stack(set.all, batch, opt),
                                                          uncertainty::Kind::kEpistemic)[0].value;
      opt.mode = models::StochasticMode::kTta;
      opt.policy = c.cfg.augment;
      opt.seed = derive_seed(c.cfg.uncertainty.seed, 2 * i + 1);
      f.aleatoric_c = uncertainty::confidence_from_passes(uncertainty::stochastic_stack(set.all, batch, opt),
                                                          uncertainty::Kind::kAleatoric)[0].value;
    }
    frames.push_back(std::move(f));
  }
  const auto dir = explain::write_review_bundle(out, video_id, frames, class_names());
  fmt::print("{} frames -> {}\n", frames.size(), dir.string());
  return 0;
}

int cmd_attach(const fs::path& bundle, const fs::path& review) {
  explain::attach_review(bundle, json::parse(read_file(review)));
  fmt::print("annotations written to {}\n", (bundle / "annotations.json").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pocus: lung ultrasound frame classification, explanation and serving", "pocus"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config, "JSON config file (default: $POCUS_CONFIG)");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  // flags shared by the model-consuming commands
  struct ModelFlags {
    std::string frames = "frames", models = "models", arch;
    int folds = 5;
    std::string split;
  };

  auto* ingest = app.add_subcommand("ingest", "extract, crop and cache frames listed in a manifest");
  std::string manifest, ingest_out = "frames";
  std::optional<double> target_hz;
  std::optional<int> max_frames;
  bool include_uninf = false;
  ingest->add_option("--manifest", manifest, "manifest CSV")->required();
  ingest->add_option("--out", ingest_out, "frame cache directory")->capture_default_str();
  ingest->add_option("--target-hz", target_hz, "data.target_hz");
  ingest->add_option("--max-frames", max_frames, "data.max_frames");
  ingest->add_flag("--include-uninformative", include_uninf, "data.include_uninformative");

  auto* split = app.add_subcommand("split", "assign videos to stratified folds and write the split JSON");
  std::string split_frames = "frames", split_out = "split.json";
  std::optional<int> n_folds;
  std::optional<std::uint64_t> split_seed;
  std::optional<double> tolerance;
  bool no_refine = false;
  split->add_option("--frames", split_frames, "frame cache directory")->capture_default_str();
  split->add_option("--folds", n_folds, "splits.n_folds");
  split->add_option("--seed", split_seed, "splits.seed");
  split->add_option("--tolerance", tolerance, "splits.tolerance");
  split->add_flag("--no-refine", no_refine, "skip the balance local search");
  split->add_option("--out", split_out, "split JSON")->capture_default_str();

  auto* train = app.add_subcommand("train", "cross-validated training, one checkpoint per fold");
  std::string train_frames = "frames", train_split = "split.json", train_out = "models", train_arch;
  std::vector<int> train_folds;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> train_seed;
  bool no_resume = false;
  train->add_option("--frames", train_frames)->capture_default_str();
  train->add_option("--split", train_split)->capture_default_str();
  train->add_option("--out", train_out, "checkpoint directory")->capture_default_str();
  train->add_option("--arch", train_arch, "vgg_cam, vgg_head, mobile, segment_enc, video3d");
  train->add_option("--fold", train_folds, "train only these folds");
  train->add_option("--epochs", epochs, "train.epochs");
  train->add_option("--batch-size", batch_size, "train.batch_size");
  train->add_option("--lr", lr, "train.learning_rate");
  train->add_option("--seed", train_seed, "train.seed");
  train->add_flag("--no-resume", no_resume, "retrain even when a matching checkpoint exists");

  auto add_model_flags = [](CLI::App* sub, ModelFlags& f) {
    sub->add_option("--frames", f.frames, "frame cache directory")->capture_default_str();
    sub->add_option("--models", f.models, "checkpoint directory")->capture_default_str();
    sub->add_option("--arch", f.arch, "checkpoint architecture (default: model.arch)");
    sub->add_option("--folds", f.folds, "number of fold checkpoints")->capture_default_str();
    sub->add_option("--split", f.split, "score each video with the fold model that held it out");
  };

  auto* evaluate = app.add_subcommand("evaluate", "metrics, curves and confusion matrices");
  ModelFlags ev;
  std::string eval_out = "eval";
  bool no_plots = false;
  add_model_flags(evaluate, ev);
  evaluate->add_option("--out", eval_out)->capture_default_str();
  evaluate->add_flag("--include-uninformative", include_uninf, "score the uninformative class too");
  evaluate->add_flag("--no-plots", no_plots);

  auto* explain_cmd = app.add_subcommand("explain", "max-activation CAM points, scatter and density plots");
  ModelFlags ex;
  std::string explain_out = "cams";
  bool all_frames = false;
  add_model_flags(explain_cmd, ex);
  explain_cmd->add_option("--out", explain_out)->capture_default_str();
  explain_cmd->add_flag("--all-frames", all_frames, "keep misclassified frames, labelled by prediction");

  auto* mmd = app.add_subcommand("mmd", "kernel two-sample tests between CAM point classes");
  std::string points_file, pair, mmd_json;
  std::optional<int> resamples;
  std::optional<std::uint64_t> mmd_seed;
  std::string null_kind;
  mmd->add_option("--points", points_file, "cam_points.csv")->required();
  mmd->add_option("--pair", pair, "one pair like C-P (default: C-P, C-H, P-H)");
  mmd->add_option("--resamples", resamples, "mmd.n_resamples");
  mmd->add_option("--seed", mmd_seed, "mmd.seed");
  mmd->add_option("--null", null_kind, "permutation or bootstrap");
  mmd->add_option("--json", mmd_json, "write results with null values");

  auto* unc = app.add_subcommand("uncertainty", "epistemic and aleatoric confidence and their correlation");
  ModelFlags un;
  std::string unc_out = "confidence.csv", unc_scores, unc_analysis;
  std::optional<int> passes;
  std::optional<std::uint64_t> unc_seed;
  add_model_flags(unc, un);
  unc->add_option("--out", unc_out, "confidence CSV")->capture_default_str();
  unc->add_option("--scores", unc_scores, "analyze an existing confidence CSV instead of scoring");
  unc->add_option("--analysis", unc_analysis, "write the analysis JSON");
  unc->add_option("--passes", passes, "uncertainty.n_passes");
  unc->add_option("--seed", unc_seed, "uncertainty.seed");

  auto* serve = app.add_subcommand("serve", "HTTP service: GET /health, GET /model, POST /predict");
  std::string serve_dir, serve_arch, host;
  std::vector<std::string> serve_ckpts;
  std::optional<int> port, serve_folds, single_fold, threads;
  std::optional<double> max_mb;
  serve->add_option("--checkpoint-dir", serve_dir, "service.checkpoint_dir");
  serve->add_option("--checkpoint", serve_ckpts, "explicit checkpoint files (repeatable)");
  serve->add_option("--arch", serve_arch, "service.arch");
  serve->add_option("--folds", serve_folds, "service.folds");
  serve->add_option("--single-fold", single_fold, "serve one fold model instead of the ensemble");
  serve->add_option("--host", host, "service.host");
  serve->add_option("--port", port, "service.port (0 picks one)");
  serve->add_option("--max-upload-mb", max_mb, "service.max_upload_bytes in MiB");
  serve->add_option("--threads", threads, "service.http_threads");

  auto* bundle = app.add_subcommand("bundle", "review bundle for one video, or attach a review export");
  std::string bundle_video, bundle_out = "bundles", video_id, attach, bundle_dir;
  ModelFlags bu;
  bool no_heatmap = false, with_conf = false;
  bundle->add_option("--video", bundle_video, "video file");
  bundle->add_option("--models", bu.models)->capture_default_str();
  bundle->add_option("--arch", bu.arch);
  bundle->add_option("--folds", bu.folds)->capture_default_str();
  bundle->add_option("--out", bundle_out)->capture_default_str();
  bundle->add_option("--video-id", video_id, "bundle name (default: file stem)");
  bundle->add_flag("--no-heatmap", no_heatmap);
  bundle->add_flag("--confidence", with_conf, "add epistemic and aleatoric confidence");
  bundle->add_option("--attach", attach, "review export JSON to attach");
  bundle->add_option("--bundle", bundle_dir, "bundle directory for --attach");

  // an unknown command gets the usage text, not CLI11's complaint
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "-c" || a == "--config") {
      ++i;
      continue;
    }
    if (a.rfind("-", 0) == 0) continue;
    if (std::find(kCommands.begin(), kCommands.end(), a) == kCommands.end()) {
      std::cerr << "unknown command '" << a << "'\n\n" << app.help();
      return 2;
    }
    break;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (const auto p = config_path(common.config.empty() ? std::nullopt : std::optional<fs::path>(common.config))) {
      common.cfg = load_app_config(*p);
      spdlog::debug("config {}", p->string());
    }
    auto& cfg = common.cfg;
    auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };

    if (*ingest) {
      if (target_hz) cfg.data.target_hz = *target_hz;
      if (max_frames) cfg.data.max_frames = *max_frames;
      if (include_uninf) cfg.data.include_uninformative = true;
      return cmd_ingest(common, manifest, ingest_out);
    }
    if (*split) {
      if (n_folds) cfg.splits.n_folds = *n_folds;
      if (split_seed) cfg.splits.seed = *split_seed;
      if (tolerance) cfg.splits.tolerance = *tolerance;
      if (no_refine) cfg.splits.refine_balance = false;
      if (cfg.splits.n_folds < 2) throw ConfigError("--folds must be at least 2");
      return cmd_split(common, split_frames, split_out);
    }
    if (*train) {
      apply_arch(cfg, train_arch);
      if (epochs) cfg.train.epochs = *epochs;
      if (batch_size) cfg.train.batch_size = *batch_size;
      if (lr) cfg.train.learning_rate = *lr;
      if (train_seed) cfg.train.seed = *train_seed;
      cfg.train.validate();
      return cmd_train(common, train_frames, train_split, train_out, train_folds, no_resume);
    }
    if (*evaluate) {
      apply_arch(cfg, ev.arch);
      if (include_uninf) cfg.eval.exclude_uninformative = false;
      return cmd_evaluate(common, ev.frames, ev.models, ev.folds, opt_path(ev.split), eval_out, !no_plots);
    }
    if (*explain_cmd) {
      apply_arch(cfg, ex.arch);
      return cmd_explain(common, ex.frames, ex.models, ex.folds, opt_path(ex.split), explain_out, all_frames);
    }
    if (*mmd) {
      if (resamples) cfg.mmd.n_resamples = *resamples;
      if (mmd_seed) cfg.mmd.seed = *mmd_seed;
      if (!null_kind.empty()) cfg.mmd.null = explain::parse_null_kind(null_kind);
      return cmd_mmd(common, points_file, pair, opt_path(mmd_json));
    }
    if (*unc) {
      apply_arch(cfg, un.arch);
      if (passes) cfg.uncertainty.n_passes = *passes;
      if (unc_seed) cfg.uncertainty.seed = *unc_seed;
      return cmd_uncertainty(common, opt_path(unc_scores), un.frames, un.models, un.folds, opt_path(un.split), unc_out,
                             opt_path(unc_analysis));
    }
    if (*serve) {
      json o = json::object();
      if (!serve_dir.empty()) o["checkpoint_dir"] = serve_dir;
      if (!serve_ckpts.empty()) o["checkpoints"] = serve_ckpts;
      if (!serve_arch.empty()) o["arch"] = serve_arch;
      if (serve_folds) o["folds"] = *serve_folds;
      if (single_fold) {
        o["ensemble"] = false;
        o["single_fold"] = *single_fold;
      }
      if (!host.empty()) o["host"] = host;
      if (port) o["port"] = *port;
      if (max_mb) o["max_upload_bytes"] = static_cast<std::size_t>(*max_mb * 1024 * 1024);
      if (threads) o["http_threads"] = *threads;
      return cmd_serve(common, o);
    }
    if (*bundle) {
      if (!attach.empty()) {
        if (bundle_dir.empty()) throw ConfigError("--attach needs --bundle");
        return cmd_attach(bundle_dir, attach);
      }
      if (bundle_video.empty()) throw ConfigError("bundle needs --video (or --attach with --bundle)");
      apply_arch(cfg, bu.arch);
      return cmd_bundle(common, bundle_video, bu.models, bu.folds, bundle_out, video_id, !no_heatmap, with_conf);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
