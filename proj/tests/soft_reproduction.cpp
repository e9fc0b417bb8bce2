// Full-regimen training run on the public dataset. Not part of ctest: it
// needs the dataset and converted VGG16 weights, and takes hours on CPU.
//
//   soft_reproduction <manifest.csv> <vgg16.bin> [work_dir]
//
// Falls back to $POCUS_DATASET_MANIFEST and $POCUS_VGG16_WEIGHTS. Prints
// NOT RUN and exits 0 when either is missing.
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>

#include "pocus/data/dataset.hpp"
#include "pocus/data/manifest.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/splits/folds.hpp"
#include "pocus/train/trainer.hpp"

using namespace pocus;
namespace fs = std::filesystem;

namespace {

fs::path arg_or_env(int argc, char** argv, int i, const char* env) {
  if (argc > i) return argv[i];
  const char* v = std::getenv(env);
  return v ? fs::path(v) : fs::path();
}

double covid_recall(const eval::MetricsReport& r) {
  for (const auto& c : r.classes)
    if (c.class_index == index_of(Label::kCovid)) return c.metrics.recall;
  return 0.0;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path manifest = arg_or_env(argc, argv, 1, "POCUS_DATASET_MANIFEST");
  const fs::path weights = arg_or_env(argc, argv, 2, "POCUS_VGG16_WEIGHTS");
  const fs::path work = argc > 3 ? fs::path(argv[3]) : fs::path("soft_reproduction_work");
  if (manifest.empty() || !fs::exists(manifest) || weights.empty() || !fs::exists(weights)) {
    fmt::print("NOT RUN soft reproduction: dataset manifest or VGG16 weights not found\n");
    return 0;
  }
  try {
    const auto ds = data::build_dataset(data::load_manifest(manifest), data::DatasetOptions{});
    const auto split = splits::stratified_group_kfold(ds.index(), 5, 0);
    fmt::print("{}", splits::audit_folds(ds.index(), split).summary());

    train::CvConfig cv;
    cv.model = models::default_config(models::Arch::kVggCam);
    cv.model.pretrained_backbone = true;
    cv.model.pretrained_path = weights.string();
    cv.train.epochs = 40;
    cv.train.batch_size = 8;
    cv.train.learning_rate = 1e-4;
    cv.out_dir = work;
    const auto res = train::run_cross_validation(ds, split, cv);

    double acc = 0, recall = 0;
    for (const auto& f : res.folds) {
      fmt::print("fold {}: frame acc {:.3f}, video covid recall {:.3f}\n", f.fold, f.frames.accuracy, covid_recall(f.videos));
      acc += f.frames.accuracy / res.folds.size();
      recall += covid_recall(f.videos) / res.folds.size();
    }
    const bool ok = acc >= 0.80 && recall >= 0.90;
    fmt::print("{} soft reproduction: frame accuracy {:.3f} (>= 0.80), video covid recall {:.3f} (>= 0.90)\n",
               ok ? "PASS" : "FAIL", acc, recall);
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    fmt::print("FAIL soft reproduction: {}\n", e.what());
    return 1;
  }
}
