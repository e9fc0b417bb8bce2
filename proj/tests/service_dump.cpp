// Writes live /predict documents for the out-of-process JSON Schema check.
// usage: service_dump <out_dir>
#include <fmt/format.h>

#include <iostream>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "pocus/models/checkpoint.hpp"
#include "pocus/service/schema.hpp"
#include "pocus/service/server.hpp"
#include "pocus/util.hpp"
#include "support/fixtures.hpp"

using namespace pocus;
using nlohmann::json;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: service_dump <out_dir>\n";
    return 2;
  }
  const std::filesystem::path out = argv[1];
  std::filesystem::create_directories(out);
  testing::TempDir dir;
  for (int k = 0; k < 5; ++k) {
    models::CheckpointMeta meta;
    meta.config = models::default_config(models::Arch::kVggCam);
    meta.config.backbone.vgg_filters = {4, 8};
    meta.config.backbone.vgg_convs = {1, 1};
    meta.config.init_seed = 7 + k;
    meta.fold = k;
    models::save_checkpoint(models::checkpoint_path(dir.path(), models::Arch::kVggCam, k),
                            models::build_classifier(meta.config), meta);
  }
  service::ServiceConfig cfg;
  cfg.checkpoint_dir = dir.path();
  const service::InferenceEngine engine(cfg);

  service::PredictOptions o;
  o.want_heatmap = true;
  o.want_confidence = true;
  o.n_passes = 3;
  o.seed = 11;

  cv::Mat img(180, 240, CV_8UC3);
  cv::randu(img, cv::Scalar::all(0), cv::Scalar::all(255));
  std::vector<unsigned char> png;
  cv::imencode(".png", img, png);
  const auto image = engine.predict(std::string(png.begin(), png.end()), "still.png", o);

  testing::write_synthetic_video(dir / "clip.avi", 30.0, 40);
  const auto video = engine.predict(read_file(dir / "clip.avi"), "clip.avi", o);

  json notes = json::array();
  for (std::size_t i = 0; i < video["frames"].size(); ++i) {
    notes.push_back({{"frame_index", i}, {"agree", i % 3 == 2 ? json(nullptr) : json(i % 2 == 0)}, {"note", fmt::format("frame {}", i)}});
  }
  const json review{{"api_version", service::kApiVersion}, {"kind", "review_export"}, {"reviewer", "dump"},
                    {"source", {{"filename", "clip.avi"}}}, {"response", video}, {"annotations", notes}};

  write_file_atomic(out / "live_predict_image.json", image.dump(2));
  write_file_atomic(out / "live_predict_video.json", video.dump(2));
  write_file_atomic(out / "live_review_export.json", review.dump(2));
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}
