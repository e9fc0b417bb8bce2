#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pocus/explain/cam.hpp"
#include "pocus/explain/mmd.hpp"
#include "pocus/types.hpp"

namespace pocus::explain {

// Maximal-activation coordinate of one frame's heatmap, in pixels of the
// 224x224 frame.
struct CamPoint {
  std::string video_id;
  int frame_index = 0;
  Label label = Label::kCovid;
  double x = 0;
  double y = 0;
};

// `video_id,frame_index,class,x,y`; class is the one-letter code (C, P, H, U).
inline constexpr std::string_view kCamPointsHeader = "video_id,frame_index,class,x,y";
std::string cam_points_csv(std::span<const CamPoint> points);
// Class accepts the letter or the full name. SchemaError for missing
// columns, ValidationError (with row) for bad values.
std::vector<CamPoint> parse_cam_points(std::string_view csv);
std::vector<CamPoint> load_cam_points(const std::filesystem::path& path);

std::map<Label, std::vector<Point2>> group_by_class(std::span<const CamPoint> points);

struct ScatterExport {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};
// cam_points.csv, cam_scatter.png and one cam_density_<letter>.png per
// diagnostic class. A class without points is left out with a warning.
// ValidationError when there are no points at all.
ScatterExport cam_scatter_export(std::span<const CamPoint> points, const std::filesystem::path& dir);

struct PairTest {
  Label a = Label::kCovid;
  Label b = Label::kPneumonia;
  MmdResult result;
};
// C-P, C-H and P-H tests; pairs with an empty side are skipped with a
// warning appended to `warnings`.
std::vector<PairTest> class_pair_tests(std::span<const CamPoint> points, const ResamplingOptions& options,
                                       std::vector<std::string>* warnings = nullptr);

// One reviewed frame of a video.
struct ReviewFrame {
  int frame_index = 0;
  nn::Tensor pixels;  // (224, 224, 3) RGB in [0, 1]
  std::vector<double> probs;
  std::optional<Heatmap> heatmap;
  std::optional<double> epistemic_c;
  std::optional<double> aleatoric_c;
};

// <dir>/<video_id>/frames/frame_NNN.png, overlays/frame_NNN.png (when a
// heatmap is present) and predictions.json:
//   {kind: "review_bundle", api_version, video_id, class_names,
//    video: {probs, pred_class},
//    frames: [{frame_index, probs, pred_class, prob, image, overlay?,
//              epistemic_c?, aleatoric_c?}]}
// Returns the bundle directory.
std::filesystem::path write_review_bundle(const std::filesystem::path& dir, const std::string& video_id,
                                          std::span<const ReviewFrame> frames,
                                          const std::vector<std::string>& class_names, double alpha = 0.5);

// Copies reviewer annotations from a review export (see
// service/schema.hpp) into <bundle>/annotations.json, keyed by frame index.
// ValidationError when the export names frames the bundle lacks.
void attach_review(const std::filesystem::path& bundle_dir, const nlohmann::json& review_export);

}  // namespace pocus::explain
