#include "pocus/explain/export.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>

#include "pocus/data/frames.hpp"
#include "pocus/error.hpp"
#include "pocus/eval/metrics.hpp"
#include "pocus/service/schema.hpp"
#include "pocus/util.hpp"

namespace pocus::explain {

namespace {

std::optional<Label> parse_class(std::string_view s) {
  if (s.size() == 1) {
    for (int c = 0; c < kNumClasses; ++c) {
      if (label_letter(label_from_index(c)) == s[0]) return label_from_index(c);
    }
    return std::nullopt;
  }
  return parse_label(s);
}

void imwrite_or_throw(const std::filesystem::path& p, const cv::Mat& img) {
  if (!cv::imwrite(p.string(), img)) throw IoError("cannot write " + p.string());
}

cv::Scalar class_colour(Label l) {
  switch (l) {
    case Label::kCovid: return {40, 39, 214};
    case Label::kPneumonia: return {180, 119, 31};
    case Label::kHealthy: return {44, 160, 44};
    default: return {127, 127, 127};
  }
}

}  // namespace

std::string cam_points_csv(std::span<const CamPoint> points) {
  std::string out(kCamPointsHeader);
  out += "\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{},{}\n", csv_escape(p.video_id), p.frame_index, label_letter(p.label),
                       format_double(p.x), format_double(p.y));
  }
  return out;
}

std::vector<CamPoint> parse_cam_points(std::string_view csv) {
  const auto rows = parse_csv(csv);
  if (rows.empty()) throw SchemaError("CAM points file is empty");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
  for (const char* need : {"video_id", "frame_index", "class", "x", "y"}) {
    if (!col.count(need)) throw SchemaError(fmt::format("CAM points file lacks column '{}'", need));
  }
  std::vector<CamPoint> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != rows[0].size()) throw ValidationError(fmt::format("row {}: {} fields, expected {}", r, row.size(), rows[0].size()));
    CamPoint p;
    p.video_id = row[col["video_id"]];
    const auto label = parse_class(row[col["class"]]);
    if (!label) throw ValidationError(fmt::format("row {}: unknown class '{}'", r, row[col["class"]]));
    p.label = *label;
    try {
      std::size_t used = 0;
      p.frame_index = std::stoi(row[col["frame_index"]], &used);
      p.x = std::stod(row[col["x"]]);
      p.y = std::stod(row[col["y"]]);
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("row {}: bad number", r));
    }
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError(fmt::format("row {}: non-finite coordinate", r));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<CamPoint> load_cam_points(const std::filesystem::path& path) { return parse_cam_points(read_file(path)); }

std::map<Label, std::vector<Point2>> group_by_class(std::span<const CamPoint> points) {
  std::map<Label, std::vector<Point2>> out;
  for (const auto& p : points) out[p.label].push_back({p.x, p.y});
  return out;
}

ScatterExport cam_scatter_export(std::span<const CamPoint> points, const std::filesystem::path& dir) {
  if (points.empty()) throw ValidationError("no CAM points to export");
  std::filesystem::create_directories(dir);
  ScatterExport ex;
  const auto csv = dir / "cam_points.csv";
  write_file_atomic(csv, cam_points_csv(points));
  ex.files.push_back(csv);

  const auto groups = group_by_class(points);
  constexpr int kScale = 2;
  cv::Mat scatter(kFrameSize * kScale, kFrameSize * kScale, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::rectangle(scatter, cv::Rect(0, 0, scatter.cols, scatter.rows), cv::Scalar(0, 0, 0), 1);
  int legend = 0;
  for (int c = 0; c < kNumDiagnosticClasses; ++c) {
    const Label l = label_from_index(c);
    const auto it = groups.find(l);
    if (it == groups.end()) {
      ex.warnings.push_back(fmt::format("class {} has no CAM points; layer omitted", to_string(l)));
      spdlog::warn(ex.warnings.back());
      continue;
    }
    for (const auto& p : it->second) {
      cv::circle(scatter, cv::Point(static_cast<int>(p[0] * kScale), static_cast<int>(p[1] * kScale)), 3,
                 class_colour(l), cv::FILLED, cv::LINE_AA);
    }
    const cv::Point key(10, 16 + 16 * legend++);
    cv::circle(scatter, key, 4, class_colour(l), cv::FILLED);
    cv::putText(scatter, std::string(1, label_letter(l)), key + cv::Point(8, 5), cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);

    // Smoothed 2-D histogram.
    cv::Mat density = cv::Mat::zeros(kFrameSize, kFrameSize, CV_32F);
    for (const auto& p : it->second) {
      const int x = std::clamp(static_cast<int>(p[0]), 0, kFrameSize - 1);
      const int y = std::clamp(static_cast<int>(p[1]), 0, kFrameSize - 1);
      density.at<float>(y, x) += 1.0f;
    }
    cv::GaussianBlur(density, density, cv::Size(0, 0), 8.0);
    double mx = 0;
    cv::minMaxLoc(density, nullptr, &mx);
    cv::Mat gray;
    density.convertTo(gray, CV_8U, mx > 0 ? 255.0 / mx : 0.0);
    cv::Mat colour;
    cv::applyColorMap(gray, colour, cv::COLORMAP_JET);
    const auto file = dir / fmt::format("cam_density_{}.png", label_letter(l));
    imwrite_or_throw(file, colour);
    ex.files.push_back(file);
  }
  const auto file = dir / "cam_scatter.png";
  imwrite_or_throw(file, scatter);
  ex.files.push_back(file);
  return ex;
}

std::vector<PairTest> class_pair_tests(std::span<const CamPoint> points, const ResamplingOptions& options,
                                       std::vector<std::string>* warnings) {
  const auto groups = group_by_class(points);
  std::vector<PairTest> out;
  const std::pair<Label, Label> pairs[] = {{Label::kCovid, Label::kPneumonia},
                                           {Label::kCovid, Label::kHealthy},
                                           {Label::kPneumonia, Label::kHealthy}};
  for (const auto& [a, b] : pairs) {
    const auto ia = groups.find(a), ib = groups.find(b);
    if (ia == groups.end() || ib == groups.end()) {
      const std::string w = fmt::format("skipping {}-{}: a class has no points", label_letter(a), label_letter(b));
      spdlog::warn(w);
      if (warnings) warnings->push_back(w);
      continue;
    }
    out.push_back({a, b, resampling_test(ia->second, ib->second, options)});
  }
  return out;
}

std::filesystem::path write_review_bundle(const std::filesystem::path& dir, const std::string& video_id,
                                          std::span<const ReviewFrame> frames,
                                          const std::vector<std::string>& class_names, double alpha) {
  if (frames.empty()) throw ValidationError("review bundle needs at least one frame");
  if (video_id.empty() || video_id.find_first_of("/\\") != std::string::npos || video_id == "." || video_id == "..") {
    throw ValidationError(fmt::format("video id '{}' is not usable as a directory name", video_id));
  }
  const auto root = dir / video_id;
  std::filesystem::create_directories(root / "frames");
  std::filesystem::create_directories(root / "overlays");
  const std::size_t k = class_names.size();
  nlohmann::json j{{"kind", "review_bundle"},
                   {"api_version", service::kApiVersion},
                   {"video_id", video_id},
                   {"class_names", class_names}};
  std::vector<double> mean(k, 0.0);
  nlohmann::json entries = nlohmann::json::array();
  std::set<int> seen;
  for (const auto& f : frames) {
    if (f.probs.size() != k) throw ValidationError(fmt::format("frame {}: {} probabilities for {} classes", f.frame_index, f.probs.size(), k));
    if (!seen.insert(f.frame_index).second) throw ValidationError(fmt::format("frame {} appears twice", f.frame_index));
    const std::string name = fmt::format("frame_{:03d}.png", f.frame_index);
    imwrite_or_throw(root / "frames" / name, data::to_bgr8(f.pixels));
    const int pred = eval::argmax(std::span<const double>(f.probs));
    nlohmann::json e{{"frame_index", f.frame_index},
                     {"probs", f.probs},
                     {"pred_class", pred},
                     {"prob", f.probs[pred]},
                     {"image", "frames/" + name},
                     {"overlay", nullptr}};
    if (f.heatmap) {
      imwrite_or_throw(root / "overlays" / name, overlay(f.pixels, *f.heatmap, alpha));
      e["overlay"] = "overlays/" + name;
    }
    if (f.epistemic_c) e["epistemic_c"] = *f.epistemic_c;
    if (f.aleatoric_c) e["aleatoric_c"] = *f.aleatoric_c;
    for (std::size_t c = 0; c < k; ++c) mean[c] += f.probs[c] / frames.size();
    entries.push_back(e);
  }
  j["frames"] = entries;
  j["video"] = {{"probs", mean}, {"pred_class", eval::argmax(std::span<const double>(mean))}};
  write_file_atomic(root / "predictions.json", j.dump(2));
  return root;
}

void attach_review(const std::filesystem::path& bundle_dir, const nlohmann::json& review_export) {
  const auto errors = service::review_export_errors(review_export);
  if (!errors.empty()) throw SchemaError("review export: " + errors.front());
  const auto bundle = nlohmann::json::parse(read_file(bundle_dir / "predictions.json"));
  std::set<int> frames;
  for (const auto& f : bundle.at("frames")) frames.insert(f.at("frame_index").get<int>());
  nlohmann::json out{{"kind", "review_annotations"},
                     {"video_id", bundle.at("video_id")},
                     {"reviewer", review_export.value("reviewer", "")},
                     {"frames", nlohmann::json::object()}};
  for (const auto& a : review_export.at("annotations")) {
    const int idx = a.at("frame_index").get<int>();
    if (!frames.count(idx)) throw ValidationError(fmt::format("review names frame {} which the bundle lacks", idx));
    out["frames"][std::to_string(idx)] = {{"agree", a.at("agree")}, {"note", a.at("note")}};
  }
  write_file_atomic(bundle_dir / "annotations.json", out.dump(2));
}

}  // namespace pocus::explain
