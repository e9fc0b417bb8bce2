#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace pocus::service {

inline constexpr const char* kApiVersion = "1";

// Validators for the documents exchanged with the screening UI. Each returns
// human-readable problems ("frames[2].probs: sums to 1.2"), empty when valid.
// JSON Schema versions live in schemas/.

// /predict response:
//   {api_version: "1", kind: "predict_response", media_type: "image"|"video",
//    class_names: [4 strings],
//    frames: [{frame_index, probs[4], pred_class, prob,
//              epistemic_c?, aleatoric_c?, heatmap_ref?}],
//    video: {probs[4], pred_class},
//    model_info: {arch, checkpoints: [string], ensemble: bool},
//    options: {want_heatmap, want_confidence, n_passes, seed}}
// heatmap_ref is a data:image/png;base64 URI.
std::vector<std::string> predict_response_errors(const nlohmann::json& j);

// Review export written by the UI:
//   {api_version: "1", kind: "review_export", reviewer?: string,
//    exported_at?: string, source: {filename},
//    response: <predict_response>,
//    annotations: [{frame_index, agree: true|false|null, note: string}]}
// Annotation frame indices must exist in response.frames and be unique.
std::vector<std::string> review_export_errors(const nlohmann::json& j);

// predictions.json of a review bundle (see explain/export.hpp).
std::vector<std::string> review_bundle_errors(const nlohmann::json& j);

}  // namespace pocus::service
