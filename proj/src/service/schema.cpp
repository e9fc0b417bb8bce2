#include "pocus/service/schema.hpp"

#include <fmt/format.h>

#include <cmath>
#include <set>

#include "pocus/types.hpp"

namespace pocus::service {

namespace {

using nlohmann::json;

class Checker {
 public:
  explicit Checker(std::vector<std::string>& errors) : errors_(errors) {}

  void fail(const std::string& path, const std::string& what) { errors_.push_back(path + ": " + what); }

  bool object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    fail(path, "expected an object");
    return false;
  }

  // Member of kind `pred`; records a problem when absent (unless optional) or mistyped.
  template <typename Pred>
  const json* member(const json& obj, const std::string& path, const char* key, Pred pred, const char* kind,
                     bool optional = false) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
      if (!optional) fail(path, fmt::format("missing '{}'", key));
      return nullptr;
    }
    if (!pred(*it)) {
      fail(path + "." + key, fmt::format("expected {}", kind));
      return nullptr;
    }
    return &*it;
  }

  const json* string(const json& o, const std::string& p, const char* k, bool opt = false) {
    return member(o, p, k, [](const json& v) { return v.is_string(); }, "a string", opt);
  }
  const json* boolean(const json& o, const std::string& p, const char* k, bool opt = false) {
    return member(o, p, k, [](const json& v) { return v.is_boolean(); }, "a boolean", opt);
  }
  const json* integer(const json& o, const std::string& p, const char* k, bool opt = false) {
    return member(o, p, k, [](const json& v) { return v.is_number_integer(); }, "an integer", opt);
  }
  const json* array(const json& o, const std::string& p, const char* k, bool opt = false) {
    return member(o, p, k, [](const json& v) { return v.is_array(); }, "an array", opt);
  }

  void constant(const json& o, const std::string& p, const char* k, const char* value) {
    if (const auto* v = string(o, p, k); v && v->get<std::string>() != value) {
      fail(p + "." + k, fmt::format("expected \"{}\"", value));
    }
  }

  void unit_interval(const json& o, const std::string& p, const char* k, bool opt) {
    const auto* v = member(o, p, k, [](const json& x) { return x.is_number(); }, "a number", opt);
    if (!v) return;
    const double d = v->get<double>();
    if (!(d >= 0.0 && d <= 1.0)) fail(p + "." + k, fmt::format("{} outside [0, 1]", d));
  }

  // Probability row of length k; returns it when well-formed.
  std::optional<std::vector<double>> probs(const json& o, const std::string& p, std::size_t k) {
    const auto* v = array(o, p, "probs");
    if (!v) return std::nullopt;
    const std::string path = p + ".probs";
    if (v->size() != k) {
      fail(path, fmt::format("{} entries, expected {}", v->size(), k));
      return std::nullopt;
    }
    std::vector<double> row;
    double sum = 0;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& x = (*v)[i];
      if (!x.is_number() || !std::isfinite(x.get<double>()) || x.get<double>() < 0.0 || x.get<double>() > 1.0) {
        fail(fmt::format("{}[{}]", path, i), "expected a probability");
        return std::nullopt;
      }
      row.push_back(x.get<double>());
      sum += row.back();
    }
    if (std::abs(sum - 1.0) > 1e-5) {
      fail(path, fmt::format("sums to {}", sum));
      return std::nullopt;
    }
    return row;
  }

  void pred_class(const json& o, const std::string& p, const std::optional<std::vector<double>>& row) {
    const auto* v = integer(o, p, "pred_class");
    if (!v || !row) return;
    const int c = v->get<int>();
    if (c < 0 || c >= static_cast<int>(row->size())) {
      fail(p + ".pred_class", fmt::format("{} out of range", c));
      return;
    }
    for (std::size_t i = 0; i < row->size(); ++i) {
      if ((*row)[i] > (*row)[c] || ((*row)[i] == (*row)[c] && static_cast<int>(i) < c)) {
        fail(p + ".pred_class", fmt::format("{} is not the argmax of probs", c));
        return;
      }
    }
  }

 private:
  std::vector<std::string>& errors_;
};

void check_predict(Checker& ck, const json& j, const std::string& root) {
  if (!ck.object(j, root)) return;
  ck.constant(j, root, "api_version", kApiVersion);
  ck.constant(j, root, "kind", "predict_response");
  if (const auto* m = ck.string(j, root, "media_type")) {
    if (!parse_media_kind(m->get<std::string>())) ck.fail(root + ".media_type", "expected \"image\" or \"video\"");
  }
  std::size_t k = kNumClasses;
  if (const auto* names = ck.array(j, root, "class_names")) {
    if (names->size() != kNumClasses) ck.fail(root + ".class_names", fmt::format("{} names, expected {}", names->size(), kNumClasses));
    for (const auto& n : *names) {
      if (!n.is_string()) ck.fail(root + ".class_names", "expected strings");
    }
  }

  std::vector<double> mean(k, 0.0);
  bool mean_ok = true;
  std::size_t n_frames = 0;
  if (const auto* frames = ck.array(j, root, "frames")) {
    if (frames->empty()) ck.fail(root + ".frames", "no frames");
    std::set<int> seen;
    for (std::size_t i = 0; i < frames->size(); ++i) {
      const std::string p = fmt::format("{}.frames[{}]", root, i);
      const auto& f = (*frames)[i];
      if (!ck.object(f, p)) {
        mean_ok = false;
        continue;
      }
      if (const auto* idx = ck.integer(f, p, "frame_index")) {
        if (idx->get<int>() < 0) ck.fail(p + ".frame_index", "negative");
        if (!seen.insert(idx->get<int>()).second) ck.fail(p + ".frame_index", "duplicate");
      }
      const auto row = ck.probs(f, p, k);
      ck.pred_class(f, p, row);
      ck.unit_interval(f, p, "prob", false);
      if (row && f.contains("pred_class") && f.contains("prob") && f["prob"].is_number() && f["pred_class"].is_number_integer()) {
        const int c = f["pred_class"].get<int>();
        if (c >= 0 && c < static_cast<int>(k) && f["prob"].get<double>() != (*row)[c]) {
          ck.fail(p + ".prob", "differs from probs[pred_class]");
        }
      }
      ck.unit_interval(f, p, "epistemic_c", true);
      ck.unit_interval(f, p, "aleatoric_c", true);
      if (const auto* h = ck.string(f, p, "heatmap_ref", true)) {
        if (h->get<std::string>().rfind("data:image/png;base64,", 0) != 0) {
          ck.fail(p + ".heatmap_ref", "expected a data:image/png;base64 URI");
        }
      }
      if (row) {
        for (std::size_t c = 0; c < k; ++c) mean[c] += (*row)[c];
        ++n_frames;
      } else {
        mean_ok = false;
      }
    }
  }

  if (const auto* video = ck.member(j, root, "video", [](const json& v) { return v.is_object(); }, "an object")) {
    const std::string p = root + ".video";
    const auto row = ck.probs(*video, p, k);
    ck.pred_class(*video, p, row);
    if (row && mean_ok && n_frames > 0) {
      for (std::size_t c = 0; c < k; ++c) {
        if (std::abs((*row)[c] - mean[c] / n_frames) > 1e-6) {
          ck.fail(p + ".probs", "is not the mean of the frame probabilities");
          break;
        }
      }
    }
  }

  if (const auto* info = ck.member(j, root, "model_info", [](const json& v) { return v.is_object(); }, "an object")) {
    const std::string p = root + ".model_info";
    ck.string(*info, p, "arch");
    const auto* ens = ck.boolean(*info, p, "ensemble");
    if (const auto* cps = ck.array(*info, p, "checkpoints")) {
      if (cps->empty()) ck.fail(p + ".checkpoints", "empty");
      for (const auto& c : *cps) {
        if (!c.is_string()) ck.fail(p + ".checkpoints", "expected strings");
      }
      if (ens && !ens->get<bool>() && cps->size() != 1) ck.fail(p + ".checkpoints", "single-model response lists several");
    }
  }

  if (const auto* opt = ck.member(j, root, "options", [](const json& v) { return v.is_object(); }, "an object")) {
    const std::string p = root + ".options";
    ck.boolean(*opt, p, "want_heatmap");
    ck.boolean(*opt, p, "want_confidence");
    if (const auto* n = ck.integer(*opt, p, "n_passes"); n && n->get<int>() < 2) ck.fail(p + ".n_passes", "must be >= 2");
    ck.member(*opt, p, "seed", [](const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); },
              "a non-negative integer");
  }
}

}  // namespace

std::vector<std::string> predict_response_errors(const nlohmann::json& j) {
  std::vector<std::string> errors;
  Checker ck(errors);
  check_predict(ck, j, "$");
  return errors;
}

std::vector<std::string> review_export_errors(const nlohmann::json& j) {
  std::vector<std::string> errors;
  Checker ck(errors);
  if (!ck.object(j, "$")) return errors;
  ck.constant(j, "$", "api_version", kApiVersion);
  ck.constant(j, "$", "kind", "review_export");
  ck.string(j, "$", "reviewer", true);
  ck.string(j, "$", "exported_at", true);
  if (const auto* src = ck.member(j, "$", "source", [](const json& v) { return v.is_object(); }, "an object")) {
    ck.string(*src, "$.source", "filename");
  }
  std::set<int> frames;
  if (const auto it = j.find("response"); it == j.end()) {
    ck.fail("$", "missing 'response'");
  } else {
    check_predict(ck, *it, "$.response");
    if (it->is_object() && it->contains("frames") && (*it)["frames"].is_array()) {
      for (const auto& f : (*it)["frames"]) {
        if (f.is_object() && f.contains("frame_index") && f["frame_index"].is_number_integer()) frames.insert(f["frame_index"].get<int>());
      }
    }
  }
  if (const auto* notes = ck.array(j, "$", "annotations")) {
    std::set<int> seen;
    for (std::size_t i = 0; i < notes->size(); ++i) {
      const std::string p = fmt::format("$.annotations[{}]", i);
      const auto& a = (*notes)[i];
      if (!ck.object(a, p)) continue;
      if (const auto* idx = ck.integer(a, p, "frame_index")) {
        const int f = idx->get<int>();
        if (!frames.count(f)) ck.fail(p + ".frame_index", fmt::format("frame {} is not in the response", f));
        if (!seen.insert(f).second) ck.fail(p + ".frame_index", "duplicate");
      }
      ck.member(a, p, "agree", [](const json& v) { return v.is_boolean() || v.is_null(); }, "true, false or null");
      ck.string(a, p, "note");
    }
  }
  return errors;
}

std::vector<std::string> review_bundle_errors(const nlohmann::json& j) {
  std::vector<std::string> errors;
  Checker ck(errors);
  if (!ck.object(j, "$")) return errors;
  ck.constant(j, "$", "api_version", kApiVersion);
  ck.constant(j, "$", "kind", "review_bundle");
  ck.string(j, "$", "video_id");
  std::size_t k = kNumClasses;
  if (const auto* names = ck.array(j, "$", "class_names")) k = names->size();
  if (const auto* frames = ck.array(j, "$", "frames")) {
    if (frames->empty()) ck.fail("$.frames", "no frames");
    for (std::size_t i = 0; i < frames->size(); ++i) {
      const std::string p = fmt::format("$.frames[{}]", i);
      const auto& f = (*frames)[i];
      if (!ck.object(f, p)) continue;
      ck.integer(f, p, "frame_index");
      ck.pred_class(f, p, ck.probs(f, p, k));
      ck.unit_interval(f, p, "prob", false);
      ck.string(f, p, "image");
      ck.member(f, p, "overlay", [](const json& v) { return v.is_string() || v.is_null(); }, "a string or null");
      ck.unit_interval(f, p, "epistemic_c", true);
      ck.unit_interval(f, p, "aleatoric_c", true);
    }
  }
  if (const auto* video = ck.member(j, "$", "video", [](const json& v) { return v.is_object(); }, "an object")) {
    ck.pred_class(*video, "$.video", ck.probs(*video, "$.video", k));
  }
  return errors;
}

}  // namespace pocus::service
