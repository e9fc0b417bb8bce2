#include "pocus/models/classifier.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pocus/error.hpp"
#include "pocus/types.hpp"
#include "pocus/util.hpp"

namespace pocus::models {

using nlohmann::json;

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::kVggHead: return "vgg_head";
    case Arch::kVggCam: return "vgg_cam";
    case Arch::kMobile: return "mobile";
    case Arch::kSegmentEnc: return "segment_enc";
    case Arch::kVideo3d: return "video3d";
  }
  return "?";
}

Arch parse_arch(std::string_view text) {
  for (Arch a : {Arch::kVggHead, Arch::kVggCam, Arch::kMobile, Arch::kSegmentEnc, Arch::kVideo3d}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError(fmt::format("unknown arch '{}' (vgg_head, vgg_cam, mobile, segment_enc, video3d)",
                                text));
}

std::string to_string(InputNormalization n) {
  switch (n) {
    case InputNormalization::kNone: return "none";
    case InputNormalization::kCaffe: return "caffe";
    case InputNormalization::kTf: return "tf";
  }
  return "?";
}

InputNormalization parse_normalization(std::string_view text) {
  if (text == "none") return InputNormalization::kNone;
  if (text == "caffe") return InputNormalization::kCaffe;
  if (text == "tf") return InputNormalization::kTf;
  throw ConfigError(fmt::format("unknown input normalization '{}'", text));
}

std::string to_string(StochasticMode mode) {
  return mode == StochasticMode::kDropout ? "dropout" : "tta";
}

StochasticMode parse_stochastic_mode(std::string_view text) {
  if (text == "dropout") return StochasticMode::kDropout;
  if (text == "tta") return StochasticMode::kTta;
  throw ConfigError(fmt::format("unknown stochastic mode '{}'", text));
}

// ---------------------------------------------------------------- config

std::vector<int> ClassifierConfig::input_shape() const {
  switch (arch) {
    case Arch::kSegmentEnc: return {feature_dim};
    case Arch::kVideo3d: return {chunk_len, kFrameSize, kFrameSize, kFrameChannels};
    default: return {kFrameSize, kFrameSize, kFrameChannels};
  }
}

void ClassifierConfig::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must be in [0, 1)");
  }
  if (pretrained_backbone && pretrained_path.empty()) {
    throw ConfigError("pretrained_backbone is set but no pretrained_path was given");
  }
  if (pretrained_backbone && arch == Arch::kSegmentEnc) {
    throw ConfigError("segment_enc has no backbone to load");
  }
  switch (arch) {
    case Arch::kVggHead:
    case Arch::kVggCam:
      if (backbone.vgg_filters.empty() || backbone.vgg_filters.size() != backbone.vgg_convs.size()) {
        throw ConfigError("vgg_filters and vgg_convs must be non-empty and of equal length");
      }
      if (arch == Arch::kVggHead && hidden_units <= 0) throw ConfigError("hidden_units must be > 0");
      break;
    case Arch::kMobile:
      if (backbone.mobile_stem <= 0) throw ConfigError("mobile_stem must be > 0");
      break;
    case Arch::kSegmentEnc:
      if (feature_dim <= 0 || dense_units.empty()) throw ConfigError("bad segment_enc sizes");
      break;
    case Arch::kVideo3d:
      if (chunk_len <= 0 || backbone.video3d_filters.empty()) {
        throw ConfigError("video3d needs chunk_len > 0 and at least one block");
      }
      break;
  }
}

ClassifierConfig default_config(Arch arch) {
  ClassifierConfig c;
  c.arch = arch;
  switch (arch) {
    case Arch::kVggHead:
    case Arch::kVggCam: c.normalization = InputNormalization::kCaffe; break;
    case Arch::kMobile: c.normalization = InputNormalization::kTf; break;
    case Arch::kSegmentEnc:
    case Arch::kVideo3d:
      c.normalization = InputNormalization::kNone;
      c.trainable_tail_layers = -1;
      break;
  }
  return c;
}

json to_json(const ClassifierConfig& c) {
  json blocks = json::array();
  for (auto [f, s] : c.backbone.mobile_blocks) blocks.push_back({f, s});
  return json{
      {"arch", to_string(c.arch)},
      {"n_classes", c.n_classes},
      {"dropout_rate", c.dropout_rate},
      {"trainable_tail_layers", c.trainable_tail_layers},
      {"pretrained_backbone", c.pretrained_backbone},
      {"pretrained_path", c.pretrained_path},
      {"pretrained_sha256", c.pretrained_sha256},
      {"normalization", to_string(c.normalization)},
      {"hidden_units", c.hidden_units},
      {"dense_units", c.dense_units},
      {"feature_dim", c.feature_dim},
      {"chunk_len", c.chunk_len},
      {"init_seed", c.init_seed},
      {"backbone",
       {{"vgg_filters", c.backbone.vgg_filters},
        {"vgg_convs", c.backbone.vgg_convs},
        {"mobile_stem", c.backbone.mobile_stem},
        {"mobile_blocks", blocks},
        {"video3d_filters", c.backbone.video3d_filters}}},
  };
}

ClassifierConfig config_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("model config must be a JSON object");
  if (!j.contains("arch")) throw SchemaError("model config is missing 'arch'");
  ClassifierConfig c = default_config(parse_arch(j.at("arch").get<std::string>()));
  try {
    auto get = [&](const char* key, auto& out) {
      if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    get("n_classes", c.n_classes);
    get("dropout_rate", c.dropout_rate);
    get("trainable_tail_layers", c.trainable_tail_layers);
    get("pretrained_backbone", c.pretrained_backbone);
    get("pretrained_path", c.pretrained_path);
    get("pretrained_sha256", c.pretrained_sha256);
    if (j.contains("normalization")) {
      c.normalization = parse_normalization(j.at("normalization").get<std::string>());
    }
    get("hidden_units", c.hidden_units);
    get("dense_units", c.dense_units);
    get("feature_dim", c.feature_dim);
    get("chunk_len", c.chunk_len);
    get("init_seed", c.init_seed);
    if (j.contains("backbone")) {
      const json& b = j.at("backbone");
      if (b.contains("vgg_filters")) c.backbone.vgg_filters = b.at("vgg_filters").get<std::vector<int>>();
      if (b.contains("vgg_convs")) c.backbone.vgg_convs = b.at("vgg_convs").get<std::vector<int>>();
      if (b.contains("mobile_stem")) c.backbone.mobile_stem = b.at("mobile_stem").get<int>();
      if (b.contains("mobile_blocks")) {
        c.backbone.mobile_blocks.clear();
        for (const auto& blk : b.at("mobile_blocks")) {
          c.backbone.mobile_blocks.emplace_back(blk.at(0).get<int>(), blk.at(1).get<int>());
        }
      }
      if (b.contains("video3d_filters")) {
        c.backbone.video3d_filters = b.at("video3d_filters").get<std::vector<int>>();
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- builders

namespace {

int build_vgg(nn::Sequential& net, const BackboneConfig& b) {
  int in = kFrameChannels;
  for (std::size_t blk = 0; blk < b.vgg_filters.size(); ++blk) {
    for (int i = 0; i < b.vgg_convs[blk]; ++i) {
      const std::string name = fmt::format("block{}_conv{}", blk + 1, i + 1);
      net.emplace<nn::Conv>(name, 2, in, b.vgg_filters[blk], std::array{1, 3, 3},
                            std::array{1, 1, 1});
      net.emplace<nn::Relu>(name + "_relu");
      in = b.vgg_filters[blk];
    }
    net.emplace<nn::MaxPool>(fmt::format("block{}_pool", blk + 1), 2, std::array{1, 2, 2});
  }
  return in;
}

int build_mobile(nn::Sequential& net, const BackboneConfig& b) {
  net.emplace<nn::Conv>("conv1", 2, kFrameChannels, b.mobile_stem, std::array{1, 3, 3},
                        std::array{1, 2, 2});
  net.emplace<nn::BatchNorm>("conv1_bn", b.mobile_stem);
  net.emplace<nn::Relu>("conv1_relu");
  int in = b.mobile_stem;
  for (std::size_t i = 0; i < b.mobile_blocks.size(); ++i) {
    const auto [filters, stride] = b.mobile_blocks[i];
    const std::string dw = fmt::format("conv_dw_{}", i + 1);
    const std::string pw = fmt::format("conv_pw_{}", i + 1);
    net.emplace<nn::DepthwiseConv2D>(dw, in, 3, stride);
    net.emplace<nn::BatchNorm>(dw + "_bn", in);
    net.emplace<nn::Relu>(dw + "_relu");
    net.emplace<nn::Conv>(pw, 2, in, filters, std::array{1, 1, 1}, std::array{1, 1, 1});
    net.emplace<nn::BatchNorm>(pw + "_bn", filters);
    net.emplace<nn::Relu>(pw + "_relu");
    in = filters;
  }
  return in;
}

int build_video3d(nn::Sequential& net, const BackboneConfig& b, int chunk_len) {
  int in = kFrameChannels;
  int depth = chunk_len;
  for (std::size_t i = 0; i < b.video3d_filters.size(); ++i) {
    const std::string name = fmt::format("conv3d_{}", i + 1);
    // The first block halves the frame size with a strided conv.
    const std::array<int, 3> stride = i == 0 ? std::array{1, 2, 2} : std::array{1, 1, 1};
    net.emplace<nn::Conv>(name, 3, in, b.video3d_filters[i], std::array{3, 3, 3}, stride);
    net.emplace<nn::Relu>(name + "_relu");
    const int pool_depth = (i > 0 && depth >= 2) ? 2 : 1;
    net.emplace<nn::MaxPool>(fmt::format("pool3d_{}", i + 1), 3, std::array{pool_depth, 2, 2});
    depth /= pool_depth;
    in = b.video3d_filters[i];
  }
  return in;
}

}  // namespace

Classifier::Classifier(ClassifierConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto rate = static_cast<float>(config_.dropout_rate);
  const int n = config_.n_classes;
  switch (config_.arch) {
    case Arch::kVggHead: {
      const int c = build_vgg(backbone_, config_.backbone);
      head_.emplace<nn::GlobalAveragePool>("gap");
      head_.emplace<nn::Dense>("fc_hidden", c, config_.hidden_units);
      head_.emplace<nn::BatchNorm>("fc_hidden_bn", config_.hidden_units);
      head_.emplace<nn::Relu>("fc_hidden_relu");
      head_.emplace<nn::Dropout>("fc_dropout", rate);
      head_.emplace<nn::Dense>("predictions", config_.hidden_units, n);
      break;
    }
    case Arch::kVggCam: {
      const int c = build_vgg(backbone_, config_.backbone);
      head_.emplace<nn::GlobalAveragePool>("gap");
      head_.emplace<nn::Dropout>("gap_dropout", rate);
      head_.emplace<nn::Dense>("predictions", c, n);
      break;
    }
    case Arch::kMobile: {
      const int c = build_mobile(backbone_, config_.backbone);
      head_.emplace<nn::GlobalAveragePool>("gap");
      head_.emplace<nn::Dropout>("gap_dropout", rate);
      head_.emplace<nn::Dense>("predictions", c, n);
      break;
    }
    case Arch::kSegmentEnc: {
      int in = config_.feature_dim;
      for (std::size_t i = 0; i < config_.dense_units.size(); ++i) {
        const std::string name = fmt::format("fc{}", i + 1);
        head_.emplace<nn::Dense>(name, in, config_.dense_units[i]);
        head_.emplace<nn::Relu>(name + "_relu");
        head_.emplace<nn::Dropout>(name + "_dropout", rate);
        in = config_.dense_units[i];
      }
      head_.emplace<nn::Dense>("predictions", in, n);
      break;
    }
    case Arch::kVideo3d: {
      const int c = build_video3d(backbone_, config_.backbone, config_.chunk_len);
      head_.emplace<nn::GlobalAveragePool>("gap");
      head_.emplace<nn::Dropout>("gap_dropout", rate);
      head_.emplace<nn::Dense>("predictions", c, n);
      break;
    }
  }
  // Shape check of the whole stack.
  head_.output_shape(backbone_.output_shape(config_.input_shape()));
  nn::Rng rng(config_.init_seed);
  backbone_.initialize(rng);
  head_.initialize(rng);
  apply_trainable_tail(config_.trainable_tail_layers);
}

void Classifier::apply_trainable_tail(int tail_layers) {
  std::vector<nn::Layer*> all;
  for (std::size_t i = 0; i < backbone_.size(); ++i) all.push_back(&backbone_.layer(i));
  for (std::size_t i = 0; i < head_.size(); ++i) all.push_back(&head_.layer(i));
  if (tail_layers < 0) {
    for (auto* l : all) l->set_trainable(true);
    return;
  }
  int remaining = tail_layers;
  std::vector<bool> on(all.size(), false);
  for (std::size_t i = all.size(); i-- > 0;) {
    if (!all[i]->has_weights() || all[i]->kind() == "batch_norm") continue;
    if (remaining > 0) {
      on[i] = true;
      --remaining;
    }
  }
  bool prev = false;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!all[i]->has_weights()) continue;
    if (all[i]->kind() == "batch_norm") {
      all[i]->set_trainable(prev);
    } else {
      all[i]->set_trainable(on[i]);
      prev = on[i];
    }
  }
}

// ---------------------------------------------------------------- inference

nn::Tensor softmax(const nn::Tensor& logits) {
  if (logits.rank() != 2) throw ValidationError("softmax: need (B, K) logits");
  const int b = logits.dim(0), k = logits.dim(1);
  nn::Tensor out(logits.shape());
  for (int r = 0; r < b; ++r) {
    const float* z = logits.data() + static_cast<std::size_t>(r) * k;
    const double m = *std::max_element(z, z + k);
    double sum = 0.0;
    std::vector<double> e(k);
    for (int j = 0; j < k; ++j) sum += (e[j] = std::exp(double(z[j]) - m));
    for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(r) * k + j] = static_cast<float>(e[j] / sum);
  }
  return out;
}

void Classifier::check_batch(const nn::Tensor& batch) const {
  const auto item = input_shape();
  const auto& s = batch.shape();
  const bool ok = s.size() == item.size() + 1 && s[0] > 0 && std::equal(item.begin(), item.end(), s.begin() + 1);
  if (!ok) {
    throw ValidationError(fmt::format("{} expects a batch of {}, got {}", to_string(config_.arch),
                                      nn::shape_string(item), nn::shape_string(s)));
  }
}

nn::Tensor Classifier::normalize(const nn::Tensor& batch) const {
  switch (config_.normalization) {
    case InputNormalization::kNone: return batch;
    case InputNormalization::kTf: {
      nn::Tensor out(batch.shape());
      for (std::size_t i = 0; i < batch.size(); ++i) out[i] = 2.0f * batch[i] - 1.0f;
      return out;
    }
    case InputNormalization::kCaffe: {
      if (batch.dim(-1) != 3) throw ValidationError("caffe normalization needs 3 channels");
      static constexpr float kMean[3] = {103.939f, 116.779f, 123.68f};
      nn::Tensor out(batch.shape());
      for (std::size_t i = 0; i < batch.size(); i += 3) {
        for (int c = 0; c < 3; ++c) out[i + c] = batch[i + 2 - c] * 255.0f - kMean[c];
      }
      return out;
    }
  }
  return batch;
}

nn::Tensor Classifier::forward(const nn::Tensor& batch) const {
  check_batch(batch);
  const nn::RunOptions opts;
  const nn::Tensor features = backbone_.forward(normalize(batch), opts);
  return softmax(head_.forward(features, opts));
}

ForwardOutput Classifier::forward_with_features(const nn::Tensor& batch) const {
  if (!has_spatial_features()) {
    throw UnsupportedError(to_string(config_.arch) + " has no convolutional feature maps");
  }
  check_batch(batch);
  ForwardOutput out = head_forward(backbone_.forward(normalize(batch), nn::RunOptions{}));
  return out;
}

ForwardOutput Classifier::head_forward(const nn::Tensor& features) const {
  ForwardOutput out;
  out.logits = head_.forward(features, nn::RunOptions{});
  out.probabilities = softmax(out.logits);
  out.features = features;
  return out;
}

nn::Tensor Classifier::logit_gradient(const nn::Tensor& features, int class_id) const {
  if (features.rank() < 2 || features.dim(0) != 1) {
    throw ValidationError("logit_gradient: need a single item");
  }
  if (class_id < 0 || class_id >= n_classes()) throw BoundsError("class id out of range");
  nn::Tape tape;
  const nn::Tensor logits = head_.forward(features, nn::RunOptions{}, &tape, true);
  nn::Tensor g(logits.shape());
  g[static_cast<std::size_t>(class_id)] = 1.0f;
  nn::Gradients grads = head_.make_gradients();
  return head_.backward(g, tape, grads, true);
}

nn::Tensor Classifier::stochastic_forward(const nn::Tensor& batch,
                                          const StochasticOptions& options) const {
  if (options.n_passes < 2) {
    throw ConfigError("stochastic_forward needs at least 2 passes for a standard deviation");
  }
  check_batch(batch);
  if (options.mode == StochasticMode::kTta) {
    if (!has_spatial_features()) {
      throw UnsupportedError("test-time augmentation needs image input; " +
                             to_string(config_.arch) + " takes feature vectors");
    }
    options.policy.validate();
  }
  if (options.mode == StochasticMode::kDropout && options.dropout_rate >= 1.0) {
    throw ConfigError("dropout rate must be < 1");
  }
  const int b = batch.dim(0);
  std::vector<nn::Tensor> passes;
  passes.reserve(options.n_passes);
  for (int p = 0; p < options.n_passes; ++p) {
    nn::Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(p)));
    nn::RunOptions opts;
    nn::Tensor input = batch;
    if (options.mode == StochasticMode::kDropout) {
      opts.dropout = true;
      opts.dropout_rate_override = static_cast<float>(options.dropout_rate);
      opts.rng = &rng;
    } else {
      std::vector<nn::Tensor> items;
      items.reserve(b);
      for (int i = 0; i < b; ++i) {
        const auto params = data::draw_augment_params(options.policy, rng);
        auto shape = batch.shape();
        shape.erase(shape.begin());
        items.push_back(data::apply_augmentation_clip(batch.slice_rows(i, i + 1).reshaped(shape), params));
      }
      input = nn::stack(items);
    }
    const nn::Tensor features = backbone_.forward(normalize(input), opts);
    passes.push_back(softmax(head_.forward(features, opts)));
  }
  return nn::stack(passes);
}

// ---------------------------------------------------------------- training

namespace {

StepResult score(const nn::Tensor& logits, std::span<const int> labels, nn::Tensor* grad) {
  const int b = logits.dim(0), k = logits.dim(1);
  const nn::Tensor p = softmax(logits);
  StepResult r;
  if (grad) *grad = nn::Tensor(logits.shape());
  for (int i = 0; i < b; ++i) {
    const float* z = logits.data() + static_cast<std::size_t>(i) * k;
    const double m = *std::max_element(z, z + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(double(z[j]) - m);
    r.loss += -(double(z[labels[i]]) - m - std::log(sum));
    const int pred = static_cast<int>(std::max_element(z, z + k) - z);
    r.accuracy += pred == labels[i];
    if (grad) {
      for (int j = 0; j < k; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * k + j;
        (*grad)[idx] = (p[idx] - (j == labels[i] ? 1.0f : 0.0f)) / static_cast<float>(b);
      }
    }
  }
  r.loss /= b;
  r.accuracy /= b;
  return r;
}

void check_labels(std::span<const int> labels, int batch, int n_classes) {
  if (static_cast<int>(labels.size()) != batch) {
    throw ValidationError(fmt::format("{} labels for a batch of {}", labels.size(), batch));
  }
  for (int l : labels) {
    if (l < 0 || l >= n_classes) throw ValidationError(fmt::format("label {} out of range", l));
  }
}

}  // namespace

StepResult Classifier::train_step(const nn::Tensor& batch, std::span<const int> labels,
                                  nn::Adam& optimizer, nn::Rng& rng) {
  check_batch(batch);
  check_labels(labels, batch.dim(0), n_classes());
  nn::RunOptions opts;
  opts.training = true;
  opts.rng = &rng;
  const bool backbone_trains = backbone_.first_trainable() < backbone_.size();
  nn::Tape btape, htape;
  const nn::Tensor features =
      backbone_.forward(normalize(batch), opts, backbone_trains ? &btape : nullptr);
  const nn::Tensor logits = head_.forward(features, opts, &htape, backbone_trains);
  nn::Tensor grad;
  const StepResult r = score(logits, labels, &grad);

  nn::Gradients hgrads = head_.make_gradients();
  nn::Gradients bgrads = backbone_.make_gradients();
  const nn::Tensor dfeat = head_.backward(grad, htape, hgrads, backbone_trains);
  if (backbone_trains) backbone_.backward(dfeat, btape, bgrads, false);

  std::vector<nn::Layer*> layers;
  nn::Gradients grads;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    layers.push_back(&backbone_.layer(i));
    grads.push_back(std::move(bgrads[i]));
  }
  for (std::size_t i = 0; i < head_.size(); ++i) {
    layers.push_back(&head_.layer(i));
    grads.push_back(std::move(hgrads[i]));
  }
  optimizer.step(layers, grads);
  if (backbone_trains) backbone_.commit(btape);
  head_.commit(htape);
  return r;
}

StepResult Classifier::evaluate_batch(const nn::Tensor& batch, std::span<const int> labels) const {
  check_batch(batch);
  check_labels(labels, batch.dim(0), n_classes());
  const nn::RunOptions opts;
  const nn::Tensor logits = head_.forward(backbone_.forward(normalize(batch), opts), opts);
  return score(logits, labels, nullptr);
}

// ---------------------------------------------------------------- introspection

bool Classifier::has_gap_head() const {
  if (head_.size() < 2 || head_.layer(0).kind() != "global_average_pool") return false;
  for (std::size_t i = 1; i + 1 < head_.size(); ++i) {
    if (head_.layer(i).kind() != "dropout") return false;
  }
  return head_.layer(head_.size() - 1).kind() == "dense";
}

const nn::Dense& Classifier::output_layer() const {
  return dynamic_cast<const nn::Dense&>(head_.layer(head_.size() - 1));
}

bool Classifier::has_spatial_features() const { return config_.arch != Arch::kSegmentEnc; }

std::size_t Classifier::parameter_count() const {
  return backbone_.parameter_count() + head_.parameter_count();
}

std::size_t Classifier::trainable_parameter_count() const {
  return backbone_.trainable_parameter_count() + head_.trainable_parameter_count();
}

std::string Classifier::summary() const {
  std::ostringstream os;
  auto shape = input_shape();
  os << fmt::format("{:<22} {:<20} {:<18} {:>12}  {}\n", "layer", "kind", "output", "params", "train");
  for (const nn::Sequential* net : {&backbone_, &head_}) {
    for (std::size_t i = 0; i < net->size(); ++i) {
      const nn::Layer& l = net->layer(i);
      shape = l.output_shape(shape);
      os << fmt::format("{:<22} {:<20} {:<18} {:>12}  {}\n", l.name(), l.kind(),
                        nn::shape_string(shape), l.parameter_count(),
                        l.has_weights() ? (l.trainable() ? "yes" : "no") : "-");
    }
  }
  os << fmt::format("total {}  trainable {}  frozen {}\n", parameter_count(),
                    trainable_parameter_count(), parameter_count() - trainable_parameter_count());
  return os.str();
}

nn::NamedTensors Classifier::state() const {
  nn::NamedTensors out;
  for (const nn::Sequential* net : {&backbone_, &head_}) {
    for (std::size_t i = 0; i < net->size(); ++i) {
      for (const auto& p : net->layer(i).params()) out.emplace(p.name, p.value);
    }
  }
  return out;
}

namespace {
void load_into(nn::Sequential& net, const nn::NamedTensors& tensors) {
  for (std::size_t i = 0; i < net.size(); ++i) {
    for (auto& p : net.layer(i).params()) {
      auto it = tensors.find(p.name);
      if (it == tensors.end()) throw SchemaError("weights are missing tensor '" + p.name + "'");
      if (!it->second.same_shape(p.value)) {
        throw ValidationError(fmt::format("tensor '{}' has shape {}, model expects {}", p.name,
                                          nn::shape_string(it->second.shape()),
                                          nn::shape_string(p.value.shape())));
      }
      p.value = it->second;
    }
  }
}
}  // namespace

void Classifier::load_state(const nn::NamedTensors& tensors) {
  const auto own = state();
  for (const auto& [name, t] : tensors) {
    if (!own.count(name)) throw SchemaError("unexpected tensor '" + name + "' in weights");
  }
  load_into(backbone_, tensors);
  load_into(head_, tensors);
}

void Classifier::load_backbone(const nn::NamedTensors& tensors) { load_into(backbone_, tensors); }

// ---------------------------------------------------------------- factories

namespace {
void load_pretrained(Classifier& model, const ClassifierConfig& config, bool required) {
  const std::filesystem::path path = config.pretrained_path;
  if (!std::filesystem::exists(path)) {
    if (required) {
      throw IoError(fmt::format(
          "pretrained backbone weights not found at '{}' (convert them with tools/convert_keras_vgg16.py)",
          path.string()));
    }
    spdlog::warn("pretrained weights '{}' unavailable; using random initialization", path.string());
    return;
  }
  if (!config.pretrained_sha256.empty()) {
    const std::string actual = sha256_file(path);
    if (actual != config.pretrained_sha256) {
      throw ValidationError(fmt::format("checksum mismatch for '{}': expected {}, got {}",
                                        path.string(), config.pretrained_sha256, actual));
    }
  }
  model.load_backbone(nn::load_tensors(path));
}
}  // namespace

Classifier build_frame_classifier(const ClassifierConfig& config) {
  if (config.arch == Arch::kVideo3d) {
    throw ConfigError("video3d is a video classifier; use build_video_classifier");
  }
  Classifier model(config);
  if (config.pretrained_backbone) load_pretrained(model, config, true);
  return model;
}

Classifier build_video_classifier(const ClassifierConfig& config) {
  if (config.arch != Arch::kVideo3d) {
    throw ConfigError("build_video_classifier needs arch video3d, got " + to_string(config.arch));
  }
  Classifier model(config);
  if (config.pretrained_backbone) load_pretrained(model, config, false);
  return model;
}

Classifier build_classifier(const ClassifierConfig& config) {
  return config.arch == Arch::kVideo3d ? build_video_classifier(config)
                                       : build_frame_classifier(config);
}

}  // namespace pocus::models
