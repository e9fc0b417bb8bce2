#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "pocus/data/augment.hpp"
#include "pocus/nn/network.hpp"

namespace pocus::models {

enum class Arch { kVggHead, kVggCam, kMobile, kSegmentEnc, kVideo3d };
std::string to_string(Arch arch);
Arch parse_arch(std::string_view text);  // ConfigError on unknown names

// Applied to [0,1] RGB pixels at the model boundary.
//   caffe: x*255, RGB->BGR, minus the ImageNet BGR means (VGG16 weights)
//   tf:    2x-1 (MobileNet-family weights)
enum class InputNormalization { kNone, kCaffe, kTf };
std::string to_string(InputNormalization n);
InputNormalization parse_normalization(std::string_view text);

struct BackboneConfig {
  // VGG: filters and conv count per block; the reference network is
  // {64,128,256,512,512} x {2,2,3,3,3}.
  std::vector<int> vgg_filters{64, 128, 256, 512, 512};
  std::vector<int> vgg_convs{2, 2, 3, 3, 3};
  // Depthwise-separable stack: stem width, then (filters, stride) per block.
  int mobile_stem = 32;
  std::vector<std::pair<int, int>> mobile_blocks{{64, 1},  {128, 2}, {128, 1}, {256, 2},
                                                 {256, 1}, {512, 2}, {512, 1}, {1024, 2}};
  // 3-D conv blocks, one conv + pool each.
  std::vector<int> video3d_filters{32, 64, 128, 256};
};

struct ClassifierConfig {
  Arch arch = Arch::kVggCam;
  int n_classes = 4;
  double dropout_rate = 0.5;
  // Number of weight layers (batch norm excluded; it follows the layer
  // before it) counted from the output that receive updates. Negative means
  // every layer trains.
  int trainable_tail_layers = 3;
  bool pretrained_backbone = false;
  std::string pretrained_path;
  std::string pretrained_sha256;  // optional; checked when set
  InputNormalization normalization = InputNormalization::kCaffe;
  int hidden_units = 64;                 // vgg_head
  std::vector<int> dense_units{512, 256};  // segment_enc
  int feature_dim = 560;                 // segment_enc input
  int chunk_len = 5;                     // video3d
  BackboneConfig backbone;
  std::uint64_t init_seed = 0;

  // Per-item input shape: (224,224,3), (chunk_len,224,224,3) or (feature_dim).
  std::vector<int> input_shape() const;
  void validate() const;
};

// Reasonable defaults per architecture (normalization, tail).
ClassifierConfig default_config(Arch arch);

nlohmann::json to_json(const ClassifierConfig& config);
ClassifierConfig config_from_json(const nlohmann::json& j);

struct ForwardOutput {
  nn::Tensor probabilities;  // (B, n_classes)
  nn::Tensor logits;         // (B, n_classes)
  nn::Tensor features;       // backbone output, e.g. (B, 7, 7, 512)
};

enum class StochasticMode { kDropout, kTta };
std::string to_string(StochasticMode mode);
StochasticMode parse_stochastic_mode(std::string_view text);

struct StochasticOptions {
  int n_passes = 10;
  StochasticMode mode = StochasticMode::kDropout;
  data::AugmentationPolicy policy;  // used by kTta
  std::uint64_t seed = 0;
  // Dropout rate used by kDropout passes; negative keeps the configured rate.
  double dropout_rate = -1.0;
};

struct StepResult {
  double loss = 0.0;      // mean cross-entropy
  double accuracy = 0.0;  // share of argmax hits
};

// Backbone (feature extractor) followed by a head ending in a linear layer;
// softmax is applied on top. Inference is const and safe to share between
// threads; training mutates the instance.
class Classifier {
 public:
  explicit Classifier(ClassifierConfig config);
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  const ClassifierConfig& config() const { return config_; }
  std::vector<int> input_shape() const { return config_.input_shape(); }
  int n_classes() const { return config_.n_classes; }

  nn::Tensor forward(const nn::Tensor& batch) const;
  // UnsupportedError for architectures without spatial feature maps.
  ForwardOutput forward_with_features(const nn::Tensor& batch) const;
  // Logits and probabilities from precomputed backbone features.
  ForwardOutput head_forward(const nn::Tensor& features) const;
  // d logit[class_id] / d features for a single item (1, ...).
  nn::Tensor logit_gradient(const nn::Tensor& features, int class_id) const;

  // (n_passes, B, n_classes). Randomness comes only from options.seed.
  nn::Tensor stochastic_forward(const nn::Tensor& batch, const StochasticOptions& options) const;

  // One optimizer update on a batch of class indices. Trainable batch-norm
  // layers use batch statistics and update their running averages.
  StepResult train_step(const nn::Tensor& batch, std::span<const int> labels, nn::Adam& optimizer,
                        nn::Rng& rng);
  // Loss and accuracy in inference mode.
  StepResult evaluate_batch(const nn::Tensor& batch, std::span<const int> labels) const;

  // GAP directly followed by (dropout and) the output layer.
  bool has_gap_head() const;
  // Output layer; for GAP heads its kernel is (channels, n_classes).
  const nn::Dense& output_layer() const;
  bool has_spatial_features() const;

  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;
  // One line per layer: name, kind, output shape, parameter count, trainable.
  std::string summary() const;

  nn::NamedTensors state() const;
  // Every parameter must be present with a matching shape.
  void load_state(const nn::NamedTensors& tensors);
  // Loads backbone tensors only (names like "block1_conv1/kernel").
  void load_backbone(const nn::NamedTensors& tensors);

  nn::Sequential& backbone() { return backbone_; }
  const nn::Sequential& backbone() const { return backbone_; }
  nn::Sequential& head() { return head_; }
  const nn::Sequential& head() const { return head_; }

  // Freezes everything outside the configured tail.
  void apply_trainable_tail(int tail_layers);

 private:
  nn::Tensor normalize(const nn::Tensor& batch) const;
  void check_batch(const nn::Tensor& batch) const;

  ClassifierConfig config_;
  nn::Sequential backbone_;
  nn::Sequential head_;
};

// Frame architectures (everything except video3d). Loads and verifies the
// pretrained backbone when configured; IoError naming the path if missing.
Classifier build_frame_classifier(const ClassifierConfig& config);
Classifier build_video_classifier(const ClassifierConfig& config);
// Dispatches on config.arch.
Classifier build_classifier(const ClassifierConfig& config);

// Row-wise softmax in double precision.
nn::Tensor softmax(const nn::Tensor& logits);

}  // namespace pocus::models
