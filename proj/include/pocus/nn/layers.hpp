#pragma once

#include <array>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pocus/nn/tensor.hpp"

namespace pocus::nn {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;  // "<layer>/<slot>", e.g. "block5_conv3/kernel"
  Tensor value;
  bool trainable = true;
  // Running statistics (batch norm). Counted as parameters, never receive
  // gradients.
  bool buffer = false;
};

struct RunOptions {
  // Batch statistics in trainable batch-norm layers; dropout active.
  bool training = false;
  // Dropout active without touching batch-norm behaviour (MC dropout).
  bool dropout = false;
  // Replaces every dropout layer's configured rate when >= 0.
  float dropout_rate_override = -1.0f;
  Rng* rng = nullptr;
};

// Per-call activations a layer needs for its backward pass. Layers are
// immutable during forward, so one model can serve concurrent callers as
// long as each call owns its caches.
struct LayerCache {
  Tensor input;
  std::vector<int> input_shape;
  Tensor aux;
  std::vector<int> indices;
  std::vector<float> stats;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual std::string kind() const = 0;

  // Per-item output shape (batch axis excluded) for a per-item input shape.
  virtual std::vector<int> output_shape(const std::vector<int>& in) const = 0;

  virtual Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const = 0;

  // Accumulates into param_grads (one slot per entry of params(); buffers
  // get an empty tensor) and returns dL/dx when need_input_grad is set.
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                          std::span<Tensor> param_grads, bool need_input_grad) const = 0;

  // Applies side effects of a training forward pass (running statistics).
  virtual void commit(const LayerCache& /*cache*/) {}

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  bool has_weights() const;
  bool trainable() const;
  void set_trainable(bool trainable);
  std::size_t parameter_count() const;

  virtual void initialize(Rng& rng);

 protected:
  Parameter& add_param(std::string slot, std::vector<int> shape, bool buffer = false);

 private:
  std::string name_;
  std::vector<Parameter> params_;
};

using LayerPtr = std::unique_ptr<Layer>;

enum class Padding { kSame, kValid };

// Convolution over up to three spatial axes. Two-dimensional layers take
// (N,H,W,C) input and keep a (KH,KW,Cin,Cout) kernel; three-dimensional
// layers take (N,T,H,W,C) and keep (KT,KH,KW,Cin,Cout).
class Conv : public Layer {
 public:
  Conv(std::string name, int spatial_dims, int in_channels, int out_channels,
       std::array<int, 3> kernel, std::array<int, 3> stride, Padding padding = Padding::kSame);
  std::string kind() const override { return spatial_dims_ == 2 ? "conv2d" : "conv3d"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;
  void initialize(Rng& rng) override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  struct Geometry;
  Geometry geometry(const std::vector<int>& item_shape) const;

  int spatial_dims_;
  int in_;
  int out_;
  std::array<int, 3> kernel_;  // (depth, height, width); depth 1 for 2-D
  std::array<int, 3> stride_;
  Padding padding_;
};

// 3x3 (or k x k) per-channel convolution, depth multiplier 1.
class DepthwiseConv2D : public Layer {
 public:
  DepthwiseConv2D(std::string name, int channels, int kernel, int stride);
  std::string kind() const override { return "depthwise_conv2d"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;
  void initialize(Rng& rng) override;

 private:
  int channels_;
  int kernel_;
  int stride_;
};

class MaxPool : public Layer {
 public:
  // pool = (depth, height, width); stride equals pool, floor semantics.
  MaxPool(std::string name, int spatial_dims, std::array<int, 3> pool);
  std::string kind() const override { return "max_pool"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;

 private:
  int spatial_dims_;
  std::array<int, 3> pool_;
};

class Relu : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "relu"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;
};

// Mean over every axis between batch and channels.
class GlobalAveragePool : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "global_average_pool"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;
};

class Dense : public Layer {
 public:
  Dense(std::string name, int in_features, int out_features);
  std::string kind() const override { return "dense"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;
  void initialize(Rng& rng) override;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  // (in, out) row-major kernel.
  const Tensor& kernel() const { return params()[0].value; }
  const Tensor& bias() const { return params()[1].value; }

 private:
  int in_;
  int out_;
};

// Normalizes over the last axis. Uses batch statistics only while training
// and trainable; frozen layers always use their running statistics.
class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, int channels, float momentum = 0.99f, float epsilon = 1e-3f);
  std::string kind() const override { return "batch_norm"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;
  void commit(const LayerCache& cache) override;
  void initialize(Rng& rng) override;

 private:
  int channels_;
  float momentum_;
  float epsilon_;
};

class Dropout : public Layer {
 public:
  Dropout(std::string name, float rate);
  std::string kind() const override { return "dropout"; }
  std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
  Tensor forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor> param_grads,
                  bool need_input_grad) const override;
  float rate() const { return rate_; }

 private:
  float rate_;
};

}  // namespace pocus::nn
