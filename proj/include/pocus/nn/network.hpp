#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pocus/nn/layers.hpp"

namespace pocus::nn {

// Gradient slots, indexed [layer][param]. Empty tensors mean "no gradient".
using Gradients = std::vector<std::vector<Tensor>>;
using Tape = std::vector<LayerCache>;

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  Layer& add(LayerPtr layer);
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    return static_cast<L&>(add(std::make_unique<L>(std::forward<Args>(args)...)));
  }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  Layer* find(const std::string& name);

  std::vector<int> output_shape(std::vector<int> item_shape) const;

  // Runs every layer. When tape is given it is resized to size() and caches
  // are kept for layers at or after the first trainable one, plus all layers
  // when keep_all is set (needed for input gradients).
  Tensor forward(const Tensor& x, const RunOptions& opts, Tape* tape = nullptr,
                 bool keep_all = false) const;

  // Backpropagates grad_out through the recorded tape. Stops at the first
  // trainable layer unless need_input_grad is set, in which case the
  // gradient with respect to the network input is returned.
  Tensor backward(const Tensor& grad_out, const Tape& tape, Gradients& grads,
                  bool need_input_grad) const;

  void commit(const Tape& tape);
  void initialize(Rng& rng);

  Gradients make_gradients() const;
  // Index of the first layer holding trainable weights, or size().
  std::size_t first_trainable() const;

  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;

 private:
  std::vector<LayerPtr> layers_;
};

// Keras-style Adam (epsilon outside the square root, bias-corrected rate).
class Adam {
 public:
  explicit Adam(float learning_rate = 1e-4f, float beta1 = 0.9f, float beta2 = 0.999f,
                float epsilon = 1e-7f);

  // Updates every trainable parameter for which a gradient exists.
  void step(std::vector<Layer*> layers, const Gradients& grads, float grad_scale = 1.0f);

  long iterations() const { return t_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  float lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::map<std::string, Slot> slots_;
};

// Named float tensors in a little-endian binary file.
//   magic "PCUSW001", u32 count, then per tensor:
//   u32 name length, name bytes, u32 rank, i32 dims[rank], f32 data[...]
using NamedTensors = std::map<std::string, Tensor>;
void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

}  // namespace pocus::nn
