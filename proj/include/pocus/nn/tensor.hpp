#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pocus::nn {

// Dense row-major float tensor. Images are stored channels-last (N,H,W,C),
// video chunks as (N,T,H,W,C).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> data);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int axis) const;
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Element count of one item along the leading axis.
  std::size_t row_size() const;

  Tensor reshaped(std::vector<int> shape) const;
  // Copy of rows [begin, end) along axis 0.
  Tensor slice_rows(int begin, int end) const;
  // Copy of the given rows along axis 0, in order.
  Tensor gather_rows(std::span<const int> rows) const;

  void fill(float v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static std::size_t count(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

std::string shape_string(const std::vector<int>& shape);

// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

}  // namespace pocus::nn
