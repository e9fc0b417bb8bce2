#include "pocus/nn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "pocus/error.hpp"

namespace pocus::nn {

std::size_t Tensor::count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ValidationError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != count(shape_)) {
    throw ValidationError("tensor data size " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(shape_));
  }
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw BoundsError("tensor axis out of range");
  return shape_[axis];
}

std::size_t Tensor::row_size() const {
  return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (count(shape) != data_.size()) {
    throw ValidationError("cannot reshape " + shape_string(shape_) + " to " +
                          shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(int begin, int end) const {
  if (begin < 0 || end > dim(0) || begin > end) throw BoundsError("row slice out of range");
  std::vector<int> shape = shape_;
  shape[0] = end - begin;
  const std::size_t rs = row_size();
  std::vector<float> out(data_.begin() + begin * rs, data_.begin() + end * rs);
  return Tensor(std::move(shape), std::move(out));
}

Tensor Tensor::gather_rows(std::span<const int> rows) const {
  std::vector<int> shape = shape_;
  shape[0] = static_cast<int>(rows.size());
  const std::size_t rs = row_size();
  std::vector<float> out(rows.size() * rs);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= shape_[0]) throw BoundsError("row index out of range");
    std::copy_n(data_.begin() + rows[i] * rs, rs, out.begin() + i * rs);
  }
  return Tensor(std::move(shape), std::move(out));
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ValidationError("cannot stack an empty list");
  std::vector<int> shape = items.front().shape();
  std::vector<float> data;
  data.reserve(items.front().size() * items.size());
  for (const auto& t : items) {
    if (t.shape() != items.front().shape()) {
      throw ValidationError("stack: shape mismatch " + shape_string(t.shape()) + " vs " +
                            shape_string(shape));
    }
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  shape.insert(shape.begin(), static_cast<int>(items.size()));
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace pocus::nn
