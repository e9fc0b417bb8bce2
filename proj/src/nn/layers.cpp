#include "pocus/nn/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "pocus/error.hpp"

namespace pocus::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> dist(-limit, limit);
  for (float& v : t.values()) v = dist(rng);
}

void require_rank(const Tensor& x, int rank, const std::string& who) {
  if (x.rank() != rank) {
    throw ValidationError(who + ": expected rank " + std::to_string(rank) + " input, got " +
                          shape_string(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Layer

Parameter& Layer::add_param(std::string slot, std::vector<int> shape, bool buffer) {
  Parameter p;
  p.name = name_ + "/" + slot;
  p.value = Tensor(std::move(shape));
  p.buffer = buffer;
  p.trainable = !buffer;
  params_.push_back(std::move(p));
  return params_.back();
}

bool Layer::has_weights() const {
  return std::any_of(params_.begin(), params_.end(), [](const Parameter& p) { return !p.buffer; });
}

bool Layer::trainable() const {
  return std::any_of(params_.begin(), params_.end(),
                     [](const Parameter& p) { return !p.buffer && p.trainable; });
}

void Layer::set_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = !p.buffer && trainable;
}

std::size_t Layer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void Layer::initialize(Rng&) {}

// ---------------------------------------------------------------- Conv

struct Conv::Geometry {
  std::array<int, 3> in{};   // D, H, W
  std::array<int, 3> out{};  // D, H, W
  std::array<int, 3> pad{};  // before
  int channels = 0;
  int patch = 0;      // KD*KH*KW*Cin
  int positions = 0;  // OD*OH*OW
};

Conv::Conv(std::string name, int spatial_dims, int in_channels, int out_channels,
           std::array<int, 3> kernel, std::array<int, 3> stride, Padding padding)
    : Layer(std::move(name)),
      spatial_dims_(spatial_dims),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {
  if (spatial_dims != 2 && spatial_dims != 3) throw ConfigError("conv: spatial_dims must be 2 or 3");
  if (spatial_dims == 2 && (kernel_[0] != 1 || stride_[0] != 1)) {
    throw ConfigError("conv2d: depth kernel and stride must be 1");
  }
  std::vector<int> kshape;
  if (spatial_dims == 3) kshape.push_back(kernel_[0]);
  kshape.insert(kshape.end(), {kernel_[1], kernel_[2], in_, out_});
  add_param("kernel", kshape);
  add_param("bias", {out_});
}

Conv::Geometry Conv::geometry(const std::vector<int>& item) const {
  if (static_cast<int>(item.size()) != spatial_dims_ + 1) {
    throw ValidationError(name() + ": expected " + std::to_string(spatial_dims_ + 1) +
                          "-d items, got " + shape_string(item));
  }
  Geometry g;
  if (spatial_dims_ == 2) {
    g.in = {1, item[0], item[1]};
  } else {
    g.in = {item[0], item[1], item[2]};
  }
  g.channels = item.back();
  if (g.channels != in_) {
    throw ValidationError(name() + ": expected " + std::to_string(in_) + " channels, got " +
                          std::to_string(g.channels));
  }
  for (int a = 0; a < 3; ++a) {
    if (padding_ == Padding::kSame) {
      g.out[a] = (g.in[a] + stride_[a] - 1) / stride_[a];
      const int total = std::max((g.out[a] - 1) * stride_[a] + kernel_[a] - g.in[a], 0);
      g.pad[a] = total / 2;
    } else {
      g.out[a] = (g.in[a] - kernel_[a]) / stride_[a] + 1;
      g.pad[a] = 0;
    }
    if (g.out[a] <= 0) throw ValidationError(name() + ": input too small for kernel");
  }
  g.patch = kernel_[0] * kernel_[1] * kernel_[2] * in_;
  g.positions = g.out[0] * g.out[1] * g.out[2];
  return g;
}

std::vector<int> Conv::output_shape(const std::vector<int>& in) const {
  const Geometry g = geometry(in);
  if (spatial_dims_ == 2) return {g.out[1], g.out[2], out_};
  return {g.out[0], g.out[1], g.out[2], out_};
}

namespace {

// Gathers every receptive field of one item into a (positions x patch) matrix.
template <typename G>
void im2col(const float* x, const G& g, const std::array<int, 3>& k, const std::array<int, 3>& s,
            float* col) {
  const int C = g.channels;
  std::fill(col, col + static_cast<std::size_t>(g.positions) * g.patch, 0.0f);
  int p = 0;
  for (int od = 0; od < g.out[0]; ++od)
    for (int oh = 0; oh < g.out[1]; ++oh)
      for (int ow = 0; ow < g.out[2]; ++ow, ++p) {
        float* row = col + static_cast<std::size_t>(p) * g.patch;
        for (int kd = 0; kd < k[0]; ++kd) {
          const int id = od * s[0] + kd - g.pad[0];
          if (id < 0 || id >= g.in[0]) continue;
          for (int kh = 0; kh < k[1]; ++kh) {
            const int ih = oh * s[1] + kh - g.pad[1];
            if (ih < 0 || ih >= g.in[1]) continue;
            for (int kw = 0; kw < k[2]; ++kw) {
              const int iw = ow * s[2] + kw - g.pad[2];
              if (iw < 0 || iw >= g.in[2]) continue;
              const float* src = x + ((static_cast<std::size_t>(id) * g.in[1] + ih) * g.in[2] + iw) * C;
              std::memcpy(row + ((kd * k[1] + kh) * k[2] + kw) * C, src, sizeof(float) * C);
            }
          }
        }
      }
}

template <typename G>
void col2im(const float* col, const G& g, const std::array<int, 3>& k, const std::array<int, 3>& s,
            float* dx) {
  const int C = g.channels;
  int p = 0;
  for (int od = 0; od < g.out[0]; ++od)
    for (int oh = 0; oh < g.out[1]; ++oh)
      for (int ow = 0; ow < g.out[2]; ++ow, ++p) {
        const float* row = col + static_cast<std::size_t>(p) * g.patch;
        for (int kd = 0; kd < k[0]; ++kd) {
          const int id = od * s[0] + kd - g.pad[0];
          if (id < 0 || id >= g.in[0]) continue;
          for (int kh = 0; kh < k[1]; ++kh) {
            const int ih = oh * s[1] + kh - g.pad[1];
            if (ih < 0 || ih >= g.in[1]) continue;
            for (int kw = 0; kw < k[2]; ++kw) {
              const int iw = ow * s[2] + kw - g.pad[2];
              if (iw < 0 || iw >= g.in[2]) continue;
              float* dst = dx + ((static_cast<std::size_t>(id) * g.in[1] + ih) * g.in[2] + iw) * C;
              const float* src = row + ((kd * k[1] + kh) * k[2] + kw) * C;
              for (int c = 0; c < C; ++c) dst[c] += src[c];
            }
          }
        }
      }
}

}  // namespace

Tensor Conv::forward(const Tensor& x, const RunOptions&, LayerCache* cache) const {
  require_rank(x, spatial_dims_ + 2, name());
  const std::vector<int> item(x.shape().begin() + 1, x.shape().end());
  const Geometry g = geometry(item);
  const int n = x.dim(0);
  std::vector<int> out_shape = output_shape(item);
  out_shape.insert(out_shape.begin(), n);
  Tensor y(out_shape);

  const ConstMapMat w(params()[0].value.data(), g.patch, out_);
  const Eigen::Map<const Eigen::RowVectorXf> b(params()[1].value.data(), out_);
  std::vector<float> col(static_cast<std::size_t>(g.positions) * g.patch);
  const std::size_t in_stride = x.row_size();
  const std::size_t out_stride = static_cast<std::size_t>(g.positions) * out_;
  for (int i = 0; i < n; ++i) {
    im2col(x.data() + i * in_stride, g, kernel_, stride_, col.data());
    const ConstMapMat cm(col.data(), g.positions, g.patch);
    MapMat ym(y.data() + i * out_stride, g.positions, out_);
    ym.noalias() = cm * w;
    ym.rowwise() += b;
  }
  if (cache) cache->input = x;
  return y;
}

Tensor Conv::backward(const Tensor& grad_out, const LayerCache& cache,
                      std::span<Tensor> param_grads, bool need_input_grad) const {
  const Tensor& x = cache.input;
  const std::vector<int> item(x.shape().begin() + 1, x.shape().end());
  const Geometry g = geometry(item);
  const int n = x.dim(0);
  const bool weight_grads = trainable();

  const ConstMapMat w(params()[0].value.data(), g.patch, out_);
  std::vector<float> col(static_cast<std::size_t>(g.positions) * g.patch);
  std::vector<float> dcol;
  Tensor dx;
  if (need_input_grad) {
    dx = Tensor(x.shape());
    dcol.resize(col.size());
  }
  if (weight_grads) {
    if (param_grads[0].empty()) param_grads[0] = Tensor(params()[0].value.shape());
    if (param_grads[1].empty()) param_grads[1] = Tensor(params()[1].value.shape());
  }
  const std::size_t in_stride = x.row_size();
  const std::size_t out_stride = static_cast<std::size_t>(g.positions) * out_;
  for (int i = 0; i < n; ++i) {
    const ConstMapMat dy(grad_out.data() + i * out_stride, g.positions, out_);
    if (weight_grads) {
      im2col(x.data() + i * in_stride, g, kernel_, stride_, col.data());
      const ConstMapMat cm(col.data(), g.positions, g.patch);
      MapMat dw(param_grads[0].data(), g.patch, out_);
      dw.noalias() += cm.transpose() * dy;
      Eigen::Map<Eigen::RowVectorXf> db(param_grads[1].data(), out_);
      db += dy.colwise().sum();
    }
    if (need_input_grad) {
      MapMat dc(dcol.data(), g.positions, g.patch);
      dc.noalias() = dy * w.transpose();
      col2im(dcol.data(), g, kernel_, stride_, dx.data() + i * in_stride);
    }
  }
  return dx;
}

void Conv::initialize(Rng& rng) {
  const int receptive = kernel_[0] * kernel_[1] * kernel_[2];
  glorot_uniform(params()[0].value, receptive * in_, receptive * out_, rng);
  params()[1].value.fill(0.0f);
}

// ---------------------------------------------------------------- Depthwise

DepthwiseConv2D::DepthwiseConv2D(std::string name, int channels, int kernel, int stride)
    : Layer(std::move(name)), channels_(channels), kernel_(kernel), stride_(stride) {
  add_param("depthwise_kernel", {kernel, kernel, channels, 1});
  add_param("bias", {channels});
}

std::vector<int> DepthwiseConv2D::output_shape(const std::vector<int>& in) const {
  if (in.size() != 3 || in[2] != channels_) {
    throw ValidationError(name() + ": bad input shape " + shape_string(in));
  }
  return {(in[0] + stride_ - 1) / stride_, (in[1] + stride_ - 1) / stride_, channels_};
}

namespace {
struct DwGeom {
  int h, w, oh, ow, ph, pw;
};
DwGeom dw_geometry(int h, int w, int k, int s) {
  DwGeom g{h, w, (h + s - 1) / s, (w + s - 1) / s, 0, 0};
  g.ph = std::max((g.oh - 1) * s + k - h, 0) / 2;
  g.pw = std::max((g.ow - 1) * s + k - w, 0) / 2;
  return g;
}
}  // namespace

Tensor DepthwiseConv2D::forward(const Tensor& x, const RunOptions&, LayerCache* cache) const {
  require_rank(x, 4, name());
  const std::vector<int> item(x.shape().begin() + 1, x.shape().end());
  const auto os = output_shape(item);
  const DwGeom g = dw_geometry(x.dim(1), x.dim(2), kernel_, stride_);
  const int n = x.dim(0), C = channels_;
  Tensor y({n, os[0], os[1], C});
  const float* k = params()[0].value.data();
  const float* b = params()[1].value.data();
  for (int i = 0; i < n; ++i) {
    const float* xi = x.data() + static_cast<std::size_t>(i) * g.h * g.w * C;
    float* yi = y.data() + static_cast<std::size_t>(i) * g.oh * g.ow * C;
    for (int oh = 0; oh < g.oh; ++oh)
      for (int ow = 0; ow < g.ow; ++ow) {
        float* out = yi + (static_cast<std::size_t>(oh) * g.ow + ow) * C;
        std::copy_n(b, C, out);
        for (int kh = 0; kh < kernel_; ++kh) {
          const int ih = oh * stride_ + kh - g.ph;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < kernel_; ++kw) {
            const int iw = ow * stride_ + kw - g.pw;
            if (iw < 0 || iw >= g.w) continue;
            const float* src = xi + (static_cast<std::size_t>(ih) * g.w + iw) * C;
            const float* kk = k + (kh * kernel_ + kw) * C;
            for (int c = 0; c < C; ++c) out[c] += src[c] * kk[c];
          }
        }
      }
  }
  if (cache) cache->input = x;
  return y;
}

Tensor DepthwiseConv2D::backward(const Tensor& grad_out, const LayerCache& cache,
                                 std::span<Tensor> param_grads, bool need_input_grad) const {
  const Tensor& x = cache.input;
  const DwGeom g = dw_geometry(x.dim(1), x.dim(2), kernel_, stride_);
  const int n = x.dim(0), C = channels_;
  const bool weight_grads = trainable();
  if (weight_grads) {
    if (param_grads[0].empty()) param_grads[0] = Tensor(params()[0].value.shape());
    if (param_grads[1].empty()) param_grads[1] = Tensor(params()[1].value.shape());
  }
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape());
  const float* k = params()[0].value.data();
  for (int i = 0; i < n; ++i) {
    const std::size_t in_off = static_cast<std::size_t>(i) * g.h * g.w * C;
    const float* xi = x.data() + in_off;
    const float* gi = grad_out.data() + static_cast<std::size_t>(i) * g.oh * g.ow * C;
    for (int oh = 0; oh < g.oh; ++oh)
      for (int ow = 0; ow < g.ow; ++ow) {
        const float* go = gi + (static_cast<std::size_t>(oh) * g.ow + ow) * C;
        if (weight_grads) {
          float* db = param_grads[1].data();
          for (int c = 0; c < C; ++c) db[c] += go[c];
        }
        for (int kh = 0; kh < kernel_; ++kh) {
          const int ih = oh * stride_ + kh - g.ph;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < kernel_; ++kw) {
            const int iw = ow * stride_ + kw - g.pw;
            if (iw < 0 || iw >= g.w) continue;
            const std::size_t pix = (static_cast<std::size_t>(ih) * g.w + iw) * C;
            const float* kk = k + (kh * kernel_ + kw) * C;
            if (weight_grads) {
              float* dk = param_grads[0].data() + (kh * kernel_ + kw) * C;
              for (int c = 0; c < C; ++c) dk[c] += go[c] * xi[pix + c];
            }
            if (need_input_grad) {
              float* d = dx.data() + in_off + pix;
              for (int c = 0; c < C; ++c) d[c] += go[c] * kk[c];
            }
          }
        }
      }
  }
  return dx;
}

void DepthwiseConv2D::initialize(Rng& rng) {
  const int receptive = kernel_ * kernel_;
  glorot_uniform(params()[0].value, receptive, receptive, rng);
  params()[1].value.fill(0.0f);
}

// ---------------------------------------------------------------- MaxPool

MaxPool::MaxPool(std::string name, int spatial_dims, std::array<int, 3> pool)
    : Layer(std::move(name)), spatial_dims_(spatial_dims), pool_(pool) {
  if (spatial_dims == 2 && pool_[0] != 1) throw ConfigError("max_pool2d: depth pool must be 1");
}

std::vector<int> MaxPool::output_shape(const std::vector<int>& in) const {
  if (static_cast<int>(in.size()) != spatial_dims_ + 1) {
    throw ValidationError(name() + ": bad input shape " + shape_string(in));
  }
  std::vector<int> out = in;
  const int offset = spatial_dims_ == 2 ? 1 : 0;
  for (int a = 0; a < spatial_dims_; ++a) {
    out[a] = in[a] / pool_[a + offset];
    if (out[a] <= 0) throw ValidationError(name() + ": input smaller than pool window");
  }
  return out;
}

Tensor MaxPool::forward(const Tensor& x, const RunOptions&, LayerCache* cache) const {
  require_rank(x, spatial_dims_ + 2, name());
  const std::vector<int> item(x.shape().begin() + 1, x.shape().end());
  const std::vector<int> os = output_shape(item);
  std::array<int, 3> in{1, 1, 1}, out{1, 1, 1};
  const int off = 3 - spatial_dims_;
  for (int a = 0; a < spatial_dims_; ++a) {
    in[a + off] = item[a];
    out[a + off] = os[a];
  }
  const int C = item.back();
  const int n = x.dim(0);
  std::vector<int> out_shape = os;
  out_shape.insert(out_shape.begin(), n);
  Tensor y(out_shape);
  std::vector<int> argmax(y.size());
  const std::size_t in_stride = x.row_size(), out_stride = y.row_size();
  for (int i = 0; i < n; ++i) {
    const float* xi = x.data() + i * in_stride;
    std::size_t o = i * out_stride;
    for (int od = 0; od < out[0]; ++od)
      for (int oh = 0; oh < out[1]; ++oh)
        for (int ow = 0; ow < out[2]; ++ow)
          for (int c = 0; c < C; ++c, ++o) {
            float best = -std::numeric_limits<float>::infinity();
            int best_idx = 0;
            for (int pd = 0; pd < pool_[0]; ++pd)
              for (int ph = 0; ph < pool_[1]; ++ph)
                for (int pw = 0; pw < pool_[2]; ++pw) {
                  const int id = od * pool_[0] + pd, ih = oh * pool_[1] + ph,
                            iw = ow * pool_[2] + pw;
                  const int idx = ((id * in[1] + ih) * in[2] + iw) * C + c;
                  if (xi[idx] > best) {
                    best = xi[idx];
                    best_idx = idx;
                  }
                }
            y[o] = best;
            argmax[o] = best_idx;
          }
  }
  if (cache) {
    cache->input_shape = x.shape();
    cache->indices = std::move(argmax);
  }
  return y;
}

Tensor MaxPool::backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor>,
                         bool need_input_grad) const {
  if (!need_input_grad) return {};
  Tensor dx(cache.input_shape);
  const int n = dx.dim(0);
  const std::size_t in_stride = dx.row_size(), out_stride = grad_out.row_size();
  for (int i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out_stride; ++o) {
      const std::size_t k = i * out_stride + o;
      dx[i * in_stride + cache.indices[k]] += grad_out[k];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x, const RunOptions&, LayerCache* cache) const {
  Tensor y = x;
  for (float& v : y.values()) v = v < 0.0f ? 0.0f : v;  // NaN passes through
  if (cache) cache->aux = y;
  return y;
}

Tensor Relu::backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor>,
                      bool need_input_grad) const {
  if (!need_input_grad) return {};
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (cache.aux[i] <= 0.0f) dx[i] = 0.0f;
  }
  return dx;
}

// ---------------------------------------------------------------- GAP

std::vector<int> GlobalAveragePool::output_shape(const std::vector<int>& in) const {
  if (in.size() < 2) throw ValidationError(name() + ": needs spatial axes");
  return {in.back()};
}

Tensor GlobalAveragePool::forward(const Tensor& x, const RunOptions&, LayerCache* cache) const {
  if (x.rank() < 3) throw ValidationError(name() + ": needs (N, ..., C) input");
  const int n = x.dim(0), C = x.dim(-1);
  const std::size_t cells = x.row_size() / C;
  Tensor y({n, C});
  for (int i = 0; i < n; ++i) {
    const float* xi = x.data() + i * x.row_size();
    std::vector<double> acc(C, 0.0);
    for (std::size_t p = 0; p < cells; ++p)
      for (int c = 0; c < C; ++c) acc[c] += xi[p * C + c];
    for (int c = 0; c < C; ++c) y[static_cast<std::size_t>(i) * C + c] = static_cast<float>(acc[c] / cells);
  }
  if (cache) cache->input_shape = x.shape();
  return y;
}

Tensor GlobalAveragePool::backward(const Tensor& grad_out, const LayerCache& cache,
                                   std::span<Tensor>, bool need_input_grad) const {
  if (!need_input_grad) return {};
  Tensor dx(cache.input_shape);
  const int n = dx.dim(0), C = dx.dim(-1);
  const std::size_t cells = dx.row_size() / C;
  const float inv = 1.0f / static_cast<float>(cells);
  for (int i = 0; i < n; ++i) {
    float* di = dx.data() + i * dx.row_size();
    for (std::size_t p = 0; p < cells; ++p)
      for (int c = 0; c < C; ++c) di[p * C + c] = grad_out[static_cast<std::size_t>(i) * C + c] * inv;
  }
  return dx;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::string name, int in_features, int out_features)
    : Layer(std::move(name)), in_(in_features), out_(out_features) {
  add_param("kernel", {in_, out_});
  add_param("bias", {out_});
}

std::vector<int> Dense::output_shape(const std::vector<int>& in) const {
  if (in.size() != 1 || in[0] != in_) {
    throw ValidationError(name() + ": expected (" + std::to_string(in_) + ") items, got " +
                          shape_string(in));
  }
  return {out_};
}

Tensor Dense::forward(const Tensor& x, const RunOptions&, LayerCache* cache) const {
  require_rank(x, 2, name());
  output_shape({x.dim(1)});
  const int n = x.dim(0);
  Tensor y({n, out_});
  const ConstMapMat xm(x.data(), n, in_);
  const ConstMapMat w(params()[0].value.data(), in_, out_);
  const Eigen::Map<const Eigen::RowVectorXf> b(params()[1].value.data(), out_);
  MapMat ym(y.data(), n, out_);
  ym.noalias() = xm * w;
  ym.rowwise() += b;
  if (cache) cache->input = x;
  return y;
}

Tensor Dense::backward(const Tensor& grad_out, const LayerCache& cache,
                       std::span<Tensor> param_grads, bool need_input_grad) const {
  const Tensor& x = cache.input;
  const int n = x.dim(0);
  const ConstMapMat dy(grad_out.data(), n, out_);
  if (trainable()) {
    if (param_grads[0].empty()) param_grads[0] = Tensor(params()[0].value.shape());
    if (param_grads[1].empty()) param_grads[1] = Tensor(params()[1].value.shape());
    const ConstMapMat xm(x.data(), n, in_);
    MapMat dw(param_grads[0].data(), in_, out_);
    dw.noalias() += xm.transpose() * dy;
    Eigen::Map<Eigen::RowVectorXf> db(param_grads[1].data(), out_);
    db += dy.colwise().sum();
  }
  if (!need_input_grad) return {};
  Tensor dx({n, in_});
  const ConstMapMat w(params()[0].value.data(), in_, out_);
  MapMat dxm(dx.data(), n, in_);
  dxm.noalias() = dy * w.transpose();
  return dx;
}

void Dense::initialize(Rng& rng) {
  glorot_uniform(params()[0].value, in_, out_, rng);
  params()[1].value.fill(0.0f);
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, float momentum, float epsilon)
    : Layer(std::move(name)), channels_(channels), momentum_(momentum), epsilon_(epsilon) {
  add_param("gamma", {channels});
  add_param("beta", {channels});
  add_param("moving_mean", {channels}, true);
  add_param("moving_variance", {channels}, true);
  params()[0].value.fill(1.0f);
  params()[3].value.fill(1.0f);
}

void BatchNorm::initialize(Rng&) {
  params()[0].value.fill(1.0f);
  params()[1].value.fill(0.0f);
  params()[2].value.fill(0.0f);
  params()[3].value.fill(1.0f);
}

Tensor BatchNorm::forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const {
  const int C = channels_;
  if (x.rank() < 2 || x.dim(-1) != C) {
    throw ValidationError(name() + ": expected last axis " + std::to_string(C));
  }
  const std::size_t rows = x.size() / C;
  const float* gamma = params()[0].value.data();
  const float* beta = params()[1].value.data();
  std::vector<float> mean(C), var(C);
  const bool batch_stats = opts.training && trainable() && rows > 1;
  if (batch_stats) {
    std::vector<double> s(C, 0.0), ss(C, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) s[c] += x[r * C + c];
    for (int c = 0; c < C; ++c) mean[c] = static_cast<float>(s[c] / rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        const double d = x[r * C + c] - mean[c];
        ss[c] += d * d;
      }
    for (int c = 0; c < C; ++c) var[c] = static_cast<float>(ss[c] / rows);
  } else {
    std::copy_n(params()[2].value.data(), C, mean.begin());
    std::copy_n(params()[3].value.data(), C, var.begin());
  }
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  std::vector<float> inv_std(C);
  for (int c = 0; c < C; ++c) inv_std[c] = 1.0f / std::sqrt(var[c] + epsilon_);
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      xhat[i] = (x[i] - mean[c]) * inv_std[c];
      y[i] = gamma[c] * xhat[i] + beta[c];
    }
  if (cache) {
    cache->aux = std::move(xhat);
    cache->stats.clear();
    if (batch_stats) {
      // mean, biased var, inverse std, and a flag telling backward/commit
      // that batch statistics were used.
      cache->stats.insert(cache->stats.end(), mean.begin(), mean.end());
      cache->stats.insert(cache->stats.end(), var.begin(), var.end());
    }
    cache->stats.insert(cache->stats.end(), inv_std.begin(), inv_std.end());
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out, const LayerCache& cache,
                           std::span<Tensor> param_grads, bool need_input_grad) const {
  const int C = channels_;
  const Tensor& xhat = cache.aux;
  const std::size_t rows = xhat.size() / C;
  const bool batch_stats = cache.stats.size() == static_cast<std::size_t>(3 * C);
  const float* inv_std = cache.stats.data() + (batch_stats ? 2 * C : 0);
  const float* gamma = params()[0].value.data();

  std::vector<double> dgamma(C, 0.0), dbeta(C, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      dgamma[c] += grad_out[i] * xhat[i];
      dbeta[c] += grad_out[i];
    }
  if (trainable()) {
    if (param_grads[0].empty()) param_grads[0] = Tensor({C});
    if (param_grads[1].empty()) param_grads[1] = Tensor({C});
    for (int c = 0; c < C; ++c) {
      param_grads[0][c] += static_cast<float>(dgamma[c]);
      param_grads[1][c] += static_cast<float>(dbeta[c]);
    }
  }
  if (!need_input_grad) return {};
  Tensor dx(xhat.shape());
  if (batch_stats) {
    const double m = static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        const std::size_t i = r * C + c;
        const double dxhat = grad_out[i] * gamma[c];
        dx[i] = static_cast<float>(inv_std[c] / m *
                                   (m * dxhat - dbeta[c] * gamma[c] - xhat[i] * dgamma[c] * gamma[c]));
      }
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        const std::size_t i = r * C + c;
        dx[i] = grad_out[i] * gamma[c] * inv_std[c];
      }
  }
  return dx;
}

void BatchNorm::commit(const LayerCache& cache) {
  const int C = channels_;
  if (cache.stats.size() != static_cast<std::size_t>(3 * C)) return;
  float* mm = params()[2].value.data();
  float* mv = params()[3].value.data();
  const std::size_t rows = cache.aux.size() / C;
  const float unbias = rows > 1 ? static_cast<float>(rows) / static_cast<float>(rows - 1) : 1.0f;
  for (int c = 0; c < C; ++c) {
    mm[c] = momentum_ * mm[c] + (1.0f - momentum_) * cache.stats[c];
    mv[c] = momentum_ * mv[c] + (1.0f - momentum_) * cache.stats[C + c] * unbias;
  }
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(std::string name, float rate) : Layer(std::move(name)), rate_(rate) {
  if (!(rate >= 0.0f && rate < 1.0f)) throw ConfigError("dropout rate must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, const RunOptions& opts, LayerCache* cache) const {
  const float rate = opts.dropout_rate_override >= 0.0f ? opts.dropout_rate_override : rate_;
  const bool active = (opts.training || opts.dropout) && rate > 0.0f;
  if (!active) {
    if (cache) cache->aux = Tensor();
    return x;
  }
  if (!opts.rng) throw ConfigError(name() + ": active dropout needs a random generator");
  if (rate >= 1.0f) throw ConfigError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const float scale = 1.0f / (1.0f - rate);
  Tensor mask(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = keep(*opts.rng) ? scale : 0.0f;
    y[i] = x[i] * mask[i];
  }
  if (cache) cache->aux = std::move(mask);
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out, const LayerCache& cache, std::span<Tensor>,
                         bool need_input_grad) const {
  if (!need_input_grad) return {};
  if (cache.aux.empty()) return grad_out;
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= cache.aux[i];
  return dx;
}

}  // namespace pocus::nn
