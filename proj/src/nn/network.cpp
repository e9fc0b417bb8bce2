#include "pocus/nn/network.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "pocus/error.hpp"

namespace pocus::nn {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts need byte swapping");

Layer& Sequential::add(LayerPtr layer) {
  for (const auto& l : layers_) {
    if (l->name() == layer->name()) throw ConfigError("duplicate layer name " + layer->name());
  }
  layers_.push_back(std::move(layer));
  return *layers_.back();
}

Layer* Sequential::find(const std::string& name) {
  for (auto& l : layers_) {
    if (l->name() == name) return l.get();
  }
  return nullptr;
}

std::vector<int> Sequential::output_shape(std::vector<int> item_shape) const {
  for (const auto& l : layers_) item_shape = l->output_shape(item_shape);
  return item_shape;
}

std::size_t Sequential::first_trainable() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->trainable()) return i;
  }
  return layers_.size();
}

Tensor Sequential::forward(const Tensor& x, const RunOptions& opts, Tape* tape,
                           bool keep_all) const {
  const std::size_t keep_from = keep_all ? 0 : first_trainable();
  if (tape) {
    tape->clear();
    tape->resize(layers_.size());
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerCache* cache = tape && i >= keep_from ? &(*tape)[i] : nullptr;
    h = layers_[i]->forward(h, opts, cache);
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, const Tape& tape, Gradients& grads,
                            bool need_input_grad) const {
  const std::size_t stop = need_input_grad ? 0 : first_trainable();
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > stop;) {
    const bool want_input = i > stop || need_input_grad;
    g = layers_[i]->backward(g, tape[i], grads[i], want_input);
  }
  return need_input_grad ? g : Tensor();
}

void Sequential::commit(const Tape& tape) {
  for (std::size_t i = 0; i < layers_.size() && i < tape.size(); ++i) layers_[i]->commit(tape[i]);
}

void Sequential::initialize(Rng& rng) {
  for (auto& l : layers_) l->initialize(rng);
}

Gradients Sequential::make_gradients() const {
  Gradients g(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) g[i].resize(layers_[i]->params().size());
  return g;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->parameter_count();
  return n;
}

std::size_t Sequential::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    for (const auto& p : l->params())
      if (p.trainable && !p.buffer) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------- Adam

Adam::Adam(float learning_rate, float beta1, float beta2, float epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(learning_rate > 0.0f)) throw ConfigError("learning rate must be positive");
}

void Adam::step(std::vector<Layer*> layers, const Gradients& grads, float grad_scale) {
  ++t_;
  const double correction = std::sqrt(1.0 - std::pow(beta2_, t_)) / (1.0 - std::pow(beta1_, t_));
  const float lr_t = static_cast<float>(lr_ * correction);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    auto& params = layers[li]->params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Parameter& p = params[pi];
      if (p.buffer || !p.trainable) continue;
      const Tensor& g = grads[li][pi];
      if (g.empty()) continue;
      Slot& s = slots_[p.name];
      if (s.m.empty()) {
        s.m = Tensor(p.value.shape());
        s.v = Tensor(p.value.shape());
      }
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float gi = g[i] * grad_scale;
        s.m[i] = beta1_ * s.m[i] + (1.0f - beta1_) * gi;
        s.v[i] = beta2_ * s.v[i] + (1.0f - beta2_) * gi * gi;
        p.value[i] -= lr_t * s.m[i] / (std::sqrt(s.v[i]) + epsilon_);
      }
    }
  }
}

// ---------------------------------------------------------------- I/O

namespace {
constexpr char kMagic[8] = {'P', 'C', 'U', 'S', 'W', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("truncated weight file " + path.string());
  }
  return v;
}
}  // namespace

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) write_pod<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw IoError("not a weight file (bad magic): " + path.string());
  }
  const auto count = read_pod<std::uint32_t>(is, path);
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(is, path);
    if (len > 4096) throw IoError("corrupt tensor name in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated weight file " + path.string());
    const auto rank = read_pod<std::uint32_t>(is, path);
    if (rank > 8) throw IoError("corrupt tensor rank in " + path.string());
    std::vector<int> shape(rank);
    for (auto& d : shape) d = read_pod<std::int32_t>(is, path);
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw IoError("truncated weight file " + path.string());
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace pocus::nn
