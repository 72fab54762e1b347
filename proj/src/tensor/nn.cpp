#include "dancedit/tensor/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dancedit {

Tensor ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  items_.push_back({std::move(name), value});
  return value;
}

const Tensor* ParameterSet::find(std::string_view name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p.value;
  }
  return nullptr;
}

const Tensor& ParameterSet::get(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw std::out_of_range("unknown parameter: " + std::string(name));
  return *t;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.value);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

void ParameterSet::set_trainable(bool on) {
  for (auto& p : items_) p.value.set_requires_grad(on);
}

void ParameterSet::copy_values_from(const ParameterSet& source, std::string_view prefix,
                                    std::string_view source_prefix) {
  for (auto& p : items_) {
    if (!p.name.starts_with(prefix)) continue;
    const std::string key =
        std::string(source_prefix) + p.name.substr(prefix.size());
    const Tensor* src = source.find(key);
    if (!src) continue;
    if (src->shape() != p.value.shape()) {
      throw std::invalid_argument("shape mismatch copying " + key + " into " + p.name);
    }
    auto dst = p.value.mutable_data();
    std::copy(src->data().begin(), src->data().end(), dst.begin());
  }
}

Tensor Initializer::xavier(std::size_t fan_in, std::size_t fan_out) {
  const float limit = std::sqrt(6.0f / float(fan_in + fan_out));
  std::uniform_real_distribution<float> dist(-limit, limit);
  std::vector<float> data(fan_in * fan_out);
  for (auto& v : data) v = dist(rng_);
  return Tensor::from_data({fan_in, fan_out}, std::move(data));
}

Tensor Initializer::normal(Shape shape, float stddev) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> data(shape_size(shape));
  for (auto& v : data) v = dist(rng_);
  return Tensor::from_data(std::move(shape), std::move(data));
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in,
                      std::size_t out, Initializer& init, bool zero) {
  Linear layer;
  layer.weight = params.add(name + ".weight",
                            zero ? Tensor::zeros({in, out}) : init.xavier(in, out));
  layer.bias = params.add(name + ".bias", Tensor::zeros({out}));
  return layer;
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gain = params.add(name + ".gain", Tensor::full({width}, 1.0f));
  ln.bias = params.add(name + ".bias", Tensor::zeros({width}));
  return ln;
}

Attention Attention::create(ParameterSet& params, const std::string& name, std::size_t width,
                            std::size_t heads, Initializer& init) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("attention width must be divisible by heads");
  }
  Attention a;
  a.heads = heads;
  auto make = [&](const char* tag) {
    return Linear::create(params, name + "." + tag, width, width, init);
  };
  auto q = make("q"), k = make("k"), v = make("v"), o = make("o");
  a.weights = {q.weight, q.bias, k.weight, k.bias, v.weight, v.bias, o.weight, o.bias};
  return a;
}

FeedForward FeedForward::create(ParameterSet& params, const std::string& name,
                                std::size_t width, std::size_t hidden, Initializer& init) {
  return {Linear::create(params, name + ".up", width, hidden, init),
          Linear::create(params, name + ".down", hidden, width, init)};
}

Embedding Embedding::create(ParameterSet& params, const std::string& name, std::size_t vocab,
                            std::size_t width, Initializer& init) {
  return {params.add(name + ".table", init.normal({vocab, width}, 0.5f))};
}

TimestepMlp TimestepMlp::create(ParameterSet& params, const std::string& name,
                                std::size_t width, Initializer& init) {
  TimestepMlp mlp;
  mlp.width = width;
  mlp.first = Linear::create(params, name + ".fc1", width, width, init);
  mlp.second = Linear::create(params, name + ".fc2", width, width, init);
  return mlp;
}

Tensor TimestepMlp::operator()(double t) const {
  const double pos[1] = {t};
  auto enc = sinusoidal_encoding<float>(pos, width);
  return second(gelu(first(enc)));
}

}  // namespace dancedit
