#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dancedit/tensor/tensor.hpp"

namespace dancedit {

struct Parameter {
  std::string name;
  Tensor value;
};

// Named, ordered parameter registry. Names are unique; tensors are leaves.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor value);
  const Tensor& get(std::string_view name) const;
  const Tensor* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  const std::vector<Parameter>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t scalar_count() const;

  void zero_grad();
  void set_trainable(bool on);
  // Copies values (not identity) for every name present in both sets, with
  // `source_prefix` stripped/`prefix` added. Shapes must agree.
  void copy_values_from(const ParameterSet& source, std::string_view prefix,
                        std::string_view source_prefix);

 private:
  std::vector<Parameter> items_;
};

// Seeded initializers. The same seed yields the same parameters.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor xavier(std::size_t fan_in, std::size_t fan_out);
  Tensor normal(Shape shape, float stddev);
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Linear {
  Tensor weight;  // [in×out]
  Tensor bias;    // [out]

  static Linear create(ParameterSet& params, const std::string& name, std::size_t in,
                       std::size_t out, Initializer& init, bool zero = false);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gain, bias;
  static LayerNorm create(ParameterSet& params, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct Attention {
  AttentionParams<float> weights;
  std::size_t heads = 1;

  static Attention create(ParameterSet& params, const std::string& name, std::size_t width,
                          std::size_t heads, Initializer& init);
  Tensor operator()(const Tensor& query, const Tensor& context) const {
    return multi_head_attention(query, context, context, weights, heads);
  }
};

struct FeedForward {
  Linear up, down;
  static FeedForward create(ParameterSet& params, const std::string& name, std::size_t width,
                            std::size_t hidden, Initializer& init);
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
};

struct Embedding {
  Tensor table;  // [vocab×width]
  static Embedding create(ParameterSet& params, const std::string& name, std::size_t vocab,
                          std::size_t width, Initializer& init);
  Tensor operator()(std::span<const std::size_t> ids) const { return embedding(table, ids); }
};

// sinusoidal(t) -> Linear -> GELU -> Linear, one row.
struct TimestepMlp {
  Linear first, second;
  std::size_t width = 0;
  static TimestepMlp create(ParameterSet& params, const std::string& name, std::size_t width,
                            Initializer& init);
  Tensor operator()(double t) const;
};

}  // namespace dancedit
