#pragma once

// Minimal dense tensor with reverse-mode differentiation.
//
// Tensors are row-major, rank 1 or 2 for almost every op (rank-1 tensors are
// treated as a single row). A tensor created by an op records its inputs and a
// backward closure when any input requires a gradient and grad mode is on.
// Values never change after creation, except leaf parameters updated by an
// optimizer between steps.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dancedit {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(std::span<const T>)> backward;

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data,
                               bool requires_grad = false);
  static BasicTensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // 2D view: rank-1 tensors are one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  T item() const;
  T at(std::size_t r, std::size_t c) const;

  // Same values, no history.
  BasicTensor detach() const;
  // Deep copy of values into a fresh leaf.
  BasicTensor clone(bool requires_grad = false) const;

  const NodePtr& node() const { return node_; }
  static BasicTensor wrap(NodePtr node);

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Grad mode is thread local; inference threads use NoGradGuard.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the result of an op. `backward` receives the output gradient and must
// accumulate into the inputs that require grad. Throws std::domain_error when
// `value` holds a non-finite entry.
template <class T>
BasicTensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                       std::vector<BasicTensor<T>> inputs,
                       std::function<void(std::span<const T>)> backward);

// Populates gradients of every reachable tensor that requires grad.
template <class T>
void backward(const BasicTensor<T>& loss);

// ---- ops -------------------------------------------------------------------

template <class T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// a · bᵀ
template <class T> BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> transpose(const BasicTensor<T>& a);
// x·W + b with W [in×out] and b [out].
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

// Elementwise with limited broadcasting: equal shapes, b a single row
// [1×n] / [n], b a per-row scalar column [m×1], or b a single value.
template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <class T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T value);
template <class T> BasicTensor<T> square(const BasicTensor<T>& a);
template <class T> BasicTensor<T> gelu(const BasicTensor<T>& a);
template <class T> BasicTensor<T> exp(const BasicTensor<T>& a);

// Softmax along axis 0 (down columns) or 1 (along rows).
template <class T> BasicTensor<T> softmax(const BasicTensor<T>& a, int axis);
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-5));
// Per-column renormalization of `content` to the temporal (row-axis) mean and
// population std of `style`: std_s·(c − mean_c)/(std_c + eps) + mean_s.
template <class T>
BasicTensor<T> adain(const BasicTensor<T>& content, const BasicTensor<T>& style,
                     T eps = T(1e-5));
template <class T> BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& a, T eps = T(1e-8));

// Reductions accumulate in double.
template <class T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <class T> BasicTensor<T> mean(const BasicTensor<T>& a);
template <class T> BasicTensor<T> mean_rows(const BasicTensor<T>& a);  // [m×n] -> [1×n]
template <class T> BasicTensor<T> max_cols(const BasicTensor<T>& a);   // [m×n] -> [m×1]
template <class T> BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);
// Mean over rows of −log softmax(logits)[r, target[r]].
template <class T>
BasicTensor<T> cross_entropy_rows(const BasicTensor<T>& logits,
                                  std::span<const std::size_t> targets);

template <class T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end);
template <class T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t end);
template <class T> BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts);
template <class T> BasicTensor<T> concat_cols(std::span<const BasicTensor<T>> parts);
template <class T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
// Repeats a single row m times.
template <class T> BasicTensor<T> tile_rows(const BasicTensor<T>& row, std::size_t m);

template <class T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::size_t> ids);

// Constant sinusoidal encodings (no gradient). Row i encodes positions[i].
template <class T>
BasicTensor<T> sinusoidal_encoding(std::span<const double> positions, std::size_t dim);
template <class T>
BasicTensor<T> sinusoidal_positions(std::size_t count, std::size_t dim);

// Scaled dot-product attention with an output projection. Inputs are the
// already-normalized query and key/value sources, [Nq×H] and [Nk×H].
template <class T>
struct AttentionParams {
  BasicTensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& query,
                                    const BasicTensor<T>& key,
                                    const BasicTensor<T>& value,
                                    const AttentionParams<T>& params,
                                    std::size_t heads);

}  // namespace dancedit
