#include "dancedit/tensor/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dancedit {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;

void check(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

template <class T>
std::size_t rows_of(const BasicTensor<T>& t) {
  return t.rows();
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

template <class T>
Broadcast broadcast_kind(const BasicTensor<T>& a, const BasicTensor<T>& b,
                         const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows() && b.rank() == 2) return Broadcast::kCol;
  throw std::invalid_argument(std::string(op) + ": cannot broadcast " +
                              shape_string(b.shape()) + " onto " +
                              shape_string(a.shape()));
}

inline std::size_t b_index(Broadcast kind, std::size_t r, std::size_t c,
                           std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- BasicTensor -----------------------------------------------------------

template <class T>
BasicTensor<T> BasicTensor<T>::wrap(NodePtr node) {
  return BasicTensor(std::move(node));
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(shape_size(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data,
                                         bool requires_grad) {
  check(!shape.empty() && shape.size() <= 3, "tensor rank must be 1..3");
  for (auto extent : shape) check(extent > 0, "tensor extents must be positive");
  check(data.size() == shape_size(shape),
        "data length " + std::to_string(data.size()) + " does not match shape " +
            shape_string(shape));
  for (const T v : data) {
    if (!std::isfinite(v)) throw std::domain_error("non-finite tensor data");
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <class T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return from_data({1}, {value});
}

template <class T>
const Shape& BasicTensor<T>::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

template <class T>
std::size_t BasicTensor<T>::size() const {
  return node_ ? node_->value.size() : 0;
}

template <class T>
std::size_t BasicTensor<T>::rows() const {
  const auto& s = shape();
  if (s.size() == 1) return 1;
  return shape_size(s) / s.back();
}

template <class T>
std::size_t BasicTensor<T>::cols() const {
  return shape().back();
}

template <class T>
std::span<const T> BasicTensor<T>::data() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->value;
}

template <class T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->value;
}

template <class T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->grad;
}

template <class T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->ensure_grad();
}

template <class T>
bool BasicTensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <class T>
void BasicTensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <class T>
bool BasicTensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <class T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!node_) throw std::logic_error("undefined tensor");
  node_->requires_grad = on;
}

template <class T>
T BasicTensor<T>::item() const {
  check(size() == 1, "item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <class T>
T BasicTensor<T>::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape();
  node->value = node_->value;
  return BasicTensor(std::move(node));
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone(bool requires_grad) const {
  auto copy = detach();
  copy.node_->requires_grad = requires_grad;
  return copy;
}

// ---- graph -----------------------------------------------------------------

template <class T>
BasicTensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                       std::vector<BasicTensor<T>> inputs,
                       std::function<void(std::span<const T>)> backward_fn) {
  for (const T v : value) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string("non-finite value produced by ") + name);
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const auto& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward_fn);
    }
  }
  return BasicTensor<T>::wrap(std::move(node));
}

template <class T>
void backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got " +
                                shape_string(loss.shape()));
  }
  using Node = detail::Node<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* root = loss.node().get();
  if (!root->requires_grad) return;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

// ---- linear algebra --------------------------------------------------------

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  check(b.rows() == k, "matmul: inner dims differ " + shape_string(a.shape()) +
                           " x " + shape_string(b.shape()));
  std::vector<T> out(m * n);
  MapM<T>(out.data(), m, n).noalias() =
      MapC<T>(a.data().data(), m, k) * MapC<T>(b.data().data(), k, n);
  return make_op<T>("matmul", {m, n}, std::move(out), {a, b},
                    [a, b, m, k, n](std::span<const T> g) {
                      MapC<T> G(g.data(), m, n);
                      if (a.requires_grad()) {
                        MapM<T>(a.node()->ensure_grad().data(), m, k).noalias() +=
                            G * MapC<T>(b.data().data(), k, n).transpose();
                      }
                      if (b.requires_grad()) {
                        MapM<T>(b.node()->ensure_grad().data(), k, n).noalias() +=
                            MapC<T>(a.data().data(), m, k).transpose() * G;
                      }
                    });
}

template <class T>
BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  check(b.cols() == k, "matmul_bt: inner dims differ " + shape_string(a.shape()) +
                           " x " + shape_string(b.shape()) + "^T");
  std::vector<T> out(m * n);
  MapM<T>(out.data(), m, n).noalias() =
      MapC<T>(a.data().data(), m, k) * MapC<T>(b.data().data(), n, k).transpose();
  return make_op<T>("matmul_bt", {m, n}, std::move(out), {a, b},
                    [a, b, m, k, n](std::span<const T> g) {
                      MapC<T> G(g.data(), m, n);
                      if (a.requires_grad()) {
                        MapM<T>(a.node()->ensure_grad().data(), m, k).noalias() +=
                            G * MapC<T>(b.data().data(), n, k);
                      }
                      if (b.requires_grad()) {
                        MapM<T>(b.node()->ensure_grad().data(), n, k).noalias() +=
                            G.transpose() * MapC<T>(a.data().data(), m, k);
                      }
                    });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  MapM<T>(out.data(), n, m) = MapC<T>(a.data().data(), m, n).transpose();
  return make_op<T>("transpose", {n, m}, std::move(out), {a},
                    [a, m, n](std::span<const T> g) {
                      MapM<T>(a.node()->ensure_grad().data(), m, n) +=
                          MapC<T>(g.data(), n, m).transpose();
                    });
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  const std::size_t m = x.rows(), k = x.cols(), n = weight.cols();
  check(weight.rows() == k, "linear: input width " + std::to_string(k) +
                                " does not match weight " + shape_string(weight.shape()));
  check(bias.size() == n, "linear: bias size mismatch");
  std::vector<T> out(m * n);
  MapM<T> Y(out.data(), m, n);
  Y.noalias() = MapC<T>(x.data().data(), m, k) * MapC<T>(weight.data().data(), k, n);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> brow(bias.data().data(), n);
  Y.rowwise() += brow;
  return make_op<T>("linear", {m, n}, std::move(out), {x, weight, bias},
                    [x, weight, bias, m, k, n](std::span<const T> g) {
                      MapC<T> G(g.data(), m, n);
                      if (x.requires_grad()) {
                        MapM<T>(x.node()->ensure_grad().data(), m, k).noalias() +=
                            G * MapC<T>(weight.data().data(), k, n).transpose();
                      }
                      if (weight.requires_grad()) {
                        MapM<T>(weight.node()->ensure_grad().data(), k, n).noalias() +=
                            MapC<T>(x.data().data(), m, k).transpose() * G;
                      }
                      if (bias.requires_grad()) {
                        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
                            bias.node()->ensure_grad().data(), n) += G.colwise().sum();
                      }
                    });
}

// ---- elementwise -----------------------------------------------------------

namespace {

template <class T, class Fwd, class GradA, class GradB>
BasicTensor<T> binary(const char* name, const BasicTensor<T>& a,
                      const BasicTensor<T>& b, Fwd fwd, GradA grad_a, GradB grad_b) {
  const Broadcast kind = broadcast_kind(a, b, name);
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = fwd(av[r * n + c], bv[b_index(kind, r, c, n)]);
    }
  }
  return make_op<T>(name, a.shape(), std::move(out), {a, b},
                    [a, b, kind, m, n, grad_a, grad_b](std::span<const T> g) {
                      const auto av = a.data();
                      const auto bv = b.data();
                      if (a.requires_grad()) {
                        auto ga = a.node()->ensure_grad();
                        for (std::size_t i = 0; i < m * n; ++i) {
                          ga[i] += grad_a(g[i], av[i], bv[b_index(kind, i / n, i % n, n)]);
                        }
                      }
                      if (b.requires_grad()) {
                        auto gb = b.node()->ensure_grad();
                        for (std::size_t i = 0; i < m * n; ++i) {
                          const std::size_t j = b_index(kind, i / n, i % n, n);
                          gb[j] += grad_b(g[i], av[i], bv[j]);
                        }
                      }
                    });
}

template <class T, class Fwd, class Deriv>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  std::transform(av.begin(), av.end(), out.begin(), fwd);
  return make_op<T>(name, a.shape(), std::move(out), {a},
                    [a, deriv](std::span<const T> g) {
                      const auto av = a.data();
                      auto ga = a.node()->ensure_grad();
                      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * deriv(av[i]);
                    });
}

}  // namespace

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T x) { return x * factor; }, [factor](T) { return factor; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T value) {
  return unary<T>(
      "add_scalar", a, [value](T x) { return x + value; }, [](T) { return T(1); });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  return unary<T>(
      "square", a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  // tanh approximation
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x))); },
      [](T x) {
        const T u = k * (x + c * x * x * x);
        const T th = std::tanh(u);
        const T du = k * (T(1) + T(3) * c * x * x);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
      });
}

// ---- normalization ---------------------------------------------------------

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& a, int axis) {
  check(axis == 0 || axis == 1, "softmax: axis must be 0 or 1");
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.data();
  std::vector<T> out(m * n);
  // Walk "lanes": rows for axis 1, columns for axis 0.
  const std::size_t lanes = axis == 1 ? m : n;
  const std::size_t len = axis == 1 ? n : m;
  const std::size_t lane_stride = axis == 1 ? n : 1;
  const std::size_t step = axis == 1 ? 1 : n;
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t base = l * lane_stride;
    T mx = av[base];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, av[base + i * step]);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const T e = std::exp(av[base + i * step] - mx);
      out[base + i * step] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) {
      out[base + i * step] = static_cast<T>(out[base + i * step] / total);
    }
  }
  auto result = make_op<T>("softmax", a.shape(), out, {a}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [a, y = std::move(out), lanes, len, lane_stride,
                               step](std::span<const T> g) {
      auto ga = a.node()->ensure_grad();
      for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t base = l * lane_stride;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = base + i * step;
          dot += double(g[idx]) * y[idx];
        }
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = base + i * step;
          ga[idx] += y[idx] * static_cast<T>(g[idx] - dot);
        }
      }
    };
  }
  return result;
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  const std::size_t m = x.rows(), n = x.cols();
  check(n >= 2, "layer_norm: width must be at least 2");
  check(gain.size() == n && bias.size() == n, "layer_norm: affine size mismatch");
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<T> out(m * n), xhat(m * n), rstd(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= double(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= double(n);
    const double rs = 1.0 / std::sqrt(var + double(eps));
    rstd[r] = static_cast<T>(rs);
    for (std::size_t c = 0; c < n; ++c) {
      const T h = static_cast<T>((xv[r * n + c] - mu) * rs);
      xhat[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  auto result = make_op<T>("layer_norm", x.shape(), std::move(out), {x, gain, bias}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [x, gain, bias, xhat = std::move(xhat),
                               rstd = std::move(rstd), m, n](std::span<const T> g) {
      const auto gv = gain.data();
      if (gain.requires_grad() || bias.requires_grad()) {
        std::vector<T> dg(n, T(0)), db(n, T(0));
        for (std::size_t i = 0; i < m * n; ++i) {
          dg[i % n] += g[i] * xhat[i];
          db[i % n] += g[i];
        }
        if (gain.requires_grad()) {
          auto gg = gain.node()->ensure_grad();
          for (std::size_t c = 0; c < n; ++c) gg[c] += dg[c];
        }
        if (bias.requires_grad()) {
          auto gb = bias.node()->ensure_grad();
          for (std::size_t c = 0; c < n; ++c) gb[c] += db[c];
        }
      }
      if (x.requires_grad()) {
        auto gx = x.node()->ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double d = double(g[r * n + c]) * gv[c];
            mean_d += d;
            mean_dh += d * xhat[r * n + c];
          }
          mean_d /= double(n);
          mean_dh /= double(n);
          for (std::size_t c = 0; c < n; ++c) {
            const double d = double(g[r * n + c]) * gv[c];
            gx[r * n + c] +=
                static_cast<T>(rstd[r] * (d - mean_d - xhat[r * n + c] * mean_dh));
          }
        }
      }
    };
  }
  return result;
}

template <class T>
BasicTensor<T> adain(const BasicTensor<T>& content, const BasicTensor<T>& style, T eps) {
  check(content.shape() == style.shape(), "adain: content/style shape mismatch");
  const std::size_t m = content.rows(), n = content.cols();
  check(m >= 2, "adain: needs at least two frames");
  const auto cv = content.data();
  const auto sv = style.data();
  // Per-column statistics over rows, population std.
  std::vector<double> mu_c(n, 0.0), sd_c(n, 0.0), mu_s(n, 0.0), sd_s(n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      mu_c[c] += cv[r * n + c];
      mu_s[c] += sv[r * n + c];
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    mu_c[c] /= double(m);
    mu_s[c] /= double(m);
  }
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double dc = cv[r * n + c] - mu_c[c];
      const double ds = sv[r * n + c] - mu_s[c];
      sd_c[c] += dc * dc;
      sd_s[c] += ds * ds;
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    sd_c[c] = std::sqrt(sd_c[c] / double(m));
    sd_s[c] = std::sqrt(sd_s[c] / double(m));
  }
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = static_cast<T>(
          sd_s[c] * (cv[r * n + c] - mu_c[c]) / (sd_c[c] + double(eps)) + mu_s[c]);
    }
  }
  auto result = make_op<T>("adain", content.shape(), std::move(out), {content, style}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [content, style, mu_c, sd_c, mu_s, sd_s, m, n,
                               eps](std::span<const T> g) {
      const auto cv = content.data();
      const auto sv = style.data();
      for (std::size_t c = 0; c < n; ++c) {
        const double d = sd_c[c] + double(eps);
        double g_sum = 0.0, g_xhat = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          g_sum += g[r * n + c];
          g_xhat += double(g[r * n + c]) * (cv[r * n + c] - mu_c[c]);
        }
        if (content.requires_grad()) {
          auto gc = content.node()->ensure_grad();
          const double a = sd_s[c] / d;
          const double d_denom = -sd_s[c] / (d * d) * g_xhat;
          std::vector<double> dxhat(m);
          double mean_dxhat = 0.0;
          for (std::size_t r = 0; r < m; ++r) {
            const double xhat = cv[r * n + c] - mu_c[c];
            dxhat[r] = a * g[r * n + c];
            if (sd_c[c] > 0.0) dxhat[r] += d_denom * xhat / (double(m) * sd_c[c]);
            mean_dxhat += dxhat[r];
          }
          mean_dxhat /= double(m);
          for (std::size_t r = 0; r < m; ++r) {
            gc[r * n + c] += static_cast<T>(dxhat[r] - mean_dxhat);
          }
        }
        if (style.requires_grad()) {
          auto gs = style.node()->ensure_grad();
          const double d_sd = g_xhat / d;
          for (std::size_t r = 0; r < m; ++r) {
            double v = g_sum / double(m);
            if (sd_s[c] > 0.0) {
              v += d_sd * (sv[r * n + c] - mu_s[c]) / (double(m) * sd_s[c]);
            }
            gs[r * n + c] += static_cast<T>(v);
          }
        }
      }
    };
  }
  return result;
}

template <class T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& a, T eps) {
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.data();
  std::vector<T> out(m * n), norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += double(av[r * n + c]) * av[r * n + c];
    const double nr = std::max(std::sqrt(s), double(eps));
    norms[r] = static_cast<T>(nr);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = static_cast<T>(av[r * n + c] / nr);
  }
  auto result = make_op<T>("l2_normalize_rows", a.shape(), out, {a}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [a, y = std::move(out), norms = std::move(norms), m, n,
                               eps](std::span<const T> g) {
      auto ga = a.node()->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        if (norms[r] <= eps) {
          for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * n + c] / eps;
          continue;
        }
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += double(g[r * n + c]) * y[r * n + c];
        for (std::size_t c = 0; c < n; ++c) {
          ga[r * n + c] += static_cast<T>((g[r * n + c] - y[r * n + c] * dot) / norms[r]);
        }
      }
    };
  }
  return result;
}

// ---- reductions ------------------------------------------------------------

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double total = 0.0;
  for (const T v : a.data()) total += v;
  return make_op<T>("sum", {1}, {static_cast<T>(total)}, {a},
                    [a](std::span<const T> g) {
                      for (auto& v : a.node()->ensure_grad()) v += g[0];
                    });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  double total = 0.0;
  for (const T v : a.data()) total += v;
  const double count = double(a.size());
  return make_op<T>("mean", {1}, {static_cast<T>(total / count)}, {a},
                    [a, count](std::span<const T> g) {
                      const T share = static_cast<T>(g[0] / count);
                      for (auto& v : a.node()->ensure_grad()) v += share;
                    });
}

template <class T>
BasicTensor<T> mean_rows(const BasicTensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.data();
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < m * n; ++i) acc[i % n] += av[i];
  std::vector<T> out(n);
  for (std::size_t c = 0; c < n; ++c) out[c] = static_cast<T>(acc[c] / double(m));
  return make_op<T>("mean_rows", {1, n}, std::move(out), {a},
                    [a, m, n](std::span<const T> g) {
                      auto ga = a.node()->ensure_grad();
                      for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i % n] / T(m);
                    });
}

template <class T>
BasicTensor<T> max_cols(const BasicTensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.data();
  std::vector<T> out(m);
  std::vector<std::size_t> arg(m);
  for (std::size_t r = 0; r < m; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (av[r * n + c] > av[r * n + best]) best = c;
    }
    arg[r] = best;
    out[r] = av[r * n + best];
  }
  return make_op<T>("max_cols", {m, 1}, std::move(out), {a},
                    [a, arg, n](std::span<const T> g) {
                      auto ga = a.node()->ensure_grad();
                      for (std::size_t r = 0; r < arg.size(); ++r) ga[r * n + arg[r]] += g[r];
                    });
}

template <class T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check(a.shape() == b.shape(), "mse: shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
  const auto av = a.data();
  const auto bv = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = double(av[i]) - bv[i];
    total += d * d;
  }
  const double count = double(av.size());
  return make_op<T>("mse", {1}, {static_cast<T>(total / count)}, {a, b},
                    [a, b, count](std::span<const T> g) {
                      const auto av = a.data();
                      const auto bv = b.data();
                      const double k = 2.0 * g[0] / count;
                      if (a.requires_grad()) {
                        auto ga = a.node()->ensure_grad();
                        for (std::size_t i = 0; i < av.size(); ++i) {
                          ga[i] += static_cast<T>(k * (double(av[i]) - bv[i]));
                        }
                      }
                      if (b.requires_grad()) {
                        auto gb = b.node()->ensure_grad();
                        for (std::size_t i = 0; i < av.size(); ++i) {
                          gb[i] -= static_cast<T>(k * (double(av[i]) - bv[i]));
                        }
                      }
                    });
}

template <class T>
BasicTensor<T> cross_entropy_rows(const BasicTensor<T>& logits,
                                  std::span<const std::size_t> targets) {
  const std::size_t m = logits.rows(), n = logits.cols();
  check(targets.size() == m, "cross_entropy_rows: one target per row required");
  const auto lv = logits.data();
  std::vector<T> probs(m * n);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    check(targets[r] < n, "cross_entropy_rows: target out of range");
    T mx = lv[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, lv[r * n + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(double(lv[r * n + c] - mx));
    for (std::size_t c = 0; c < n; ++c) {
      probs[r * n + c] = static_cast<T>(std::exp(double(lv[r * n + c] - mx)) / z);
    }
    total += std::log(z) - double(lv[r * n + targets[r]] - mx);
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make_op<T>("cross_entropy_rows", {1}, {static_cast<T>(total / double(m))},
                    {logits},
                    [logits, probs = std::move(probs), tg = std::move(tg), m,
                     n](std::span<const T> g) {
                      auto gl = logits.node()->ensure_grad();
                      const T k = g[0] / T(m);
                      for (std::size_t r = 0; r < m; ++r) {
                        for (std::size_t c = 0; c < n; ++c) {
                          const T onehot = c == tg[r] ? T(1) : T(0);
                          gl[r * n + c] += k * (probs[r * n + c] - onehot);
                        }
                      }
                    });
}

// ---- structural ------------------------------------------------------------

template <class T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t n = a.cols();
  check(begin < end && end <= a.rows(), "slice_rows: bad range");
  const auto av = a.data();
  std::vector<T> out(av.begin() + begin * n, av.begin() + end * n);
  return make_op<T>("slice_rows", {end - begin, n}, std::move(out), {a},
                    [a, begin, n](std::span<const T> g) {
                      auto ga = a.node()->ensure_grad();
                      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
                    });
}

template <class T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  check(begin < end && end <= n, "slice_cols: bad range");
  const std::size_t w = end - begin;
  const auto av = a.data();
  std::vector<T> out(m * w);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(av.begin() + r * n + begin, w, out.begin() + r * w);
  }
  return make_op<T>("slice_cols", {m, w}, std::move(out), {a},
                    [a, begin, m, n, w](std::span<const T> g) {
                      auto ga = a.node()->ensure_grad();
                      for (std::size_t r = 0; r < m; ++r) {
                        for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g[r * w + c];
                      }
                    });
}

template <class T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts) {
  check(!parts.empty(), "concat_rows: nothing to concatenate");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    check(p.cols() == n, "concat_rows: width mismatch");
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<BasicTensor<T>> inputs(parts.begin(), parts.end());
  return make_op<T>("concat_rows", {m, n}, std::move(out), inputs,
                    [inputs](std::span<const T> g) {
                      std::size_t offset = 0;
                      for (const auto& p : inputs) {
                        if (p.requires_grad()) {
                          auto gp = p.node()->ensure_grad();
                          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
                        }
                        offset += p.size();
                      }
                    });
}

template <class T>
BasicTensor<T> concat_cols(std::span<const BasicTensor<T>> parts) {
  check(!parts.empty(), "concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    check(p.rows() == m, "concat_cols: row count mismatch");
    n += p.cols();
  }
  std::vector<T> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto pv = p.data();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(pv.begin() + r * w, w, out.begin() + r * n + offset);
    }
    offset += w;
  }
  std::vector<BasicTensor<T>> inputs(parts.begin(), parts.end());
  return make_op<T>("concat_cols", {m, n}, std::move(out), inputs,
                    [inputs, m, n](std::span<const T> g) {
                      std::size_t offset = 0;
                      for (const auto& p : inputs) {
                        const std::size_t w = p.cols();
                        if (p.requires_grad()) {
                          auto gp = p.node()->ensure_grad();
                          for (std::size_t r = 0; r < m; ++r) {
                            for (std::size_t c = 0; c < w; ++c) {
                              gp[r * w + c] += g[r * n + offset + c];
                            }
                          }
                        }
                        offset += w;
                      }
                    });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  check(shape_size(shape) == a.size(), "reshape: size mismatch");
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_op<T>("reshape", std::move(shape), std::move(out), {a},
                    [a](std::span<const T> g) {
                      auto ga = a.node()->ensure_grad();
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    });
}

template <class T>
BasicTensor<T> tile_rows(const BasicTensor<T>& row, std::size_t m) {
  check(row.rows() == 1, "tile_rows: expects a single row");
  check(m > 0, "tile_rows: count must be positive");
  const std::size_t n = row.cols();
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy(row.data().begin(), row.data().end(), out.begin() + r * n);
  }
  return make_op<T>("tile_rows", {m, n}, std::move(out), {row},
                    [row, m, n](std::span<const T> g) {
                      auto gr = row.node()->ensure_grad();
                      for (std::size_t i = 0; i < m * n; ++i) gr[i % n] += g[i];
                    });
}

template <class T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::size_t> ids) {
  const std::size_t vocab = table.rows(), h = table.cols();
  check(!ids.empty(), "embedding: empty id list");
  std::vector<T> out(ids.size() * h);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] < vocab, "embedding: id out of range");
    std::copy_n(tv.begin() + ids[i] * h, h, out.begin() + i * h);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_op<T>("embedding", {ids.size(), h}, std::move(out), {table},
                    [table, idv = std::move(idv), h](std::span<const T> g) {
                      auto gt = table.node()->ensure_grad();
                      for (std::size_t i = 0; i < idv.size(); ++i) {
                        for (std::size_t c = 0; c < h; ++c) gt[idv[i] * h + c] += g[i * h + c];
                      }
                    });
}

template <class T>
BasicTensor<T> sinusoidal_encoding(std::span<const double> positions, std::size_t dim) {
  check(dim >= 2 && dim % 2 == 0, "sinusoidal_encoding: dim must be even");
  check(!positions.empty(), "sinusoidal_encoding: no positions");
  const std::size_t half = dim / 2;
  std::vector<T> out(positions.size() * dim);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
      out[i * dim + k] = static_cast<T>(std::sin(positions[i] * freq));
      out[i * dim + half + k] = static_cast<T>(std::cos(positions[i] * freq));
    }
  }
  return BasicTensor<T>::from_data({positions.size(), dim}, std::move(out));
}

template <class T>
BasicTensor<T> sinusoidal_positions(std::size_t count, std::size_t dim) {
  std::vector<double> pos(count);
  std::iota(pos.begin(), pos.end(), 0.0);
  return sinusoidal_encoding<T>(pos, dim);
}

template <class T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& query, const BasicTensor<T>& key,
                                    const BasicTensor<T>& value,
                                    const AttentionParams<T>& params, std::size_t heads) {
  const std::size_t h = query.cols();
  if (heads == 0 || h % heads != 0) {
    throw std::invalid_argument("multi_head_attention: width " + std::to_string(h) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  check(key.cols() == h && value.cols() == h, "multi_head_attention: width mismatch");
  check(key.rows() == value.rows(), "multi_head_attention: key/value length mismatch");
  const std::size_t dh = h / heads;
  const T inv_scale = T(1) / std::sqrt(T(dh));
  auto q = linear(query, params.wq, params.bq);
  auto k = linear(key, params.wk, params.bk);
  auto v = linear(value, params.wv, params.bv);
  std::vector<BasicTensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t b = head * dh, e = b + dh;
    auto qh = heads == 1 ? q : slice_cols(q, b, e);
    auto kh = heads == 1 ? k : slice_cols(k, b, e);
    auto vh = heads == 1 ? v : slice_cols(v, b, e);
    auto weights = softmax(scale(matmul_bt(qh, kh), inv_scale), 1);
    outs.push_back(matmul(weights, vh));
  }
  auto joined = heads == 1 ? outs.front() : concat_cols<T>(outs);
  return linear(joined, params.wo, params.bo);
}

// ---- instantiations --------------------------------------------------------

#define DANCEDIT_INSTANTIATE(T)                                                        \
  template class BasicTensor<T>;                                                       \
  template BasicTensor<T> make_op<T>(const char*, Shape, std::vector<T>,              \
                                     std::vector<BasicTensor<T>>,                      \
                                     std::function<void(std::span<const T>)>);         \
  template void backward<T>(const BasicTensor<T>&);                                    \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> matmul_bt<T>(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                         \
  template BasicTensor<T> linear<T>(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                    const BasicTensor<T>&);                            \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                          \
  template BasicTensor<T> add_scalar<T>(const BasicTensor<T>&, T);                     \
  template BasicTensor<T> square<T>(const BasicTensor<T>&);                            \
  template BasicTensor<T> gelu<T>(const BasicTensor<T>&);                              \
  template BasicTensor<T> exp<T>(const BasicTensor<T>&);                               \
  template BasicTensor<T> softmax<T>(const BasicTensor<T>&, int);                      \
  template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&,  \
                                        const BasicTensor<T>&, T);                     \
  template BasicTensor<T> adain<T>(const BasicTensor<T>&, const BasicTensor<T>&, T);   \
  template BasicTensor<T> l2_normalize_rows<T>(const BasicTensor<T>&, T);              \
  template BasicTensor<T> sum<T>(const BasicTensor<T>&);                               \
  template BasicTensor<T> mean<T>(const BasicTensor<T>&);                              \
  template BasicTensor<T> mean_rows<T>(const BasicTensor<T>&);                         \
  template BasicTensor<T> max_cols<T>(const BasicTensor<T>&);                          \
  template BasicTensor<T> mse<T>(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> cross_entropy_rows<T>(const BasicTensor<T>&,                 \
                                                std::span<const std::size_t>);         \
  template BasicTensor<T> slice_rows<T>(const BasicTensor<T>&, std::size_t, std::size_t); \
  template BasicTensor<T> slice_cols<T>(const BasicTensor<T>&, std::size_t, std::size_t); \
  template BasicTensor<T> concat_rows<T>(std::span<const BasicTensor<T>>);             \
  template BasicTensor<T> concat_cols<T>(std::span<const BasicTensor<T>>);             \
  template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                    \
  template BasicTensor<T> tile_rows<T>(const BasicTensor<T>&, std::size_t);            \
  template BasicTensor<T> embedding<T>(const BasicTensor<T>&, std::span<const std::size_t>); \
  template BasicTensor<T> sinusoidal_encoding<T>(std::span<const double>, std::size_t); \
  template BasicTensor<T> sinusoidal_positions<T>(std::size_t, std::size_t);           \
  template BasicTensor<T> multi_head_attention<T>(                                     \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,             \
      const AttentionParams<T>&, std::size_t);

DANCEDIT_INSTANTIATE(float)
DANCEDIT_INSTANTIATE(double)

#undef DANCEDIT_INSTANTIATE

}  // namespace dancedit
