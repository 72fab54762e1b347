#pragma once

// Central finite-difference gradient checker for the double-precision engine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dancedit/tensor/tensor.hpp"

namespace dancedit::testing {

using Fn64 = std::function<Tensor64(const std::vector<Tensor64>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Error metric is |analytic − numeric| / max(1, |numeric|).
inline GradCheckResult grad_check(const Fn64& f, std::vector<Tensor64> inputs,
                                  double h = 1e-3) {
  for (auto& t : inputs) {
    t = t.clone(true);
  }
  Tensor64 loss = f(inputs);
  backward(loss);
  GradCheckResult res;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        plus = f(inputs).item();
        values[i] = saved - h;
        minus = f(inputs).item();
        values[i] = saved;
      }
      const double numeric = (plus - minus) / (2 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  return res;
}

inline Tensor64 random64(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor64::from_data(std::move(shape), std::move(v));
}

}  // namespace dancedit::testing
