#include "dancedit/tensor/optim.hpp"

#include <cmath>

namespace dancedit {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0f);
    v_.emplace_back(p.size(), 0.0f);
  }
}

double AdamW::step() {
  ++t_;
  double norm_sq = 0.0;
  for (const auto& p : params_) {
    for (const float g : p.grad()) norm_sq += double(g) * g;
  }
  const double norm = std::sqrt(norm_sq);
  float clip = 1.0f;
  if (config_.grad_clip > 0.0f && norm > config_.grad_clip) {
    clip = static_cast<float>(config_.grad_clip / norm);
  }
  const float bc1 = 1.0f - std::pow(config_.beta1, float(t_));
  const float bc2 = 1.0f - std::pow(config_.beta2, float(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto value = p.mutable_data();
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const float g = grad[j] * clip;
      m[j] = config_.beta1 * m[j] + (1.0f - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0f - config_.beta2) * g * g;
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      value[j] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                                config_.weight_decay * value[j]);
    }
  }
  return norm;
}

}  // namespace dancedit
