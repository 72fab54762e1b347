#pragma once

#include <vector>

#include "dancedit/tensor/tensor.hpp"

namespace dancedit {

struct AdamWConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  float grad_clip = 1.0f;  // global L2 norm; <= 0 disables
};

// Decoupled weight decay Adam. Parameters without a gradient are skipped.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // Returns the pre-clip global gradient norm.
  double step();
  void set_lr(float lr) { config_.lr = lr; }
  float lr() const { return config_.lr; }
  long steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  AdamWConfig config_;
  long t_ = 0;
};

}  // namespace dancedit
