#pragma once

// Variance-preserving cosine noise schedule and the DDIM sampler.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dancedit/tensor/tensor.hpp"

namespace dancedit::diffusion {

inline constexpr int kDefaultDiffusionSteps = 1000;
inline constexpr int kDefaultSamplingSteps = 50;

struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // T+1 entries, alpha_bar[0] = 1

  double at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
};

// alpha_bar_t = f(t)/f(0), f(t) = cos²(((t/T + s)/(1 + s))·π/2), s = 0.008,
// floored at 1e-9 so the table stays strictly decreasing.
NoiseSchedule cosine_schedule(int T = kDefaultDiffusionSteps);

// x_t = sqrt(alpha_bar_t)·x0 + sqrt(1 − alpha_bar_t)·eps
Tensor add_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Seeded standard normal tensor.
Tensor gaussian(Shape shape, std::uint64_t seed);
Tensor gaussian(Shape shape, std::mt19937_64& rng);

// Descending visit order T = t_S > ... > t_0 = 0 with t_k = floor(T·k/S).
std::vector<int> ddim_timesteps(int T, int steps);

// Returns the clean-signal prediction for x_t at step t.
using DenoiseFn = std::function<Tensor(const Tensor& x_t, int t)>;

// DDIM with x0 prediction. With eta = 0 the result is a deterministic function
// of the seed. The final step returns the denoiser's last x0 prediction.
Tensor ddim_sample(const NoiseSchedule& sched, const DenoiseFn& denoise, const Shape& shape,
                   int steps, std::uint64_t seed, double eta = 0.0);

}  // namespace dancedit::diffusion
