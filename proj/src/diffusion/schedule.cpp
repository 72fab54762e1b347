#include "dancedit/diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dancedit::diffusion {

NoiseSchedule cosine_schedule(int T) {
  if (T < 2) throw std::invalid_argument("cosine_schedule: T must be at least 2");
  constexpr double s = 0.008;
  auto f = [&](int t) {
    const double c = std::cos(((double(t) / T + s) / (1.0 + s)) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule sched;
  sched.T = T;
  sched.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  const double f0 = f(0);
  for (int t = 0; t <= T; ++t) {
    sched.alpha_bar[t] = std::clamp(f(t) / f0, 1e-9, 1.0);
  }
  sched.alpha_bar[0] = 1.0;
  return sched;
}

Tensor add_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) throw std::invalid_argument("add_noise: shape mismatch");
  if (t < 1 || t > sched.T) throw std::invalid_argument("add_noise: t out of range");
  const double a = sched.at(t);
  return add(scale(x0, float(std::sqrt(a))), scale(eps, float(std::sqrt(1.0 - a))));
}

Tensor gaussian(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

Tensor gaussian(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gaussian(std::move(shape), rng);
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("ddim: steps must be in [1, T]");
  std::vector<int> ts;
  for (int k = steps; k >= 0; --k) {
    ts.push_back(static_cast<int>((static_cast<long long>(T) * k) / steps));
  }
  return ts;
}

Tensor ddim_sample(const NoiseSchedule& sched, const DenoiseFn& denoise, const Shape& shape,
                   int steps, std::uint64_t seed, double eta) {
  if (sched.alpha_bar.size() != static_cast<std::size_t>(sched.T) + 1 || sched.T < 2) {
    throw std::invalid_argument("ddim_sample: degenerate schedule");
  }
  if (eta < 0.0) throw std::invalid_argument("ddim_sample: eta must be non-negative");
  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  Tensor x = gaussian(shape, rng);
  const auto ts = ddim_timesteps(sched.T, steps);
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t = ts[k], prev = ts[k + 1];
    Tensor x0_hat = denoise(x, t);
    if (x0_hat.shape() != shape) throw std::runtime_error("ddim_sample: denoiser changed shape");
    if (prev == 0) {
      x = x0_hat;
      break;
    }
    const double a_t = sched.at(t), a_prev = sched.at(prev);
    const double sigma =
        eta * std::sqrt((1.0 - a_prev) / (1.0 - a_t)) * std::sqrt(1.0 - a_t / a_prev);
    // eps implied by the x0 prediction
    Tensor eps = scale(sub(x, scale(x0_hat, float(std::sqrt(a_t)))),
                       float(1.0 / std::sqrt(1.0 - a_t)));
    const double dir = std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma));
    x = add(scale(x0_hat, float(std::sqrt(a_prev))), scale(eps, float(dir)));
    if (sigma > 0.0) x = add(x, scale(gaussian(shape, rng), float(sigma)));
  }
  return x;
}

}  // namespace dancedit::diffusion
