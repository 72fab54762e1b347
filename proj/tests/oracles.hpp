#pragma once

// Independent reference implementations used to freeze expected values.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

namespace dancedit::testing {

// Minimum summed |a_i − b_j| over every monotone boundary-to-boundary path,
// by explicit enumeration.
inline double brute_force_dtw(const std::vector<std::uint32_t>& a,
                              const std::vector<std::uint32_t>& b) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j,
                                                                   double acc) {
    acc += std::abs(double(a[i]) - double(b[j]));
    if (i + 1 == a.size() && j + 1 == b.size()) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < a.size()) walk(i + 1, j, acc);
    if (j + 1 < b.size()) walk(i, j + 1, acc);
    if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

// Mean over music beats of the best Gaussian score against any motion beat.
inline double brute_force_bas(const std::vector<std::uint32_t>& music,
                              const std::vector<std::uint32_t>& motion, double sigma) {
  double total = 0.0;
  for (auto m : music) {
    double best = 0.0;
    for (auto b : motion) {
      const double d = double(m) - double(b);
      best = std::max(best, std::exp(-d * d / (2.0 * sigma * sigma)));
    }
    total += best;
  }
  return total / double(music.size());
}

// Mean Euclidean distance over all ordered pairs i != j.
inline double exhaustive_diversity(const std::vector<std::vector<double>>& f) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t j = 0; j < f.size(); ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < f[i].size(); ++c) s += (f[i][c] - f[j][c]) * (f[i][c] - f[j][c]);
      total += std::sqrt(s);
      ++count;
    }
  }
  return total / double(count);
}

// Fréchet distance for 2-D Gaussians. The product of two SPD matrices has
// positive eigenvalues l1, l2, and (sqrt l1 + sqrt l2)^2 = tr + 2 sqrt(det).
inline double frechet_2d(const double ma[2], const double ca[4], const double mb[2],
                         const double cb[4]) {
  const double p00 = ca[0] * cb[0] + ca[1] * cb[2];
  const double p01 = ca[0] * cb[1] + ca[1] * cb[3];
  const double p10 = ca[2] * cb[0] + ca[3] * cb[2];
  const double p11 = ca[2] * cb[1] + ca[3] * cb[3];
  const double tr = p00 + p11;
  const double det = p00 * p11 - p01 * p10;
  const double tr_sqrt = std::sqrt(tr + 2.0 * std::sqrt(det));
  const double dx = ma[0] - mb[0], dy = ma[1] - mb[1];
  return dx * dx + dy * dy + ca[0] + ca[3] + cb[0] + cb[3] - 2.0 * tr_sqrt;
}

}  // namespace dancedit::testing
