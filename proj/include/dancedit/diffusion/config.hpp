#pragma once

// Training configuration shared by every trainer. Stored as a JSON object;
// unknown keys are rejected.

#include <cstdint>
#include <filesystem>

#include <json.hpp>

namespace dancedit {

struct TrainConfig {
  int T = 1000;            // diffusion steps
  int steps = 0;           // optimizer step cap; 0 runs all epochs
  std::size_t K = 4;       // blocks
  std::size_t H = 128;     // hidden width
  std::size_t heads = 4;
  float lr = 1e-4f;
  float lambda_simple = 10.0f;
  int epochs = 100;
  std::uint64_t seed = 0;
  std::size_t batch = 8;
  std::size_t ff_mult = 4;
  float lr_final = -1.0f;  // cosine decay target; negative keeps lr constant
  float grad_clip = 1.0f;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
  // Optimizer steps the trainer will take for a dataset of `examples` items.
  long total_steps(std::size_t examples) const;
  // Learning rate at optimizer step `step` (0-based).
  float lr_at(long step, long total) const;
};

}  // namespace dancedit
