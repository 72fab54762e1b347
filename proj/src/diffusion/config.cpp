#include "dancedit/diffusion/config.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>

#include "dancedit/io/binary.hpp"

namespace dancedit {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (T < 2) fail("T must be at least 2");
  if (steps < 0) fail("steps must be non-negative");
  if (K < 1) fail("K must be at least 1");
  if (H < 2 || H % 2 != 0) fail("H must be even and at least 2");
  if (heads < 1 || H % heads != 0) fail("H must be divisible by heads");
  if (!(lr > 0.0f) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(lambda_simple >= 0.0f)) fail("lambda_simple must be non-negative");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch < 1) fail("batch must be at least 1");
  if (ff_mult < 1) fail("ff_mult must be at least 1");
  if (!std::isfinite(lr_final)) fail("lr_final must be finite");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"T", T},         {"steps", steps},   {"K", K},
          {"H", H},         {"heads", heads},   {"lr", lr},
          {"lambda_simple", lambda_simple},     {"epochs", epochs},
          {"seed", seed},   {"batch", batch},   {"ff_mult", ff_mult},
          {"lr_final", lr_final},               {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  static const std::set<std::string> known{"T",      "steps", "K",     "H",       "heads",
                                           "lr",     "lambda_simple",  "epochs",  "seed",
                                           "batch",  "ff_mult",        "lr_final", "grad_clip"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("config: unknown key \"" + key + "\"");
  }
  TrainConfig c;
  try {
    c.T = j.value("T", c.T);
    c.steps = j.value("steps", c.steps);
    c.K = j.value("K", c.K);
    c.H = j.value("H", c.H);
    c.heads = j.value("heads", c.heads);
    c.lr = j.value("lr", c.lr);
    c.lambda_simple = j.value("lambda_simple", c.lambda_simple);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.batch = j.value("batch", c.batch);
    c.ff_mult = j.value("ff_mult", c.ff_mult);
    c.lr_final = j.value("lr_final", c.lr_final);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

long TrainConfig::total_steps(std::size_t examples) const {
  const long per_epoch = static_cast<long>((examples + batch - 1) / batch);
  const long all = per_epoch * epochs;
  return steps > 0 ? std::min<long>(all, steps) : all;
}

float TrainConfig::lr_at(long step, long total) const {
  if (lr_final < 0.0f || total <= 1) return lr;
  const double progress = double(step) / double(total - 1);
  return static_cast<float>(lr_final + 0.5 * (lr - lr_final) *
                                           (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace dancedit
