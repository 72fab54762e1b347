#pragma once

// Music-conditioned transformer denoiser (x0 prediction), its losses, the
// generation trainer and the sampler front end.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dancedit/diffusion/config.hpp"
#include "dancedit/diffusion/schedule.hpp"
#include "dancedit/motion/motion.hpp"
#include "dancedit/music/music.hpp"
#include "dancedit/tensor/nn.hpp"

namespace dancedit::diffusion {

struct ModelShape {
  std::size_t H = 128;
  std::size_t K = 4;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  std::size_t music_width = music::kDefaultMusicWidth;
  int T = kDefaultDiffusionSteps;

  static ModelShape from_config(const TrainConfig& c, std::size_t music_width);
  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

// Per-channel affine map into the space the diffusion runs in. Channels with
// std below the floor use the floor.
struct Normalizer {
  std::vector<float> mean;
  std::vector<float> std;

  static Normalizer identity(std::size_t width = motion::kFeatureWidth);
  static Normalizer fit(const std::vector<Tensor>& motions, float std_floor = 1e-2f);
  Tensor normalize(const Tensor& x) const;
  // Differentiable in x.
  Tensor denormalize(const Tensor& x) const;
};

struct DenoiserBlock {
  LayerNorm ln_self, ln_cross, ln_ff;
  Attention self_attn, cross_attn;
  FeedForward ff;

  // Self-attention over frames, cross-attention to the music frames, then a
  // feed-forward layer; each pre-normalized and residual.
  Tensor operator()(const Tensor& h, const Tensor& music_emb) const;
};

class DenoiserModel {
 public:
  DenoiserModel(const ModelShape& shape, std::uint64_t seed, std::string prefix = "gen/");

  const ModelShape& shape() const { return shape_; }
  const std::string& prefix() const { return prefix_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  Normalizer& normalizer() { return normalizer_; }
  const Normalizer& normalizer() const { return normalizer_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  // x_t and the result live in normalized feature space. `block_residuals`,
  // when given, holds one [N×H] tensor per block added to that block's output.
  Tensor forward(const Tensor& x_t, int t, const Tensor& music,
                 const std::vector<Tensor>* block_residuals = nullptr) const;

  Tensor embed_motion(const Tensor& x) const;
  Tensor embed_music(const Tensor& music) const;
  Tensor embed_time(int t) const;
  // Adds the timestep embedding to the block input, then runs block k.
  Tensor run_block(std::size_t k, const Tensor& h, const Tensor& t_emb,
                   const Tensor& music_emb) const;
  Tensor head(const Tensor& h) const;

  // Copies every parameter value and the normalizer from `other`, which must
  // have the same shape.
  void copy_from(const DenoiserModel& other);

  // Parameters, normalizer and shape metadata under this model's prefix.
  std::vector<Parameter> export_tensors() const;
  static std::unique_ptr<DenoiserModel> from_tensors(const std::vector<Parameter>& tensors,
                                                     const std::string& prefix = "gen/");
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<DenoiserModel> load(const std::filesystem::path& path);

 private:
  ModelShape shape_;
  std::string prefix_;
  ParameterSet params_;
  Normalizer normalizer_;
  NoiseSchedule schedule_;
  Linear in_proj_, music_proj_, out_proj_;
  TimestepMlp time_mlp_;
  std::vector<DenoiserBlock> blocks_;
  LayerNorm final_ln_;
};

// ---- losses ----------------------------------------------------------------

struct LossBreakdown {
  double simple = 0.0, vel = 0.0, foot = 0.0, total = 0.0;
};

struct LossTerms {
  Tensor simple, vel, foot, total;
  LossBreakdown values() const;
};

Tensor loss_simple(const Tensor& x0, const Tensor& x0_hat);
Tensor loss_vel(const Tensor& x0, const Tensor& x0_hat);
// x0_hat in raw feature units; contacts is [N×4] ground truth.
Tensor loss_foot(const Tensor& x0_hat, const motion::Skeleton& skel, const Tensor& contacts);
// Contact columns of raw features as an [N×4] tensor.
Tensor contact_columns(const Tensor& features);

// total = lambda_simple·simple + vel + foot. x0 and x0_hat are normalized;
// the foot term is evaluated on denormalized predictions.
LossTerms diffusion_losses(const Tensor& x0_norm, const Tensor& x0_hat_norm,
                           const Tensor& contacts, const Normalizer& norm,
                           const motion::Skeleton& skel, float lambda_simple);

// ---- training --------------------------------------------------------------

struct GenExample {
  motion::MotionSequence motion;
  music::MusicFeatures music;
};

struct TrainHistory {
  std::vector<LossBreakdown> steps;
  void write_csv(const std::filesystem::path& path) const;
};

using StepCallback = std::function<void(long step, long total, const LossBreakdown&)>;

struct GenTrainResult {
  std::unique_ptr<DenoiserModel> model;
  TrainHistory history;
};

// One training target: normalized clean motion plus raw contact labels.
struct DiffusionTarget {
  Tensor x0_norm;
  Tensor contacts;
};

// Returns the normalized x0 prediction for target `index` at noise level t.
using PredictFn = std::function<Tensor(std::size_t index, const Tensor& x_t, int t)>;

// The shared optimization loop: per-epoch shuffles, uniform t in [1, T], the
// weighted objective, AdamW over `params`. Deterministic given config.seed.
TrainHistory run_diffusion_loop(const std::vector<DiffusionTarget>& targets,
                                const Normalizer& norm, const NoiseSchedule& sched,
                                const std::vector<Tensor>& params, const TrainConfig& config,
                                const PredictFn& predict, const StepCallback& on_step = {});

GenTrainResult train_generation(const std::vector<GenExample>& data, const TrainConfig& config,
                                const StepCallback& on_step = {});

// ---- sampling --------------------------------------------------------------

// Raw [N×151] features for the music's length.
Tensor sample_features(const DenoiserModel& model, const music::MusicFeatures& music,
                       int steps = kDefaultSamplingSteps, std::uint64_t seed = 0,
                       double eta = 0.0);
motion::MotionSequence sample_motion(const DenoiserModel& model,
                                     const music::MusicFeatures& music,
                                     int steps = kDefaultSamplingSteps, std::uint64_t seed = 0,
                                     double eta = 0.0);

}  // namespace dancedit::diffusion
