#pragma once

// Evaluation metrics: FID and Diversity over autoencoder features, beat
// alignment, physical foot contact, and the learned edit-text distance.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dancedit/diffusion/denoiser.hpp"
#include "dancedit/edit/text.hpp"
#include "dancedit/motion/motion.hpp"
#include "dancedit/tensor/nn.hpp"

namespace dancedit::metrics {

using FeatureSet = std::vector<std::vector<double>>;

// ---- autoencoder -----------------------------------------------------------

struct AutoencoderConfig {
  std::size_t bottleneck = 32;
  std::size_t hidden = 128;
  int steps = 300;
  float lr = 1e-3f;
  std::size_t max_rows = 4096;  // frames per step, strided over the corpus
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static AutoencoderConfig from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kMinAutoencoderCorpus = 16;

// Per-frame MLP encoder (N×151 → N×E) and mirrored decoder, in normalized
// feature space. A default-constructed autoencoder is untrained and throws
// std::logic_error from every encoding call.
class MotionAutoencoder {
 public:
  MotionAutoencoder() = default;
  MotionAutoencoder(std::size_t bottleneck, std::size_t hidden, std::uint64_t seed);

  bool trained() const { return trained_; }
  std::size_t bottleneck() const { return bottleneck_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  diffusion::Normalizer& normalizer() { return normalizer_; }
  void mark_trained() { trained_ = true; }

  // Normalized features in, [N×E] out. Differentiable; no trained check.
  Tensor encode_normalized(const Tensor& x_norm) const;
  Tensor decode_normalized(const Tensor& z) const;

  Tensor encode(const motion::MotionSequence& seq) const;
  // Time-mean of the bottleneck.
  std::vector<double> features(const motion::MotionSequence& seq) const;
  double reconstruction_mse(const motion::MotionSequence& seq) const;

  std::vector<Parameter> export_tensors() const;
  void save(const std::filesystem::path& path) const;
  static MotionAutoencoder load(const std::filesystem::path& path);

 private:
  void require_trained() const;

  std::size_t bottleneck_ = 0;
  std::size_t hidden_ = 0;
  bool trained_ = false;
  ParameterSet params_;
  diffusion::Normalizer normalizer_;
  Linear enc1_, enc2_, dec1_, dec2_;
};

struct AutoencoderResult {
  MotionAutoencoder model;
  std::vector<double> losses;  // full-batch MSE before each step
};

// Full-batch AdamW on every frame of the corpus.
AutoencoderResult train_autoencoder(const std::vector<motion::MotionSequence>& corpus,
                                    const AutoencoderConfig& config);

// ---- distribution metrics ---------------------------------------------------

inline constexpr double kFidRidge = 1e-6;

double fid(const FeatureSet& a, const FeatureSet& b);
double frechet_distance(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a,
                        const Eigen::VectorXd& mean_b, const Eigen::MatrixXd& cov_b);

// Exhaustive over unordered pairs up to kExhaustiveDiversity features,
// otherwise `pairs` seeded draws with i ≠ j.
inline constexpr std::size_t kExhaustiveDiversity = 20;
double diversity(const FeatureSet& features, std::uint64_t seed, std::size_t pairs = 200);

// ---- per-sequence metrics ---------------------------------------------------

inline constexpr double kDefaultBeatSigma = 3.0;

double bas(const std::vector<std::uint32_t>& music_beats,
           const std::vector<std::uint32_t>& motion_beats, double sigma = kDefaultBeatSigma);

// Frames 1..N−2: horizontal root acceleration (second difference) times the
// forward speed of each foot, a foot being the slower of its ankle and toe.
// Normalized by the largest root acceleration.
double pfc(const motion::MotionSequence& seq, const motion::Skeleton& skel);
// Same on joint positions; `feet` is left ankle, right ankle, left toe, right toe.
double pfc(const motion::JointPositions& positions, const std::array<std::size_t, 4>& feet);

// ---- edit-text distance ----------------------------------------------------

double cosine_distance(const std::vector<float>& a, const std::vector<float>& b);

struct MeasConfig {
  std::size_t embed = 32;
  std::size_t hidden = 128;
  std::size_t token_width = 32;
  int steps = 400;
  std::size_t batch = 16;  // examples per step, all with distinct prompts
  float lr = 1e-3f;
  float temperature = 0.1f;
  // Upper bound on the std of the drift and jitter added to training deltas.
  // Generated edits carry small changes on every channel; ground truth does not.
  float noise = 0.03f;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static MeasConfig from_json(const nlohmann::json& j);
};

struct MeasExample {
  motion::MotionSequence init;
  motion::MotionSequence edited;
  std::string prompt;
};

// Per channel, mean and root-mean-square of (edited − init) over time.
inline constexpr std::size_t kPairFeatureWidth = 2 * motion::kFeatureWidth;
std::vector<float> pair_features(const motion::MotionSequence& init,
                                 const motion::MotionSequence& edited);

// Dual encoder: pair MLP and prompt encoder into a shared unit sphere. A
// default-constructed scorer is untrained and throws std::logic_error.
class MeasScorer {
 public:
  MeasScorer() = default;
  MeasScorer(edit::Vocab vocab, const MeasConfig& config);

  bool trained() const { return trained_; }
  const edit::Vocab& vocab() const { return vocab_; }
  ParameterSet& params() { return params_; }
  void mark_trained() { trained_ = true; }
  void set_feature_scale(std::vector<float> scale) { scale_ = std::move(scale); }

  // Rows of pair features → unit rows [B×E]. Differentiable.
  Tensor embed_pairs(const Tensor& features) const;
  Tensor embed_prompts(const std::vector<std::vector<std::size_t>>& ids) const;
  Tensor feature_rows(const std::vector<std::vector<float>>& features) const;

  std::vector<float> pair_embedding(const motion::MotionSequence& init,
                                    const motion::MotionSequence& edited) const;
  std::vector<float> text_embedding(const std::string& prompt) const;
  double distance(const motion::MotionSequence& init, const motion::MotionSequence& edited,
                  const std::string& prompt) const;

  std::vector<Parameter> export_tensors() const;
  // Writes the weights and a vocabulary file next to them.
  void save(const std::filesystem::path& path) const;
  static MeasScorer load(const std::filesystem::path& path);

 private:
  void require_trained() const;

  MeasConfig config_;
  edit::Vocab vocab_;
  bool trained_ = false;
  std::vector<float> scale_;
  ParameterSet params_;
  Linear pair1_, pair2_;
  edit::TextEncoder text_;
};

struct MeasResult {
  MeasScorer scorer;
  std::vector<double> losses;
};

// Symmetric InfoNCE over the full batch.
MeasResult train_meas(const std::vector<MeasExample>& data, const MeasConfig& config);

double meas(const MeasScorer& scorer, const motion::MotionSequence& init,
            const motion::MotionSequence& edited, const std::string& prompt);

// ---- report -----------------------------------------------------------------

struct MetricReport {
  double fid = 0.0;
  double bas = 0.0;
  double diversity = 0.0;
  double pfc = 0.0;
  double meas = 0.0;
  std::size_t generated = 0;
  std::size_t reference = 0;
  std::size_t edit_pairs = 0;

  nlohmann::json to_json() const;
  // Columns FID, BAS, Diversity, PFC, MEAS.
  std::string table() const;
};

struct GeneratedDance {
  motion::MotionSequence motion;
  std::vector<std::uint32_t> music_beats;
};

// FID, BAS, Diversity and PFC of `generated` against `reference`. MEAS stays 0
// with edit_pairs = 0 until add_meas is called.
MetricReport evaluate(const std::vector<GeneratedDance>& generated,
                      const std::vector<motion::MotionSequence>& reference,
                      const MotionAutoencoder& ae, std::uint64_t seed);
void add_meas(MetricReport& report, const MeasScorer& scorer,
              const std::vector<MeasExample>& edits);

}  // namespace dancedit::metrics
