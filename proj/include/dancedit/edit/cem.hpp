#pragma once

// Editing branch: a trainable copy of the denoiser that reads the previous
// motion and the prompt, fuses them through the cross-modality editing module
// and feeds zero-initialized residuals into the frozen generation model.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dancedit/diffusion/denoiser.hpp"
#include "dancedit/edit/text.hpp"

namespace dancedit::edit {

// ---- module algebra ----------------------------------------------------------

// queries = music + timestep, keys/values = current noisy-motion embedding;
// the attention output is added to x_emb.
Tensor music_query_cross_attention(const Tensor& x_emb, const Tensor& t_emb,
                                   const Tensor& music_emb, const Attention& attn);

struct CorrelationMatrices {
  Tensor m_edit;  // [N×N] current frames × text frames
  Tensor m_init;  // [N×N] initial frames × text frames
};

// M = (f·Wq)(text·Wk)ᵀ/√H with Wq, Wk shared between the two matrices.
CorrelationMatrices correlation_matrices(const Tensor& f_cur, const Tensor& f_init,
                                         const Tensor& text, const Tensor& wq, const Tensor& wk);

// [N×1]: σ_i = softmax(max_j M_edit[i,j], max_j M_init[i,j])[0].
Tensor fusion_weights(const CorrelationMatrices& m);

// σ·f_init + (1 − σ)·f_cur, σ broadcast per row.
Tensor fuse(const Tensor& f_init, const Tensor& f_cur, const Tensor& sigma);

// Correlation, fusion weights, fuse and AdaIN(f_cur, fusion). Writes σ to
// `sigma_out` when given.
Tensor cem_step(const Tensor& f_cur, const Tensor& f_init, const Tensor& text, const Tensor& wq,
                const Tensor& wk, Tensor* sigma_out = nullptr);

// ---- model -------------------------------------------------------------------

struct EditingOptions {
  bool use_cem = true;
  std::size_t token_width = 32;
};

struct EditExample {
  music::MusicFeatures music;
  motion::MotionSequence init;
  std::string prompt;
  motion::MotionSequence edited;
};

class EditingModel {
 public:
  // Prepared conditioning for one (music, previous motion, prompt) triple.
  struct Condition {
    Tensor music;
    Tensor init_norm;
    std::vector<std::size_t> prompt_ids;
  };

  // The trunk starts as a copy of `base`; every connection into the base is
  // zero, so the branch contributes nothing until trained.
  EditingModel(std::shared_ptr<const diffusion::DenoiserModel> base, Vocab vocab,
               EditingOptions options, std::uint64_t seed);

  const diffusion::DenoiserModel& base() const { return *base_; }
  std::shared_ptr<const diffusion::DenoiserModel> base_ptr() const { return base_; }
  const Vocab& vocab() const { return vocab_; }
  const EditingOptions& options() const { return options_; }
  // Disabling CEM gives the branch-without-CEM ablation on the same weights.
  void set_cem_enabled(bool on) { options_.use_cem = on; }

  std::vector<Tensor> trainable() const;
  // All editing parameters, named under "edit/".
  std::vector<Parameter> parameters() const;

  Condition prepare(const music::MusicFeatures& music, const motion::MotionSequence& init,
                    const std::string& prompt) const;

  // One [N×H] residual per base block.
  std::vector<Tensor> residuals(const Tensor& x_t, int t, const Condition& c,
                                std::vector<Tensor>* sigmas = nullptr) const;
  // Normalized x0 prediction of the combined model.
  Tensor forward(const Tensor& x_t, int t, const Condition& c) const;

  std::vector<Parameter> export_tensors() const;
  // Writes the DEWT file and the vocabulary next to it (extension .vocab).
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<EditingModel> load(const std::filesystem::path& path,
                                            std::shared_ptr<const diffusion::DenoiserModel> base);
  static std::filesystem::path vocab_path(const std::filesystem::path& weights);

 private:
  std::shared_ptr<const diffusion::DenoiserModel> base_;
  Vocab vocab_;
  EditingOptions options_;
  diffusion::DenoiserModel trunk_;
  ParameterSet params_;
  TextEncoder text_;
  Linear hint_;
  Attention mqca_;
  std::vector<Tensor> wq_, wk_;
  std::vector<Linear> zero_;
};

// x0 prediction of the combined model, normalized space.
Tensor edit_denoise(const EditingModel& model, const Tensor& x_t, int t,
                    const EditingModel::Condition& c);

struct EditTrainResult {
  std::unique_ptr<EditingModel> model;
  diffusion::TrainHistory history;
};

// The base is copied and frozen; `base` itself is not touched.
EditTrainResult train_editing(const std::vector<EditExample>& data,
                              const diffusion::DenoiserModel& base, const TrainConfig& config,
                              EditingOptions options = {},
                              const diffusion::StepCallback& on_step = {});

// Raw [N×151] features of an edit sampled with DDIM.
Tensor sample_edit_features(const EditingModel& model, const music::MusicFeatures& music,
                            const motion::MotionSequence& init, const std::string& prompt,
                            int steps = diffusion::kDefaultSamplingSteps, std::uint64_t seed = 0,
                            double eta = 0.0);
motion::MotionSequence sample_edit(const EditingModel& model, const music::MusicFeatures& music,
                                   const motion::MotionSequence& init, const std::string& prompt,
                                   int steps = diffusion::kDefaultSamplingSteps,
                                   std::uint64_t seed = 0, double eta = 0.0);

}  // namespace dancedit::edit
