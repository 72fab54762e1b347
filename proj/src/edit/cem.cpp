#include "dancedit/edit/cem.hpp"

#include <cmath>
#include <stdexcept>

#include "dancedit/io/binary.hpp"
#include "dancedit/tensor/weights_io.hpp"

namespace dancedit::edit {

using diffusion::DenoiserModel;

Tensor music_query_cross_attention(const Tensor& x_emb, const Tensor& t_emb,
                                   const Tensor& music_emb, const Attention& attn) {
  if (x_emb.cols() != music_emb.cols() || t_emb.cols() != x_emb.cols()) {
    throw std::invalid_argument("music_query_cross_attention: width mismatch");
  }
  return add(x_emb, attn(add(music_emb, t_emb), x_emb));
}

CorrelationMatrices correlation_matrices(const Tensor& f_cur, const Tensor& f_init,
                                         const Tensor& text, const Tensor& wq, const Tensor& wk) {
  if (f_cur.shape() != f_init.shape() || f_cur.shape() != text.shape()) {
    throw std::invalid_argument("correlation_matrices: f_cur, f_init and text must be N×H");
  }
  const float inv = 1.0f / std::sqrt(float(f_cur.cols()));
  const Tensor keys = matmul(text, wk);
  return {scale(matmul_bt(matmul(f_cur, wq), keys), inv),
          scale(matmul_bt(matmul(f_init, wq), keys), inv)};
}

Tensor fusion_weights(const CorrelationMatrices& m) {
  if (m.m_edit.shape() != m.m_init.shape()) {
    throw std::invalid_argument("fusion_weights: matrix shapes differ");
  }
  const std::vector<Tensor> pooled{max_cols(m.m_edit), max_cols(m.m_init)};
  return slice_cols(softmax(concat_cols<float>(pooled), 1), 0, 1);
}

Tensor fuse(const Tensor& f_init, const Tensor& f_cur, const Tensor& sigma) {
  if (f_init.shape() != f_cur.shape() || sigma.rows() != f_cur.rows() || sigma.cols() != 1) {
    throw std::invalid_argument("fuse: shape mismatch");
  }
  return add(mul(f_init, sigma), mul(f_cur, add_scalar(scale(sigma, -1.0f), 1.0f)));
}

Tensor cem_step(const Tensor& f_cur, const Tensor& f_init, const Tensor& text, const Tensor& wq,
                const Tensor& wk, Tensor* sigma_out) {
  const Tensor sigma = fusion_weights(correlation_matrices(f_cur, f_init, text, wq, wk));
  if (sigma_out) *sigma_out = sigma;
  return adain(f_cur, fuse(f_init, f_cur, sigma));
}

// ---- model -------------------------------------------------------------------

namespace {

const std::string kPrefix = "edit/";
const std::string kTrunkPrefix = "edit/trunk/";

}  // namespace

EditingModel::EditingModel(std::shared_ptr<const DenoiserModel> base, Vocab vocab,
                           EditingOptions options, std::uint64_t seed)
    : base_(std::move(base)),
      vocab_(std::move(vocab)),
      options_(options),
      trunk_(base_ ? base_->shape() : diffusion::ModelShape{}, seed, kTrunkPrefix) {
  if (!base_) throw std::invalid_argument("editing model needs a base model");
  if (options_.token_width == 0) throw std::invalid_argument("token_width must be positive");
  trunk_.copy_from(*base_);
  const std::size_t h = base_->shape().H;
  Initializer init(seed ^ 0xED17ULL);
  text_ = TextEncoder::create(params_, kPrefix + "text", vocab_.size(), options_.token_width, h,
                              init);
  hint_ = Linear::create(params_, kPrefix + "hint", h, h, init);
  mqca_ = Attention::create(params_, kPrefix + "mqca", h, base_->shape().heads, init);
  for (std::size_t k = 0; k < base_->shape().K; ++k) {
    const std::string b = kPrefix + "cem" + std::to_string(k);
    wq_.push_back(params_.add(b + ".wq", init.xavier(h, h)));
    wk_.push_back(params_.add(b + ".wk", init.xavier(h, h)));
    zero_.push_back(Linear::create(params_, kPrefix + "zero" + std::to_string(k), h, h, init,
                                   /*zero=*/true));
  }
}

std::vector<Tensor> EditingModel::trainable() const {
  auto out = trunk_.params().tensors();
  for (const auto& t : params_.tensors()) out.push_back(t);
  return out;
}

std::vector<Parameter> EditingModel::parameters() const {
  std::vector<Parameter> out = trunk_.params().items();
  for (const auto& p : params_.items()) out.push_back(p);
  return out;
}

EditingModel::Condition EditingModel::prepare(const music::MusicFeatures& music,
                                              const motion::MotionSequence& init,
                                              const std::string& prompt) const {
  init.validate();
  music.validate();
  if (init.size() != music.size()) {
    throw std::invalid_argument("edit: initial motion and music lengths differ");
  }
  Condition c;
  c.music = music.tensor();
  c.init_norm = base_->normalizer().normalize(motion::flatten(init));
  c.prompt_ids = vocab_.encode(prompt);
  return c;
}

std::vector<Tensor> EditingModel::residuals(const Tensor& x_t, int t, const Condition& c,
                                            std::vector<Tensor>* sigmas) const {
  if (x_t.shape() != c.init_norm.shape()) {
    throw std::invalid_argument("edit: x_t and initial motion shapes differ");
  }
  const Tensor m_emb = trunk_.embed_music(c.music);
  const Tensor te = trunk_.embed_time(t);
  const Tensor text = text_.encode(c.prompt_ids, x_t.rows()).per_frame;
  const Tensor f_init = trunk_.embed_motion(c.init_norm);
  const Tensor x_emb = add(trunk_.embed_motion(x_t), hint_(add(f_init, text)));
  Tensor h = music_query_cross_attention(x_emb, te, m_emb, mqca_);
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < zero_.size(); ++k) {
    if (options_.use_cem) {
      Tensor sigma;
      h = cem_step(h, f_init, text, wq_[k], wk_[k], &sigma);
      if (sigmas) sigmas->push_back(sigma);
    }
    h = trunk_.run_block(k, h, te, m_emb);
    out.push_back(zero_[k](h));
  }
  return out;
}

Tensor EditingModel::forward(const Tensor& x_t, int t, const Condition& c) const {
  const auto res = residuals(x_t, t, c);
  return base_->forward(x_t, t, c.music, &res);
}

Tensor edit_denoise(const EditingModel& model, const Tensor& x_t, int t,
                    const EditingModel::Condition& c) {
  return model.forward(x_t, t, c);
}

std::vector<Parameter> EditingModel::export_tensors() const {
  std::vector<Parameter> out;
  const std::vector<float> meta{options_.use_cem ? 1.0f : 0.0f, float(options_.token_width),
                                float(vocab_.size())};
  out.push_back({kPrefix + "meta.options", Tensor::from_data({meta.size()}, meta)});
  for (const auto& p : parameters()) out.push_back({p.name, p.value.detach()});
  return out;
}

std::filesystem::path EditingModel::vocab_path(const std::filesystem::path& weights) {
  auto p = weights;
  p.replace_extension(".vocab");
  return p;
}

void EditingModel::save(const std::filesystem::path& path) const {
  save_weights(path, export_tensors());
  vocab_.save(vocab_path(path));
}

std::unique_ptr<EditingModel> EditingModel::load(const std::filesystem::path& path,
                                                 std::shared_ptr<const DenoiserModel> base) {
  const auto tensors = load_weights(path);
  const Tensor* meta = nullptr;
  for (const auto& p : tensors) {
    if (p.name == kPrefix + "meta.options") meta = &p.value;
  }
  if (!meta || meta->size() != 3) throw io::FormatError("editing weights lack edit/meta.options");
  Vocab vocab = Vocab::load(vocab_path(path));
  if (std::size_t(meta->data()[2]) != vocab.size()) {
    throw io::FormatError("vocabulary size does not match the editing weights");
  }
  EditingOptions opts;
  opts.use_cem = meta->data()[0] != 0.0f;
  opts.token_width = std::size_t(meta->data()[1]);
  auto model = std::make_unique<EditingModel>(std::move(base), std::move(vocab), opts, 0);
  assign_weights(model->trunk_.params(), tensors, kTrunkPrefix);
  assign_weights(model->params_, tensors, kPrefix);
  return model;
}

EditTrainResult train_editing(const std::vector<EditExample>& data, const DenoiserModel& base,
                              const TrainConfig& config, EditingOptions options,
                              const diffusion::StepCallback& on_step) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train_editing: empty dataset");
  auto frozen = std::make_shared<DenoiserModel>(base.shape(), 0, base.prefix());
  frozen->copy_from(base);
  frozen->params().set_trainable(false);

  std::vector<std::string> prompts;
  for (const auto& ex : data) prompts.push_back(ex.prompt);
  EditTrainResult result;
  result.model = std::make_unique<EditingModel>(frozen, Vocab::build(prompts), options,
                                                config.seed);
  EditingModel& model = *result.model;

  std::vector<EditingModel::Condition> conds;
  std::vector<diffusion::DiffusionTarget> targets;
  for (const auto& ex : data) {
    ex.edited.validate();
    if (ex.edited.size() != ex.init.size()) {
      throw std::invalid_argument("train_editing: edited and initial lengths differ");
    }
    conds.push_back(model.prepare(ex.music, ex.init, ex.prompt));
    const Tensor raw = motion::flatten(ex.edited);
    targets.push_back({frozen->normalizer().normalize(raw), diffusion::contact_columns(raw)});
  }
  result.history = diffusion::run_diffusion_loop(
      targets, frozen->normalizer(), frozen->schedule(), model.trainable(), config,
      [&](std::size_t idx, const Tensor& x_t, int t) { return model.forward(x_t, t, conds[idx]); },
      on_step);
  return result;
}

Tensor sample_edit_features(const EditingModel& model, const music::MusicFeatures& music,
                            const motion::MotionSequence& init, const std::string& prompt,
                            int steps, std::uint64_t seed, double eta) {
  NoGradGuard no_grad;
  const auto cond = model.prepare(music, init, prompt);
  auto denoise = [&](const Tensor& x_t, int t) { return model.forward(x_t, t, cond); };
  const Tensor x = diffusion::ddim_sample(model.base().schedule(), denoise,
                                          {music.size(), motion::kFeatureWidth}, steps, seed, eta);
  return model.base().normalizer().denormalize(x);
}

motion::MotionSequence sample_edit(const EditingModel& model, const music::MusicFeatures& music,
                                   const motion::MotionSequence& init, const std::string& prompt,
                                   int steps, std::uint64_t seed, double eta) {
  return motion::unflatten(sample_edit_features(model, music, init, prompt, steps, seed, eta),
                           music.fps);
}

}  // namespace dancedit::edit
