#include "dancedit/diffusion/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dancedit/io/binary.hpp"
#include "dancedit/tensor/optim.hpp"
#include "dancedit/tensor/weights_io.hpp"

namespace dancedit::diffusion {

using motion::kContactOffset;
using motion::kContactWidth;
using motion::kFeatureWidth;

ModelShape ModelShape::from_config(const TrainConfig& c, std::size_t music_width) {
  return {c.H, c.K, c.heads, c.ff_mult, music_width, c.T};
}

void ModelShape::validate() const {
  if (H < 2 || H % 2 != 0) throw std::invalid_argument("model: H must be even");
  if (heads < 1 || H % heads != 0) throw std::invalid_argument("model: H % heads != 0");
  if (K < 1 || ff_mult < 1 || music_width < 1) throw std::invalid_argument("model: bad sizes");
  if (T < 2) throw std::invalid_argument("model: T must be at least 2");
}

// ---- normalizer ------------------------------------------------------------

Normalizer Normalizer::identity(std::size_t width) {
  return {std::vector<float>(width, 0.0f), std::vector<float>(width, 1.0f)};
}

Normalizer Normalizer::fit(const std::vector<Tensor>& motions, float std_floor) {
  if (motions.empty()) throw std::invalid_argument("Normalizer::fit: no motions");
  const std::size_t w = motions.front().cols();
  std::vector<double> sum(w, 0.0), sq(w, 0.0);
  double count = 0.0;
  for (const auto& m : motions) {
    if (m.cols() != w) throw std::invalid_argument("Normalizer::fit: width mismatch");
    const auto v = m.data();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        sum[c] += v[r * w + c];
        sq[c] += double(v[r * w + c]) * v[r * w + c];
      }
    }
    count += double(m.rows());
  }
  Normalizer n;
  n.mean.resize(w);
  n.std.resize(w);
  for (std::size_t c = 0; c < w; ++c) {
    const double mu = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mu * mu);
    n.mean[c] = static_cast<float>(mu);
    n.std[c] = std::max(std_floor, static_cast<float>(std::sqrt(var)));
  }
  return n;
}

Tensor Normalizer::normalize(const Tensor& x) const {
  if (x.cols() != mean.size()) throw std::invalid_argument("normalize: width mismatch");
  std::vector<float> inv(std.size());
  for (std::size_t c = 0; c < std.size(); ++c) inv[c] = 1.0f / std[c];
  return mul(sub(x, Tensor::from_data({1, mean.size()}, mean)),
             Tensor::from_data({1, inv.size()}, inv));
}

Tensor Normalizer::denormalize(const Tensor& x) const {
  if (x.cols() != mean.size()) throw std::invalid_argument("denormalize: width mismatch");
  return add(mul(x, Tensor::from_data({1, std.size()}, std)),
             Tensor::from_data({1, mean.size()}, mean));
}

// ---- model -----------------------------------------------------------------

Tensor DenoiserBlock::operator()(const Tensor& h, const Tensor& music_emb) const {
  const Tensor a = ln_self(h);
  Tensor x = add(h, self_attn(a, a));
  x = add(x, cross_attn(ln_cross(x), music_emb));
  return add(x, ff(ln_ff(x)));
}

DenoiserModel::DenoiserModel(const ModelShape& shape, std::uint64_t seed, std::string prefix)
    : shape_(shape), prefix_(std::move(prefix)) {
  shape_.validate();
  schedule_ = cosine_schedule(shape_.T);
  normalizer_ = Normalizer::identity();
  Initializer init(seed);
  const std::size_t h = shape_.H;
  in_proj_ = Linear::create(params_, prefix_ + "in_proj", kFeatureWidth, h, init);
  music_proj_ = Linear::create(params_, prefix_ + "music_proj", shape_.music_width, h, init);
  time_mlp_ = TimestepMlp::create(params_, prefix_ + "time", h, init);
  for (std::size_t k = 0; k < shape_.K; ++k) {
    const std::string b = prefix_ + "block" + std::to_string(k) + ".";
    DenoiserBlock blk;
    blk.ln_self = LayerNorm::create(params_, b + "ln_self", h);
    blk.self_attn = Attention::create(params_, b + "self_attn", h, shape_.heads, init);
    blk.ln_cross = LayerNorm::create(params_, b + "ln_cross", h);
    blk.cross_attn = Attention::create(params_, b + "cross_attn", h, shape_.heads, init);
    blk.ln_ff = LayerNorm::create(params_, b + "ln_ff", h);
    blk.ff = FeedForward::create(params_, b + "ff", h, h * shape_.ff_mult, init);
    blocks_.push_back(std::move(blk));
  }
  final_ln_ = LayerNorm::create(params_, prefix_ + "final_ln", h);
  out_proj_ = Linear::create(params_, prefix_ + "out_proj", h, kFeatureWidth, init);
}

Tensor DenoiserModel::embed_motion(const Tensor& x) const {
  if (x.cols() != kFeatureWidth) {
    throw std::invalid_argument("denoiser: motion width must be 151, got " +
                                std::to_string(x.cols()));
  }
  return add(in_proj_(x), sinusoidal_positions<float>(x.rows(), shape_.H));
}

Tensor DenoiserModel::embed_music(const Tensor& music) const {
  if (music.cols() != shape_.music_width) {
    throw std::invalid_argument("denoiser: music width " + std::to_string(music.cols()) +
                                " does not match model width " +
                                std::to_string(shape_.music_width));
  }
  return add(music_proj_(music), sinusoidal_positions<float>(music.rows(), shape_.H));
}

Tensor DenoiserModel::embed_time(int t) const {
  if (t < 0 || t > shape_.T) throw std::invalid_argument("denoiser: timestep out of range");
  return time_mlp_(double(t));
}

Tensor DenoiserModel::run_block(std::size_t k, const Tensor& h, const Tensor& t_emb,
                                const Tensor& music_emb) const {
  return blocks_.at(k)(add(h, t_emb), music_emb);
}

Tensor DenoiserModel::head(const Tensor& h) const { return out_proj_(final_ln_(h)); }

Tensor DenoiserModel::forward(const Tensor& x_t, int t, const Tensor& music,
                              const std::vector<Tensor>* block_residuals) const {
  if (music.rows() != x_t.rows()) {
    throw std::invalid_argument("denoiser: music and motion frame counts differ");
  }
  if (block_residuals && block_residuals->size() != blocks_.size()) {
    throw std::invalid_argument("denoiser: need one residual per block");
  }
  const Tensor m = embed_music(music);
  const Tensor te = embed_time(t);
  Tensor h = embed_motion(x_t);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    h = run_block(k, h, te, m);
    if (block_residuals) h = add(h, (*block_residuals)[k]);
  }
  return head(h);
}

void DenoiserModel::copy_from(const DenoiserModel& other) {
  if (!(other.shape_ == shape_)) throw std::invalid_argument("copy_from: shape mismatch");
  params_.copy_values_from(other.params_, prefix_, other.prefix_);
  normalizer_ = other.normalizer_;
}

namespace {

std::vector<float> shape_vector(const ModelShape& s) {
  return {float(s.H), float(s.K), float(s.heads), float(s.ff_mult), float(s.music_width),
          float(s.T)};
}

const Tensor* find_tensor(const std::vector<Parameter>& tensors, const std::string& name) {
  for (const auto& p : tensors) {
    if (p.name == name) return &p.value;
  }
  return nullptr;
}

}  // namespace

std::vector<Parameter> DenoiserModel::export_tensors() const {
  std::vector<Parameter> out;
  auto meta = shape_vector(shape_);
  out.push_back({prefix_ + "meta.shape", Tensor::from_data({meta.size()}, meta)});
  out.push_back({prefix_ + "norm.mean", Tensor::from_data({normalizer_.mean.size()},
                                                          normalizer_.mean)});
  out.push_back({prefix_ + "norm.std", Tensor::from_data({normalizer_.std.size()},
                                                         normalizer_.std)});
  for (const auto& p : params_.items()) out.push_back({p.name, p.value.detach()});
  return out;
}

std::unique_ptr<DenoiserModel> DenoiserModel::from_tensors(const std::vector<Parameter>& tensors,
                                                           const std::string& prefix) {
  const Tensor* meta = find_tensor(tensors, prefix + "meta.shape");
  const Tensor* mean = find_tensor(tensors, prefix + "norm.mean");
  const Tensor* sd = find_tensor(tensors, prefix + "norm.std");
  if (!meta || meta->size() != 6 || !mean || !sd) {
    throw io::FormatError("weights lack denoiser metadata under \"" + prefix + "\"");
  }
  const auto m = meta->data();
  ModelShape shape{std::size_t(m[0]), std::size_t(m[1]), std::size_t(m[2]),
                   std::size_t(m[3]), std::size_t(m[4]), int(m[5])};
  auto model = std::make_unique<DenoiserModel>(shape, 0, prefix);
  assign_weights(model->params_, tensors, prefix);
  if (mean->size() != kFeatureWidth || sd->size() != kFeatureWidth) {
    throw io::FormatError("normalizer width must be 151");
  }
  model->normalizer_.mean.assign(mean->data().begin(), mean->data().end());
  model->normalizer_.std.assign(sd->data().begin(), sd->data().end());
  return model;
}

void DenoiserModel::save(const std::filesystem::path& path) const {
  save_weights(path, export_tensors());
}

std::unique_ptr<DenoiserModel> DenoiserModel::load(const std::filesystem::path& path) {
  return from_tensors(load_weights(path));
}

// ---- losses ----------------------------------------------------------------

LossBreakdown LossTerms::values() const {
  return {simple.item(), vel.item(), foot.item(), total.item()};
}

Tensor loss_simple(const Tensor& x0, const Tensor& x0_hat) {
  if (x0.shape() != x0_hat.shape()) throw std::invalid_argument("loss_simple: shape mismatch");
  return mse(x0, x0_hat);
}

namespace {

Tensor frame_diff(const Tensor& x) {
  return sub(slice_rows(x, 1, x.rows()), slice_rows(x, 0, x.rows() - 1));
}

}  // namespace

Tensor loss_vel(const Tensor& x0, const Tensor& x0_hat) {
  if (x0.shape() != x0_hat.shape()) throw std::invalid_argument("loss_vel: shape mismatch");
  if (x0.rows() < 2) throw std::invalid_argument("loss_vel: needs at least 2 frames");
  return mse(frame_diff(x0), frame_diff(x0_hat));
}

Tensor contact_columns(const Tensor& features) {
  return slice_cols(features.detach(), kContactOffset, kContactOffset + kContactWidth);
}

Tensor loss_foot(const Tensor& x0_hat, const motion::Skeleton& skel, const Tensor& contacts) {
  const std::size_t n = x0_hat.rows();
  if (n < 2) throw std::invalid_argument("loss_foot: needs at least 2 frames");
  if (contacts.rows() != n || contacts.cols() != kContactWidth) {
    throw std::invalid_argument("loss_foot: contacts must be [N×4]");
  }
  const Tensor pos = motion::fk_positions(x0_hat, skel);
  const Tensor ones = Tensor::full({3, 1}, 1.0f);
  Tensor total;
  for (std::size_t k = 0; k < kContactWidth; ++k) {
    const std::size_t j = skel.foot_joints[k];
    const Tensor d = frame_diff(slice_cols(pos, 3 * j, 3 * j + 3));
    const Tensor speed_sq = matmul(square(d), ones);  // [(N−1)×1]
    const Tensor term = sum(mul(speed_sq, slice_rows(slice_cols(contacts, k, k + 1), 0, n - 1)));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0f / float((n - 1) * kContactWidth));
}

LossTerms diffusion_losses(const Tensor& x0_norm, const Tensor& x0_hat_norm,
                           const Tensor& contacts, const Normalizer& norm,
                           const motion::Skeleton& skel, float lambda_simple) {
  LossTerms l;
  l.simple = loss_simple(x0_norm, x0_hat_norm);
  l.vel = loss_vel(x0_norm, x0_hat_norm);
  l.foot = loss_foot(norm.denormalize(x0_hat_norm), skel, contacts);
  l.total = add(add(scale(l.simple, lambda_simple), l.vel), l.foot);
  return l;
}

// ---- training --------------------------------------------------------------

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::string out = "step,simple,vel,foot,total\n";
  char line[256];
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", i, s.simple, s.vel, s.foot,
                  s.total);
    out += line;
  }
  io::write_file(path, out);
}

TrainHistory run_diffusion_loop(const std::vector<DiffusionTarget>& targets,
                                const Normalizer& norm, const NoiseSchedule& sched,
                                const std::vector<Tensor>& params, const TrainConfig& config,
                                const PredictFn& predict, const StepCallback& on_step) {
  config.validate();
  if (targets.empty()) throw std::invalid_argument("training: empty dataset");
  const auto& skel = motion::Skeleton::standard();
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  opt_cfg.grad_clip = config.grad_clip;
  AdamW opt(params, opt_cfg);

  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_int_distribution<int> pick_t(1, sched.T);
  const long total = config.total_steps(targets.size());
  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainHistory history;
  for (long step = 0; step < total; ++step) {
    opt.set_lr(config.lr_at(step, total));
    for (auto p : params) p.zero_grad();
    LossBreakdown mean_loss;
    const std::size_t b = std::min(config.batch, targets.size());
    for (std::size_t i = 0; i < b; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const auto& target = targets[idx];
      const int t = pick_t(rng);
      const Tensor eps = gaussian(target.x0_norm.shape(), rng);
      const Tensor x_t = add_noise(target.x0_norm, t, eps, sched);
      const Tensor x0_hat = predict(idx, x_t, t);
      const LossTerms terms = diffusion_losses(target.x0_norm, x0_hat, target.contacts, norm,
                                               skel, config.lambda_simple);
      backward(scale(terms.total, 1.0f / float(b)));
      const auto v = terms.values();
      mean_loss.simple += v.simple / double(b);
      mean_loss.vel += v.vel / double(b);
      mean_loss.foot += v.foot / double(b);
      mean_loss.total += v.total / double(b);
    }
    opt.step();
    history.steps.push_back(mean_loss);
    if (on_step) on_step(step, total, mean_loss);
  }
  for (auto p : params) p.zero_grad();
  return history;
}

GenTrainResult train_generation(const std::vector<GenExample>& data, const TrainConfig& config,
                                const StepCallback& on_step) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train_generation: empty dataset");
  const std::size_t music_width = data.front().music.width;
  std::vector<Tensor> raw, music;
  for (const auto& ex : data) {
    ex.motion.validate();
    ex.music.validate();
    if (ex.music.size() != ex.motion.size()) {
      throw std::invalid_argument("train_generation: music and motion lengths differ");
    }
    if (ex.music.width != music_width) {
      throw std::invalid_argument("train_generation: inconsistent music width");
    }
    raw.push_back(motion::flatten(ex.motion));
    music.push_back(ex.music.tensor());
  }

  GenTrainResult result;
  result.model = std::make_unique<DenoiserModel>(ModelShape::from_config(config, music_width),
                                                 config.seed);
  DenoiserModel& model = *result.model;
  model.normalizer() = Normalizer::fit(raw);
  std::vector<DiffusionTarget> targets;
  for (const auto& r : raw) targets.push_back({model.normalizer().normalize(r), contact_columns(r)});
  result.history = run_diffusion_loop(
      targets, model.normalizer(), model.schedule(), model.params().tensors(), config,
      [&](std::size_t idx, const Tensor& x_t, int t) { return model.forward(x_t, t, music[idx]); },
      on_step);
  return result;
}

// ---- sampling --------------------------------------------------------------

Tensor sample_features(const DenoiserModel& model, const music::MusicFeatures& music,
                       int steps, std::uint64_t seed, double eta) {
  const Tensor m = music.tensor();
  auto denoise = [&](const Tensor& x_t, int t) { return model.forward(x_t, t, m); };
  NoGradGuard no_grad;
  const Tensor x = ddim_sample(model.schedule(), denoise, {music.size(), kFeatureWidth}, steps,
                               seed, eta);
  return model.normalizer().denormalize(x);
}

motion::MotionSequence sample_motion(const DenoiserModel& model,
                                     const music::MusicFeatures& music, int steps,
                                     std::uint64_t seed, double eta) {
  return motion::unflatten(sample_features(model, music, steps, seed, eta), music.fps);
}

}  // namespace dancedit::diffusion
