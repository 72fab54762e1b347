#include "dancedit/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dancedit/io/binary.hpp"
#include "dancedit/music/music.hpp"
#include "dancedit/tensor/optim.hpp"
#include "dancedit/tensor/weights_io.hpp"

namespace dancedit::metrics {

namespace {

const Tensor* find_tensor(const std::vector<Parameter>& tensors, const std::string& name) {
  for (const auto& p : tensors) {
    if (p.name == name) return &p.value;
  }
  return nullptr;
}

Tensor vector_tensor(const std::vector<float>& v) { return Tensor::from_data({v.size()}, v); }

std::vector<float> tensor_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::filesystem::path sibling_vocab(const std::filesystem::path& weights) {
  auto p = weights;
  p.replace_extension(".vocab");
  return p;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) {
      throw std::invalid_argument(std::string(what) + ": unknown key \"" + key + "\"");
    }
  }
}

}  // namespace

// ---- autoencoder -----------------------------------------------------------

void AutoencoderConfig::validate() const {
  if (bottleneck < 1) throw std::invalid_argument("autoencoder: bottleneck must be positive");
  if (hidden < 1) throw std::invalid_argument("autoencoder: hidden must be positive");
  if (steps < 1) throw std::invalid_argument("autoencoder: steps must be positive");
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw std::invalid_argument("autoencoder: lr must be positive");
  if (max_rows < 1) throw std::invalid_argument("autoencoder: max_rows must be positive");
}

nlohmann::json AutoencoderConfig::to_json() const {
  return {{"bottleneck", bottleneck}, {"hidden", hidden}, {"steps", steps},
          {"lr", lr},                 {"max_rows", max_rows}, {"seed", seed}};
}

AutoencoderConfig AutoencoderConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"bottleneck", "hidden", "steps", "lr", "max_rows", "seed"},
                                    "autoencoder config");
  AutoencoderConfig c;
  try {
    c.bottleneck = j.value("bottleneck", c.bottleneck);
    c.hidden = j.value("hidden", c.hidden);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.max_rows = j.value("max_rows", c.max_rows);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("autoencoder config: ") + e.what());
  }
  c.validate();
  return c;
}

MotionAutoencoder::MotionAutoencoder(std::size_t bottleneck, std::size_t hidden,
                                     std::uint64_t seed)
    : bottleneck_(bottleneck),
      hidden_(hidden),
      normalizer_(diffusion::Normalizer::identity()) {
  Initializer init(seed);
  const std::size_t w = motion::kFeatureWidth;
  enc1_ = Linear::create(params_, "ae/enc1", w, hidden, init);
  enc2_ = Linear::create(params_, "ae/enc2", hidden, bottleneck, init);
  dec1_ = Linear::create(params_, "ae/dec1", bottleneck, hidden, init);
  dec2_ = Linear::create(params_, "ae/dec2", hidden, w, init);
}

void MotionAutoencoder::require_trained() const {
  if (!trained_) throw std::logic_error("motion autoencoder is not trained");
}

Tensor MotionAutoencoder::encode_normalized(const Tensor& x_norm) const {
  return enc2_(gelu(enc1_(x_norm)));
}

Tensor MotionAutoencoder::decode_normalized(const Tensor& z) const {
  return dec2_(gelu(dec1_(z)));
}

Tensor MotionAutoencoder::encode(const motion::MotionSequence& seq) const {
  require_trained();
  NoGradGuard guard;
  return encode_normalized(normalizer_.normalize(motion::flatten(seq)));
}

std::vector<double> MotionAutoencoder::features(const motion::MotionSequence& seq) const {
  const Tensor pooled = mean_rows(encode(seq));
  return {pooled.data().begin(), pooled.data().end()};
}

double MotionAutoencoder::reconstruction_mse(const motion::MotionSequence& seq) const {
  require_trained();
  NoGradGuard guard;
  const Tensor x = normalizer_.normalize(motion::flatten(seq));
  return mse(decode_normalized(encode_normalized(x)), x).item();
}

std::vector<Parameter> MotionAutoencoder::export_tensors() const {
  require_trained();
  std::vector<Parameter> out;
  out.push_back({"ae/meta.shape", vector_tensor({float(bottleneck_), float(hidden_)})});
  out.push_back({"ae/norm.mean", vector_tensor(normalizer_.mean)});
  out.push_back({"ae/norm.std", vector_tensor(normalizer_.std)});
  for (const auto& p : params_.items()) out.push_back({p.name, p.value.detach()});
  return out;
}

void MotionAutoencoder::save(const std::filesystem::path& path) const {
  save_weights(path, export_tensors());
}

MotionAutoencoder MotionAutoencoder::load(const std::filesystem::path& path) {
  const auto tensors = load_weights(path);
  const Tensor* meta = find_tensor(tensors, "ae/meta.shape");
  const Tensor* mean = find_tensor(tensors, "ae/norm.mean");
  const Tensor* sd = find_tensor(tensors, "ae/norm.std");
  if (!meta || meta->size() != 2 || !mean || !sd) {
    throw io::FormatError("weights lack autoencoder metadata under \"ae/\"");
  }
  MotionAutoencoder ae(std::size_t(meta->data()[0]), std::size_t(meta->data()[1]), 0);
  ae.normalizer_.mean = tensor_vector(*mean);
  ae.normalizer_.std = tensor_vector(*sd);
  if (ae.normalizer_.mean.size() != motion::kFeatureWidth ||
      ae.normalizer_.std.size() != motion::kFeatureWidth) {
    throw io::FormatError("autoencoder normalizer has the wrong width");
  }
  assign_weights(ae.params_, tensors, "ae/");
  ae.trained_ = true;
  return ae;
}

AutoencoderResult train_autoencoder(const std::vector<motion::MotionSequence>& corpus,
                                    const AutoencoderConfig& config) {
  config.validate();
  if (corpus.size() < kMinAutoencoderCorpus) {
    throw std::invalid_argument("train_autoencoder: need at least " +
                                std::to_string(kMinAutoencoderCorpus) + " sequences, got " +
                                std::to_string(corpus.size()));
  }
  std::vector<Tensor> flat;
  flat.reserve(corpus.size());
  std::size_t total_rows = 0;
  for (const auto& seq : corpus) {
    seq.validate();
    flat.push_back(motion::flatten(seq));
    total_rows += flat.back().rows();
  }

  AutoencoderResult result{MotionAutoencoder(config.bottleneck, config.hidden, config.seed), {}};
  MotionAutoencoder& ae = result.model;
  ae.normalizer() = diffusion::Normalizer::fit(flat);

  // A fixed strided subset of frames keeps every step full-batch.
  const std::size_t stride = (total_rows + config.max_rows - 1) / config.max_rows;
  std::vector<float> rows;
  std::size_t kept = 0, index = 0;
  for (const auto& f : flat) {
    const Tensor n = ae.normalizer().normalize(f);
    const auto v = n.data();
    for (std::size_t r = 0; r < n.rows(); ++r, ++index) {
      if (index % stride != 0) continue;
      rows.insert(rows.end(), v.begin() + r * n.cols(), v.begin() + (r + 1) * n.cols());
      ++kept;
    }
  }
  const Tensor x = Tensor::from_data({kept, motion::kFeatureWidth}, std::move(rows));

  AdamWConfig opt_config;
  opt_config.lr = config.lr;
  AdamW opt(ae.params().tensors(), opt_config);
  for (int step = 0; step < config.steps; ++step) {
    ae.params().zero_grad();
    const Tensor loss = mse(ae.decode_normalized(ae.encode_normalized(x)), x);
    result.losses.push_back(loss.item());
    backward(loss);
    opt.step();
  }
  ae.mark_trained();
  return result;
}

// ---- distribution metrics ---------------------------------------------------

double frechet_distance(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a,
                        const Eigen::VectorXd& mean_b, const Eigen::MatrixXd& cov_b) {
  const auto d = mean_a.size();
  if (mean_b.size() != d || cov_a.rows() != d || cov_a.cols() != d || cov_b.rows() != d ||
      cov_b.cols() != d) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  // Tr((ΣaΣb)^½) = Tr((√Σa Σb √Σa)^½), and the latter product is symmetric.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(0.5 * (cov_a + cov_a.transpose()));
  const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd prod = sqrt_a * cov_b * sqrt_a;
  prod = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(prod, Eigen::EigenvaluesOnly);
  const double tr_sqrt = ep.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value =
      (mean_a - mean_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

namespace {

void moments(const FeatureSet& set, std::size_t dim, Eigen::VectorXd& mean,
             Eigen::MatrixXd& cov) {
  const std::size_t n = set.size();
  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (set[i].size() != dim) throw std::invalid_argument("fid: feature width mismatch");
    for (std::size_t c = 0; c < dim; ++c) x(i, c) = set[i][c];
  }
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / double(n - 1);
  cov.diagonal().array() += kFidRidge;
}

}  // namespace

double fid(const FeatureSet& a, const FeatureSet& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("fid: empty feature set");
  const std::size_t dim = a.front().size();
  if (dim == 0) throw std::invalid_argument("fid: zero-width features");
  if (a.size() < dim + 1 || b.size() < dim + 1) {
    throw std::invalid_argument("fid: need at least " + std::to_string(dim + 1) +
                                " samples per set, got " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()));
  }
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  moments(a, dim, ma, ca);
  moments(b, dim, mb, cb);
  return frechet_distance(ma, ca, mb, cb);
}

double diversity(const FeatureSet& features, std::uint64_t seed, std::size_t pairs) {
  const std::size_t n = features.size();
  if (n < 2) throw std::invalid_argument("diversity: need at least 2 features");
  for (const auto& f : features) {
    if (f.size() != features.front().size()) {
      throw std::invalid_argument("diversity: feature width mismatch");
    }
  }
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < features[i].size(); ++c) {
      const double d = features[i][c] - features[j][c];
      s += d * d;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  std::size_t count = 0;
  if (n <= kExhaustiveDiversity) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j, ++count) total += dist(i, j);
    }
  } else {
    if (pairs == 0) throw std::invalid_argument("diversity: pairs must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, n - 1), second(0, n - 2);
    for (; count < pairs; ++count) {
      const std::size_t i = first(rng);
      std::size_t j = second(rng);
      if (j >= i) ++j;
      total += dist(i, j);
    }
  }
  return total / double(count);
}

// ---- per-sequence metrics ---------------------------------------------------

double bas(const std::vector<std::uint32_t>& music_beats,
           const std::vector<std::uint32_t>& motion_beats, double sigma) {
  if (music_beats.empty()) throw std::invalid_argument("bas: no music beats");
  if (!(sigma > 0.0)) throw std::invalid_argument("bas: sigma must be positive");
  if (motion_beats.empty()) return 0.0;
  double total = 0.0;
  for (auto m : music_beats) {
    double best = std::numeric_limits<double>::infinity();
    for (auto b : motion_beats) {
      const double d = double(m) - double(b);
      best = std::min(best, d * d);
    }
    total += std::exp(-best / (2.0 * sigma * sigma));
  }
  return total / double(music_beats.size());
}

double pfc(const motion::JointPositions& pos, const std::array<std::size_t, 4>& feet) {
  if (pos.size() < 3) throw std::invalid_argument("pfc: need at least 3 frames");
  for (auto j : feet) {
    if (j >= motion::kJointCount) throw std::invalid_argument("pfc: foot joint out of range");
  }
  auto speed = [&](std::size_t i, std::size_t joint) {
    return (pos[i + 1][joint] - pos[i][joint]).norm();
  };
  double sum = 0.0, peak = 0.0;
  for (std::size_t i = 1; i + 1 < pos.size(); ++i) {
    Eigen::Vector3d a = pos[i + 1][0] - 2.0 * pos[i][0] + pos[i - 1][0];
    a.y() = 0.0;
    const double acc = a.norm();
    const double left = std::min(speed(i, feet[0]), speed(i, feet[2]));
    const double right = std::min(speed(i, feet[1]), speed(i, feet[3]));
    sum += acc * left * right;
    peak = std::max(peak, acc);
  }
  return sum / double(pos.size() - 2) / (peak + 1e-8);
}

double pfc(const motion::MotionSequence& seq, const motion::Skeleton& skel) {
  if (seq.size() < 3) throw std::invalid_argument("pfc: need at least 3 frames");
  return pfc(motion::forward_kinematics(seq, skel), skel.foot_joints);
}

// ---- edit-text distance ----------------------------------------------------

double cosine_distance(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("cosine_distance: size mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_distance: zero vector");
  return 1.0 - dot / std::sqrt(na * nb);
}

void MeasConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("meas config: " + m); };
  if (embed < 1 || hidden < 1 || token_width < 1) fail("widths must be positive");
  if (steps < 1) fail("steps must be positive");
  if (batch < 2) fail("batch must be at least 2");
  if (!(lr > 0.0f) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(temperature > 0.0f) || !std::isfinite(temperature)) fail("temperature must be positive");
  if (!(noise >= 0.0f) || !std::isfinite(noise)) fail("noise must be non-negative");
}

nlohmann::json MeasConfig::to_json() const {
  return {{"embed", embed}, {"hidden", hidden}, {"token_width", token_width},
          {"steps", steps}, {"batch", batch},   {"lr", lr},
          {"temperature", temperature},         {"noise", noise},
          {"seed", seed}};
}

MeasConfig MeasConfig::from_json(const nlohmann::json& j) {
  reject_unknown(
      j, {"embed", "hidden", "token_width", "steps", "batch", "lr", "temperature", "noise", "seed"},
      "meas config");
  MeasConfig c;
  try {
    c.embed = j.value("embed", c.embed);
    c.hidden = j.value("hidden", c.hidden);
    c.token_width = j.value("token_width", c.token_width);
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.temperature = j.value("temperature", c.temperature);
    c.noise = j.value("noise", c.noise);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("meas config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

// Per-frame (edited - init) rows, [frames, kFeatureWidth] row-major.
std::vector<float> delta_rows(const motion::MotionSequence& init,
                              const motion::MotionSequence& edited) {
  if (init.size() != edited.size() || init.size() == 0) {
    throw std::invalid_argument("pair_features: motions must have the same non-zero length");
  }
  const Tensor a = motion::flatten(init);
  const Tensor b = motion::flatten(edited);
  std::vector<float> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = b.data()[i] - a.data()[i];
  return d;
}

// Channel means then channel RMS of the deltas. With sigma > 0 each channel
// gets a constant drift plus per-frame jitter, both scaled by sigma.
std::vector<float> delta_features(const std::vector<float>& d, double sigma, std::mt19937_64* rng) {
  const std::size_t w = motion::kFeatureWidth;
  const std::size_t rows = d.size() / w;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> drift(w, 0.0);
  if (sigma > 0.0) {
    for (auto& v : drift) v = sigma * normal(*rng) / std::sqrt(2.0);
  }
  std::vector<double> sum(w, 0.0), sq(w, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double v = d[r * w + c];
      if (sigma > 0.0) v += drift[c] + sigma * normal(*rng) / std::sqrt(2.0);
      sum[c] += v;
      sq[c] += v * v;
    }
  }
  std::vector<float> out(kPairFeatureWidth);
  for (std::size_t c = 0; c < w; ++c) {
    out[c] = float(sum[c] / double(rows));
    out[w + c] = float(std::sqrt(sq[c] / double(rows)));
  }
  return out;
}

}  // namespace

std::vector<float> pair_features(const motion::MotionSequence& init,
                                 const motion::MotionSequence& edited) {
  return delta_features(delta_rows(init, edited), 0.0, nullptr);
}

MeasScorer::MeasScorer(edit::Vocab vocab, const MeasConfig& config)
    : config_(config), vocab_(std::move(vocab)), scale_(kPairFeatureWidth, 1.0f) {
  config_.validate();
  Initializer init(config_.seed);
  pair1_ = Linear::create(params_, "meas/pair1", kPairFeatureWidth, config_.hidden, init);
  pair2_ = Linear::create(params_, "meas/pair2", config_.hidden, config_.embed, init);
  text_ = edit::TextEncoder::create(params_, "meas/text", vocab_.size(), config_.token_width,
                                    config_.embed, init);
}

void MeasScorer::require_trained() const {
  if (!trained_) throw std::logic_error("MEAS scorer is not trained");
}

Tensor MeasScorer::feature_rows(const std::vector<std::vector<float>>& features) const {
  std::vector<float> rows;
  rows.reserve(features.size() * kPairFeatureWidth);
  for (const auto& f : features) {
    if (f.size() != kPairFeatureWidth) throw std::invalid_argument("meas: pair feature width");
    for (std::size_t c = 0; c < kPairFeatureWidth; ++c) rows.push_back(f[c] / scale_[c]);
  }
  return Tensor::from_data({features.size(), kPairFeatureWidth}, std::move(rows));
}

Tensor MeasScorer::embed_pairs(const Tensor& features) const {
  return l2_normalize_rows(pair2_(gelu(pair1_(features))));
}

Tensor MeasScorer::embed_prompts(const std::vector<std::vector<std::size_t>>& ids) const {
  std::vector<Tensor> rows;
  rows.reserve(ids.size());
  for (const auto& t : ids) rows.push_back(text_.pooled(t));
  return l2_normalize_rows(concat_rows<float>(rows));
}

std::vector<float> MeasScorer::pair_embedding(const motion::MotionSequence& init,
                                              const motion::MotionSequence& edited) const {
  require_trained();
  NoGradGuard guard;
  return tensor_vector(embed_pairs(feature_rows({pair_features(init, edited)})));
}

std::vector<float> MeasScorer::text_embedding(const std::string& prompt) const {
  require_trained();
  NoGradGuard guard;
  return tensor_vector(embed_prompts({vocab_.encode(prompt)}));
}

double MeasScorer::distance(const motion::MotionSequence& init,
                            const motion::MotionSequence& edited,
                            const std::string& prompt) const {
  return cosine_distance(pair_embedding(init, edited), text_embedding(prompt));
}

std::vector<Parameter> MeasScorer::export_tensors() const {
  require_trained();
  std::vector<Parameter> out;
  out.push_back({"meas/meta.config",
                 vector_tensor({float(config_.embed), float(config_.hidden),
                                float(config_.token_width), float(vocab_.size()),
                                config_.temperature})});
  out.push_back({"meas/scale", vector_tensor(scale_)});
  for (const auto& p : params_.items()) out.push_back({p.name, p.value.detach()});
  return out;
}

void MeasScorer::save(const std::filesystem::path& path) const {
  save_weights(path, export_tensors());
  vocab_.save(sibling_vocab(path));
}

MeasScorer MeasScorer::load(const std::filesystem::path& path) {
  const auto tensors = load_weights(path);
  const Tensor* meta = find_tensor(tensors, "meas/meta.config");
  const Tensor* scale = find_tensor(tensors, "meas/scale");
  if (!meta || meta->size() != 5 || !scale || scale->size() != kPairFeatureWidth) {
    throw io::FormatError("weights lack MEAS metadata under \"meas/\"");
  }
  edit::Vocab vocab = edit::Vocab::load(sibling_vocab(path));
  const auto m = meta->data();
  if (std::size_t(m[3]) != vocab.size()) {
    throw io::FormatError("vocabulary size does not match the MEAS weights");
  }
  MeasConfig config;
  config.embed = std::size_t(m[0]);
  config.hidden = std::size_t(m[1]);
  config.token_width = std::size_t(m[2]);
  config.temperature = m[4];
  MeasScorer scorer(std::move(vocab), config);
  scorer.scale_ = tensor_vector(*scale);
  assign_weights(scorer.params_, tensors, "meas/");
  scorer.trained_ = true;
  return scorer;
}

MeasResult train_meas(const std::vector<MeasExample>& data, const MeasConfig& config) {
  config.validate();
  if (data.size() < 2) throw std::invalid_argument("train_meas: need at least 2 examples");
  std::vector<std::string> prompts;
  std::vector<std::vector<float>> deltas, features;
  for (const auto& ex : data) {
    prompts.push_back(ex.prompt);
    deltas.push_back(delta_rows(ex.init, ex.edited));
    features.push_back(delta_features(deltas.back(), 0.0, nullptr));
  }
  if (std::set<std::string>(prompts.begin(), prompts.end()).size() < 2) {
    throw std::invalid_argument("train_meas: need at least 2 distinct prompts");
  }

  MeasResult result{MeasScorer(edit::Vocab::build(prompts), config), {}};
  MeasScorer& scorer = result.scorer;
  // Per-feature RMS, floored at the RMS over all features so channels that
  // never move in the corpus are not blown up.
  std::vector<float> feature_scale(kPairFeatureWidth, 0.0f);
  double total_sq = 0.0;
  for (std::size_t c = 0; c < kPairFeatureWidth; ++c) {
    double sq = 0.0;
    for (const auto& f : features) sq += double(f[c]) * f[c];
    total_sq += sq;
    feature_scale[c] = float(std::sqrt(sq / double(features.size())));
  }
  const float floor = std::max(
      1e-4f, float(std::sqrt(total_sq / double(features.size() * kPairFeatureWidth))));
  for (auto& v : feature_scale) v = std::max(v, floor);
  scorer.set_feature_scale(feature_scale);
  std::vector<std::vector<std::size_t>> ids;
  for (const auto& p : prompts) ids.push_back(scorer.vocab().encode(p));

  AdamWConfig opt_config;
  opt_config.lr = config.lr;
  AdamW opt(scorer.params().tensors(), opt_config);
  std::mt19937_64 rng(config.seed ^ 0x6d656173ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int step = 0; step < config.steps; ++step) {
    // Batches hold distinct prompts, so every off-diagonal logit is a negative.
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> batch;
    std::set<std::string> seen;
    for (auto i : order) {
      if (batch.size() == config.batch) break;
      if (seen.insert(prompts[i]).second) batch.push_back(i);
    }
    std::vector<std::vector<float>> rows;
    std::vector<std::vector<std::size_t>> batch_ids;
    std::uniform_real_distribution<double> level(0.0, config.noise);
    for (auto i : batch) {
      rows.push_back(config.noise > 0.0f ? delta_features(deltas[i], level(rng), &rng) : features[i]);
      batch_ids.push_back(ids[i]);
    }
    scorer.params().zero_grad();
    const Tensor p = scorer.embed_pairs(scorer.feature_rows(rows));
    const Tensor t = scorer.embed_prompts(batch_ids);
    const Tensor logits = scale(matmul_bt(p, t), 1.0f / config.temperature);
    std::vector<std::size_t> targets(batch.size());
    std::iota(targets.begin(), targets.end(), 0);
    const Tensor loss = scale(add(cross_entropy_rows(logits, std::span<const std::size_t>(targets)),
                                  cross_entropy_rows(transpose(logits),
                                                     std::span<const std::size_t>(targets))),
                              0.5f);
    result.losses.push_back(loss.item());
    backward(loss);
    opt.step();
  }
  scorer.mark_trained();
  return result;
}

double meas(const MeasScorer& scorer, const motion::MotionSequence& init,
            const motion::MotionSequence& edited, const std::string& prompt) {
  return scorer.distance(init, edited, prompt);
}

// ---- report -----------------------------------------------------------------

nlohmann::json MetricReport::to_json() const {
  return {{"fid", fid},
          {"bas", bas},
          {"diversity", diversity},
          {"pfc", pfc},
          {"meas", meas},
          {"counts", {{"generated", generated}, {"reference", reference}, {"edit_pairs", edit_pairs}}}};
}

std::string MetricReport::table() const {
  char buf[256];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "%-12s %-12s %-12s %-12s %-12s\n", "FID", "BAS", "Diversity",
                "PFC", "MEAS");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-12.4f %-12.4f %-12.4f %-12.4f %-12.4f\n", fid, bas,
                diversity, pfc, meas);
  out << buf;
  out << "generated=" << generated << " reference=" << reference << " edit_pairs=" << edit_pairs
      << "\n";
  return out.str();
}

MetricReport evaluate(const std::vector<GeneratedDance>& generated,
                      const std::vector<motion::MotionSequence>& reference,
                      const MotionAutoencoder& ae, std::uint64_t seed) {
  if (generated.empty()) throw std::invalid_argument("evaluate: no generated dances");
  const auto& skel = motion::Skeleton::standard();
  MetricReport report;
  report.generated = generated.size();
  report.reference = reference.size();
  FeatureSet gen_features, ref_features;
  double bas_sum = 0.0, pfc_sum = 0.0;
  for (const auto& g : generated) {
    gen_features.push_back(ae.features(g.motion));
    bas_sum += bas(g.music_beats, music::motion_beats(g.motion, skel));
    pfc_sum += pfc(g.motion, skel);
  }
  for (const auto& r : reference) ref_features.push_back(ae.features(r));
  report.fid = fid(gen_features, ref_features);
  report.bas = bas_sum / double(generated.size());
  report.pfc = pfc_sum / double(generated.size());
  report.diversity = generated.size() >= 2 ? diversity(gen_features, seed) : 0.0;
  return report;
}

void add_meas(MetricReport& report, const MeasScorer& scorer,
              const std::vector<MeasExample>& edits) {
  if (edits.empty()) throw std::invalid_argument("add_meas: no edit pairs");
  double total = 0.0;
  for (const auto& e : edits) total += meas(scorer, e.init, e.edited, e.prompt);
  report.meas = total / double(edits.size());
  report.edit_pairs = edits.size();
}

}  // namespace dancedit::metrics
