#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dancedit/data/synth.hpp"
#include "dancedit/edit/cem.hpp"
#include "dancedit/io/binary.hpp"
#include "dancedit/tensor/weights_io.hpp"

using namespace dancedit;
using namespace dancedit::edit;
namespace fs = std::filesystem;

namespace {

Tensor rnd(Shape shape, std::uint64_t seed, float s = 1.0f) {
  return scale(diffusion::gaussian(std::move(shape), seed), s);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::shared_ptr<diffusion::DenoiserModel> tiny_base(std::uint64_t seed = 1) {
  diffusion::ModelShape s;
  s.H = 8;
  s.K = 2;
  s.heads = 2;
  s.ff_mult = 2;
  s.music_width = 4;
  s.T = 100;
  return std::make_shared<diffusion::DenoiserModel>(s, seed);
}

Attention single_head(std::size_t h, std::uint64_t seed) {
  ParameterSet ps;
  Initializer init(seed);
  auto a = Attention::create(ps, "a", h, 1, init);
  // Non-zero biases so the hand case exercises them.
  for (Tensor* b : {&a.weights.bq, &a.weights.bk, &a.weights.bv, &a.weights.bo}) {
    auto d = b->mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.1f * float(i + 1);
  }
  return a;
}

// Row-vector times matrix plus bias, in double.
std::vector<double> affine(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  std::vector<double> out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double s = b.data()[j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w.at(i, j);
    out[j] = s;
  }
  return out;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  std::vector<double> out(t.cols());
  for (std::size_t c = 0; c < t.cols(); ++c) out[c] = t.at(r, c);
  return out;
}

std::vector<EditExample> tiny_edit_pairs(std::size_t count, std::size_t n) {
  std::vector<EditExample> out;
  const auto& fam = data::transform_families();
  for (std::size_t i = 0; i < count; ++i) {
    const music::BeatGrid g{1800.0 / double(12 + i % 4), 2.0};
    const auto init = data::synth_dance(g, i, n);
    std::mt19937_64 rng(i);
    const auto t = data::sample_transform(fam[i % 3], g, rng);
    out.push_back({music::synth_music(g, n, i, 4), init,
                   data::TemplatePrompter::paraphrases(t.id)[0], data::apply_transform(init, t)});
  }
  return out;
}

TrainConfig tiny_config(int steps) {
  TrainConfig c;
  c.H = 8;
  c.K = 2;
  c.heads = 2;
  c.ff_mult = 2;
  c.T = 100;
  c.batch = 4;
  c.steps = steps;
  c.epochs = 1000;
  c.lr = 3e-3f;
  return c;
}

}  // namespace

TEST_CASE("tokenizer and vocabulary") {
  CHECK(tokenize("Raise your LEFT arm, higher!") ==
        std::vector<std::string>{"raise", "your", "left", "arm", "higher"});
  CHECK(tokenize("  ").empty());
  const Vocab v = Vocab::build({"swing your arms wider", "keep your head still"});
  CHECK(v.token(0) == kUnkToken);
  CHECK(v.size() == 8);
  CHECK(v.id("arms") == 1);
  CHECK(v.encode("swing your ARMS sideways") ==
        std::vector<std::size_t>{v.id("swing"), v.id("your"), v.id("arms"), 0});
  CHECK_THROWS_AS(v.encode(""), std::invalid_argument);
  CHECK_THROWS_AS(v.encode("?!"), std::invalid_argument);
  std::string long_prompt;
  for (int i = 0; i < 65; ++i) long_prompt += "arms ";
  CHECK_THROWS_AS(v.encode(long_prompt), std::invalid_argument);
  CHECK(Vocab::parse(v.serialize()) == v);
  CHECK(v.serialize().rfind("<unk>\t0\narms\t1\n", 0) == 0);
  CHECK_THROWS_AS(Vocab::parse("arms\t0\n"), io::FormatError);
  CHECK_THROWS_AS(Vocab::parse("<unk>\t0\narms\t5\n"), io::FormatError);
  CHECK_THROWS_AS(Vocab::parse("<unk> 0\n"), io::FormatError);
}

TEST_CASE("text encoder") {
  ParameterSet ps;
  Initializer init(3);
  const auto enc = TextEncoder::create(ps, "t", 10, 6, 8, init);
  const auto a = enc.encode({1, 2, 3}, 150);
  const auto b = enc.encode({1, 2, 3}, 150);
  CHECK(bit_equal(a.per_frame, b.per_frame));
  CHECK(a.per_frame.rows() == 150);
  CHECK(a.per_frame.cols() == 8);
  CHECK_FALSE(bit_equal(a.pooled, enc.encode({1, 2, 4}, 150).pooled));
  // Row i is the pooled vector plus the sinusoid of frame i.
  const Tensor pos = sinusoidal_positions<float>(150, 8);
  for (std::size_t i : {0u, 77u, 149u}) {
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(a.per_frame.at(i, c) == doctest::Approx(a.pooled.at(0, c) + pos.at(i, c)).epsilon(1e-6));
    }
  }
  CHECK_THROWS(enc.encode({}, 4));
  CHECK_THROWS(enc.encode({10}, 4));
}

TEST_CASE("music-query cross-attention") {
  const std::size_t h = 4;
  const Attention attn = single_head(h, 5);
  const Tensor music = rnd({2, h}, 1), te = rnd({1, h}, 2);

  SUBCASE("residual preserved when the attention path is zero") {
    ParameterSet ps;
    Initializer init(0);
    Attention z = Attention::create(ps, "z", h, 2, init);
    for (Tensor* w : {&z.weights.wv, &z.weights.bv, &z.weights.wo, &z.weights.bo}) {
      for (auto& v : w->mutable_data()) v = 0.0f;
    }
    const Tensor x = rnd({2, h}, 3);
    CHECK(bit_equal(music_query_cross_attention(x, te, music, z), x));
  }
  SUBCASE("single key returns its value projection") {
    const Tensor x = rnd({1, h}, 4);
    const Tensor out = music_query_cross_attention(x, te, slice_rows(music, 0, 1), attn);
    const auto v = affine(row(x, 0), attn.weights.wv, attn.weights.bv);
    const auto o = affine(v, attn.weights.wo, attn.weights.bo);
    for (std::size_t c = 0; c < h; ++c) CHECK(out.at(0, c) == doctest::Approx(x.at(0, c) + o[c]).epsilon(1e-5));
  }
  SUBCASE("hand 2-frame case") {
    const Tensor x = rnd({2, h}, 6);
    const Tensor out = music_query_cross_attention(x, te, music, attn);
    std::vector<std::vector<double>> k, v;
    for (std::size_t j = 0; j < 2; ++j) {
      k.push_back(affine(row(x, j), attn.weights.wk, attn.weights.bk));
      v.push_back(affine(row(x, j), attn.weights.wv, attn.weights.bv));
    }
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<double> qin(h);
      for (std::size_t c = 0; c < h; ++c) qin[c] = music.at(i, c) + te.at(0, c);
      const auto q = affine(qin, attn.weights.wq, attn.weights.bq);
      double s[2];
      for (std::size_t j = 0; j < 2; ++j) {
        s[j] = 0;
        for (std::size_t c = 0; c < h; ++c) s[j] += q[c] * k[j][c];
        s[j] /= std::sqrt(double(h));
      }
      const double w0 = 1.0 / (1.0 + std::exp(s[1] - s[0]));
      std::vector<double> mix(h);
      for (std::size_t c = 0; c < h; ++c) mix[c] = w0 * v[0][c] + (1 - w0) * v[1][c];
      const auto o = affine(mix, attn.weights.wo, attn.weights.bo);
      for (std::size_t c = 0; c < h; ++c) CHECK(out.at(i, c) == doctest::Approx(x.at(i, c) + o[c]).epsilon(1e-5));
    }
  }
  CHECK_THROWS(music_query_cross_attention(rnd({2, 3}, 1), te, music, attn));
}

TEST_CASE("correlation matrices") {
  const std::size_t n = 5, h = 4;
  const Tensor fc = rnd({n, h}, 1), fi = rnd({n, h}, 2), text = rnd({n, h}, 3);
  const Tensor wq = rnd({h, h}, 4), wk = rnd({h, h}, 5);
  const auto same = correlation_matrices(fc, fc, text, wq, wk);
  CHECK(bit_equal(same.m_edit, same.m_init));
  const auto zero = correlation_matrices(fc, fi, Tensor::zeros({n, h}), wq, wk);
  for (float v : zero.m_edit.data()) CHECK(v == 0.0f);
  for (float v : zero.m_init.data()) CHECK(v == 0.0f);
  const auto m = correlation_matrices(fc, fi, text, wq, wk);
  CHECK(m.m_edit.shape() == Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double e = 0, in = 0;
      for (std::size_t a = 0; a < h; ++a) {
        for (std::size_t b = 0; b < h; ++b) {
          for (std::size_t c = 0; c < h; ++c) {
            const double key = double(text.at(j, c)) * wk.at(c, a);
            e += double(fc.at(i, b)) * wq.at(b, a) * key;
            in += double(fi.at(i, b)) * wq.at(b, a) * key;
          }
        }
      }
      CHECK(m.m_edit.at(i, j) == doctest::Approx(e / 2.0).epsilon(1e-5));
      CHECK(m.m_init.at(i, j) == doctest::Approx(in / 2.0).epsilon(1e-5));
    }
  }
  CHECK_THROWS(correlation_matrices(fc, rnd({n + 1, h}, 2), text, wq, wk));
}

TEST_CASE("fusion weights") {
  const Tensor a = rnd({6, 6}, 1, 3.0f), b = rnd({6, 6}, 2, 3.0f);
  const Tensor sym = fusion_weights({a, a});
  CHECK(sym.shape() == Shape{6, 1});
  for (float s : sym.data()) CHECK(s == 0.5f);
  const Tensor two = fusion_weights({add_scalar(a, 2.0f), a});
  const double expect = std::exp(2.0) / (std::exp(2.0) + 1.0);
  for (float s : two.data()) CHECK(s == doctest::Approx(expect).epsilon(1e-6));
  const Tensor base = fusion_weights({a, b});
  for (float c : {-50.0f, 3.5f, 100.0f}) {
    const Tensor shifted = fusion_weights({add_scalar(a, c), add_scalar(b, c)});
    for (std::size_t i = 0; i < 6; ++i) CHECK(shifted.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-5));
  }
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Tensor w = fusion_weights({rnd({8, 8}, s, 4.0f), rnd({8, 8}, s + 99, 4.0f)});
    for (float v : w.data()) CHECK((v > 0.0f && v < 1.0f));
  }
}

TEST_CASE("fuse") {
  const Tensor fi = rnd({4, 3}, 1), fc = rnd({4, 3}, 2);
  CHECK(bit_equal(fuse(fi, fc, Tensor::full({4, 1}, 1.0f)), fi));
  CHECK(bit_equal(fuse(fi, fc, Tensor::full({4, 1}, 0.0f)), fc));
  const Tensor cancel = fuse(scale(fc, -1.0f), fc, Tensor::full({4, 1}, 0.5f));
  for (float v : cancel.data()) CHECK(v == 0.0f);
  const Tensor mixed = fuse(fi, fc, Tensor::from_data({4, 1}, {1, 0, 1, 0}));
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(mixed.at(0, c) == fi.at(0, c));
    CHECK(mixed.at(1, c) == fc.at(1, c));
  }
  CHECK_THROWS(fuse(fi, fc, Tensor::full({3, 1}, 0.5f)));
}

TEST_CASE("adain statistics") {
  const Tensor c = rnd({50, 4}, 1, 2.0f);
  const Tensor same = adain(c, c);
  for (std::size_t i = 0; i < c.data().size(); ++i) CHECK(same.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-5));
  // Style with mean m_h and std s_h per channel.
  const Tensor style = add(mul(rnd({50, 4}, 2), Tensor::from_data({1, 4}, {0.5f, 2, 3, 0.1f})),
                           Tensor::from_data({1, 4}, {1, -2, 0, 5}));
  const Tensor out = adain(c, style);
  for (std::size_t h = 0; h < 4; ++h) {
    double ms = 0, mo = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      ms += style.at(i, h) / 50.0;
      mo += out.at(i, h) / 50.0;
    }
    double vs = 0, vo = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      vs += std::pow(style.at(i, h) - ms, 2) / 50.0;
      vo += std::pow(out.at(i, h) - mo, 2) / 50.0;
    }
    CHECK(mo == doctest::Approx(ms).epsilon(1e-5));
    CHECK(std::sqrt(vo) == doctest::Approx(std::sqrt(vs)).epsilon(1e-5));
  }
  // Constant content channel: output is the style mean.
  const Tensor flat = Tensor::full({10, 1}, 3.0f);
  const Tensor st = Tensor::from_data({10, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  const Tensor guarded = adain(flat, st);
  for (float v : guarded.data()) CHECK(v == doctest::Approx(5.5).epsilon(1e-6));
}

TEST_CASE("zero-initialized editing branch reproduces the base") {
  auto base = tiny_base();
  const Vocab vocab = Vocab::build({"raise your left arm higher"});
  const EditingModel model(base, vocab, {}, 7);
  const auto g = music::BeatGrid{120.0, 3.0};
  const auto init = data::synth_dance(g, 1, 12);
  const auto music = music::synth_music(g, 12, 1, 4);
  const auto cond = model.prepare(music, init, "raise your left arm higher");
  for (int t : {1, 50, 100}) {
    const Tensor x = rnd({12, 151}, std::uint64_t(t));
    CHECK(bit_equal(edit_denoise(model, x, t, cond), base->forward(x, t, cond.music)));
  }
  EditingModel ablation(base, vocab, {false, 32}, 7);
  CHECK(bit_equal(ablation.forward(rnd({12, 151}, 9), 30, cond), base->forward(rnd({12, 151}, 9), 30, cond.music)));
  // Through the sampler: an edit equals a fresh base sample with the same seed.
  const Tensor edited = sample_edit_features(model, music, init, "raise your left arm higher", 10, 4);
  const Tensor fresh = diffusion::sample_features(*base, music, 10, 4);
  CHECK(bit_equal(edited, fresh));
  CHECK_THROWS_AS(model.prepare(music, init, ""), std::invalid_argument);
  CHECK_THROWS(model.prepare(music::synth_music(g, 11, 1, 4), init, "raise"));
}

TEST_CASE("editing sigma stays in the open unit interval") {
  auto base = tiny_base();
  const EditingModel model(base, Vocab::build({"kick"}), {}, 2);
  const auto g = music::BeatGrid{120.0, 3.0};
  const auto cond = model.prepare(music::synth_music(g, 10, 1, 4), data::synth_dance(g, 2, 10), "kick");
  std::vector<Tensor> sigmas;
  model.residuals(rnd({10, 151}, 1), 20, cond, &sigmas);
  REQUIRE(sigmas.size() == 2);
  for (const auto& s : sigmas) {
    CHECK(s.shape() == Shape{10, 1});
    for (float v : s.data()) CHECK((v > 0.0f && v < 1.0f));
  }
}

TEST_CASE("editing branch end-to-end gradient check") {
  auto base = tiny_base(4);
  base->params().set_trainable(false);
  EditingModel model(base, Vocab::build({"swing your arms wider"}), {}, 3);
  // Perturb the zero projections so every editing parameter gets a gradient.
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd(0.0f, 0.3f);
  for (auto& p : model.parameters()) {
    if (p.name.find("zero") != std::string::npos || p.name.find("hint") != std::string::npos) {
      for (auto& v : Tensor(p.value).mutable_data()) v = nd(rng);
    }
  }
  const auto g = music::BeatGrid{120.0, 3.0};
  const auto init = data::synth_dance(g, 1, 4);
  const auto cond = model.prepare(music::synth_music(g, 4, 1, 4), init, "swing your arms wider");
  const Tensor x0 = base->normalizer().normalize(motion::flatten(data::synth_dance(g, 2, 4)));
  const Tensor xt = rnd({4, 151}, 5);
  const Tensor contacts = Tensor::full({4, 4}, 1.0f);
  const auto& skel = motion::Skeleton::standard();
  auto loss = [&] {
    return diffusion::diffusion_losses(x0, model.forward(xt, 40, cond), contacts,
                                       base->normalizer(), skel, 10.0f)
        .total;
  };
  for (auto& t : model.trainable()) t.zero_grad();
  backward(loss());
  double worst = 0;
  std::size_t checked = 0;
  for (const auto& p : model.parameters()) {
    Tensor w = p.value;
    if (!w.has_grad()) continue;
    std::vector<float> analytic(w.grad().begin(), w.grad().end());
    for (int k = 0; k < 2; ++k) {
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng);
      const float orig = w.data()[i], h = 2e-3f;
      double fp, fm;
      {
        NoGradGuard ng;
        w.mutable_data()[i] = orig + h;
        fp = loss().item();
        w.mutable_data()[i] = orig - h;
        fm = loss().item();
        w.mutable_data()[i] = orig;
      }
      const double numeric = (fp - fm) / (double(orig + h) - double(orig - h));
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
      ++checked;
    }
  }
  MESSAGE("max relative error " << worst << " over " << checked << " entries");
  CHECK(checked > 80);
  CHECK(worst < 1e-3);
}

TEST_CASE("train_editing freezes the base and is deterministic") {
  auto base = tiny_base(6);
  const auto before = base->export_tensors();
  const auto pairs = tiny_edit_pairs(4, 12);
  auto a = train_editing(pairs, *base, tiny_config(6));
  auto b = train_editing(pairs, *base, tiny_config(6));
  const auto after = base->export_tensors();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bit_equal(before[i].value, after[i].value));
  const auto frozen = a.model->base().export_tensors();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bit_equal(before[i].value, frozen[i].value));
  const auto pa = a.model->export_tensors(), pb = b.model->export_tensors();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i].value, pb[i].value));
  CHECK(a.history.steps.size() == 6);
  CHECK_THROWS_AS(train_editing({}, *base, tiny_config(1)), std::invalid_argument);

  // Once trained, the branch contributes and the CEM switch matters.
  const auto cond = a.model->prepare(pairs[0].music, pairs[0].init, pairs[0].prompt);
  const Tensor x = rnd({12, 151}, 3);
  const Tensor with_cem = a.model->forward(x, 50, cond);
  CHECK_FALSE(bit_equal(with_cem, base->forward(x, 50, cond.music)));
  a.model->set_cem_enabled(false);
  CHECK_FALSE(bit_equal(with_cem, a.model->forward(x, 50, cond)));
  a.model->set_cem_enabled(true);

  const fs::path p = fs::temp_directory_path() / "dancedit_edit_test.dewt";
  a.model->save(p);
  CHECK(fs::exists(EditingModel::vocab_path(p)));
  auto loaded = EditingModel::load(p, a.model->base_ptr());
  CHECK(loaded->vocab() == a.model->vocab());
  CHECK(bit_equal(loaded->forward(x, 50, cond), with_cem));
  for (const auto& t : load_weights(p)) CHECK(t.name.rfind("edit/", 0) == 0);
  fs::remove(EditingModel::vocab_path(p));
  CHECK_THROWS(EditingModel::load(p, a.model->base_ptr()));
  fs::remove(p);
}
