#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "dancedit/data/synth.hpp"
#include "dancedit/diffusion/denoiser.hpp"
#include "dancedit/io/binary.hpp"
#include "dancedit/tensor/weights_io.hpp"

using namespace dancedit;
using namespace dancedit::diffusion;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float scale_by = 1.0f) {
  return scale(gaussian(std::move(shape), seed), scale_by);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

ModelShape tiny_shape(std::size_t music_width = 4) {
  ModelShape s;
  s.H = 8;
  s.K = 1;
  s.heads = 2;
  s.ff_mult = 2;
  s.music_width = music_width;
  s.T = 100;
  return s;
}

}  // namespace

TEST_CASE("cosine schedule") {
  const auto s = cosine_schedule(1000);
  REQUIRE(s.alpha_bar.size() == 1001);
  CHECK(s.at(0) == 1.0);
  CHECK(s.at(1000) < 0.01);
  for (int t = 1; t <= 1000; ++t) CHECK(s.at(t) < s.at(t - 1));
  for (double a : s.alpha_bar) CHECK((a > 0.0 && a <= 1.0));
  // Independent evaluation at T/2: f(t) = cos²(((t/T+s)/(1+s))·π/2).
  const double off = 0.008;
  const double half = std::pow(std::cos((0.5 + off) / (1 + off) * std::numbers::pi / 2), 2) /
                      std::pow(std::cos(off / (1 + off) * std::numbers::pi / 2), 2);
  CHECK(s.at(500) == doctest::Approx(half).epsilon(1e-6));
  CHECK_THROWS_AS(cosine_schedule(1), std::invalid_argument);
}

TEST_CASE("add_noise") {
  const auto s = cosine_schedule(1000);
  const Tensor x0 = random_tensor({6, 5}, 1);
  const Tensor clean = add_noise(x0, 300, Tensor::zeros({6, 5}), s);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(clean.data()[i] == doctest::Approx(std::sqrt(s.at(300)) * x0.data()[i]).epsilon(1e-6));
  }
  const Tensor early = add_noise(x0, 1, random_tensor({6, 5}, 2), s);
  for (std::size_t i = 0; i < 30; ++i) CHECK(std::abs(early.data()[i] - x0.data()[i]) < 0.05);
  CHECK_THROWS_AS(add_noise(x0, 3, Tensor::zeros({5, 6}), s), std::invalid_argument);
  CHECK_THROWS_AS(add_noise(x0, 0, Tensor::zeros({6, 5}), s), std::invalid_argument);

  // Monte-Carlo marginal variance for x0 = 0.
  for (int t : {50, 400, 900}) {
    const Tensor x = add_noise(Tensor::zeros({10000, 1}), t, gaussian({10000, 1}, 7u + t), s);
    double m = 0, v = 0;
    for (float e : x.data()) m += e / 1e4;
    for (float e : x.data()) v += (e - m) * (e - m) / 1e4;
    CHECK(v == doctest::Approx(1.0 - s.at(t)).epsilon(0.05));
  }
}

TEST_CASE("ddim timesteps and determinism") {
  CHECK(ddim_timesteps(1000, 4) == std::vector<int>{1000, 750, 500, 250, 0});
  CHECK(ddim_timesteps(1000, 50).size() == 51);
  CHECK_THROWS(ddim_timesteps(10, 11));
  const auto s = cosine_schedule(1000);
  auto denoise = [](const Tensor& x, int t) { return scale(x, float(0.5 + t / 4000.0)); };
  const Tensor a = ddim_sample(s, denoise, {7, 3}, 50, 11);
  const Tensor b = ddim_sample(s, denoise, {7, 3}, 50, 11);
  const Tensor c = ddim_sample(s, denoise, {7, 3}, 50, 12);
  CHECK(bit_equal(a, b));
  CHECK_FALSE(bit_equal(a, c));
  const Tensor e1 = ddim_sample(s, denoise, {7, 3}, 20, 3, 0.5);
  const Tensor e2 = ddim_sample(s, denoise, {7, 3}, 20, 3, 0.5);
  CHECK(bit_equal(e1, e2));
  CHECK_THROWS(ddim_sample(s, denoise, {7, 3}, 20, 3, -1.0));
}

TEST_CASE("ddim oracle denoiser reaches its fixed point exactly") {
  const auto s = cosine_schedule(1000);
  const Tensor target = random_tensor({5, 4}, 99);
  std::vector<int> seen;
  auto oracle = [&](const Tensor&, int t) {
    seen.push_back(t);
    return target;
  };
  for (int steps : {1, 10, 50}) {
    seen.clear();
    const Tensor out = ddim_sample(s, oracle, {5, 4}, steps, 1);
    CHECK(bit_equal(out, target));
    CHECK(seen.size() == std::size_t(steps));
  }
  // steps = 1 is a single x0 projection from pure noise at t = T.
  seen.clear();
  ddim_sample(s, oracle, {5, 4}, 1, 1);
  CHECK(seen == std::vector<int>{1000});
}

TEST_CASE("loss closed forms") {
  const Tensor x0 = random_tensor({5, 151}, 4);
  CHECK(loss_simple(x0, x0).item() == 0.0f);
  CHECK(loss_simple(x0, add_scalar(x0, 0.1f)).item() == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(loss_vel(x0, add_scalar(x0, 0.37f)).item() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_THROWS(loss_vel(slice_rows(x0, 0, 1), slice_rows(x0, 0, 1)));

  // Hand 3-frame, 2-channel velocity case.
  const Tensor a = Tensor::from_data({3, 2}, {0, 0, 1, 2, 3, 3});
  const Tensor b = Tensor::from_data({3, 2}, {0, 1, 2, 1, 2, 5});
  // da = [1,2],[2,1]; db = [2,0],[0,4]; deltas (−1,2),(2,−3): (1+4+4+9)/4.
  CHECK(loss_vel(a, b).item() == doctest::Approx(4.5));

  const Tensor y = random_tensor({6, 3}, 5);
  const Tensor z = random_tensor({6, 3}, 6);
  double brute = 0;
  for (std::size_t i = 0; i < 18; ++i) brute += std::pow(double(y.data()[i]) - z.data()[i], 2);
  CHECK(loss_simple(y, z).item() == doctest::Approx(brute / 18).epsilon(1e-6));
}

TEST_CASE("foot loss hand cases") {
  const auto& skel = motion::Skeleton::standard();
  motion::MotionSequence seq;
  seq.frames.resize(4);
  for (std::size_t i = 0; i < 4; ++i) {
    seq.frames[i].root_pos = {0.1f * float(i), 0.9f, 0.0f};
    for (std::size_t j = 0; j < motion::kJointCount; ++j) seq.frames[i].set_rot6d(j, {1, 0, 0, 0, 1, 0});
  }
  const Tensor moving = motion::flatten(seq);
  // Rigid translation: every foot moves 0.1 m per frame.
  CHECK(loss_foot(moving, skel, Tensor::full({4, 4}, 1.0f)).item() ==
        doctest::Approx(0.01).epsilon(1e-4));
  CHECK(loss_foot(moving, skel, Tensor::zeros({4, 4})).item() == 0.0f);
  for (auto& f : seq.frames) f.root_pos = {0.0f, 0.9f, 0.0f};
  CHECK(loss_foot(motion::flatten(seq), skel, Tensor::full({4, 4}, 1.0f)).item() ==
        doctest::Approx(0.0).epsilon(1e-9));
  // One foot in contact over one interval: (1 contact · 0.01) / (3 intervals · 4 feet).
  Tensor one = Tensor::zeros({4, 4});
  one.mutable_data()[4 * 1 + 2] = 1.0f;
  CHECK(loss_foot(moving, skel, one).item() == doctest::Approx(0.01 / 12).epsilon(1e-4));
}

TEST_CASE("loss breakdown is the weighted sum") {
  const Tensor x0 = random_tensor({6, 151}, 8, 0.3f);
  const Tensor xh = random_tensor({6, 151}, 9, 0.3f);
  const Tensor contacts = Tensor::full({6, 4}, 1.0f);
  const auto& skel = motion::Skeleton::standard();
  for (float lambda : {10.0f, 1.0f, 0.0f}) {
    const auto v = diffusion_losses(x0, xh, contacts, Normalizer::identity(), skel, lambda).values();
    CHECK(v.total == doctest::Approx(lambda * v.simple + v.vel + v.foot).epsilon(1e-6));
    if (lambda == 0.0f) CHECK(v.total == doctest::Approx(v.vel + v.foot).epsilon(1e-7));
  }
}

TEST_CASE("normalizer round trip") {
  std::vector<Tensor> ms{random_tensor({10, 151}, 1, 2.0f), random_tensor({10, 151}, 2, 2.0f)};
  auto n = Normalizer::fit(ms);
  const Tensor back = n.denormalize(n.normalize(ms[0]));
  for (std::size_t i = 0; i < back.data().size(); ++i) {
    CHECK(back.data()[i] == doctest::Approx(ms[0].data()[i]).epsilon(1e-5));
  }
  std::vector<Tensor> constant{Tensor::full({4, 151}, 3.0f)};
  for (float s : Normalizer::fit(constant).std) CHECK(s == 1e-2f);
}

TEST_CASE("train config") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  const auto j = c.to_json();
  for (const char* key : {"T", "steps", "K", "H", "heads", "lr", "lambda_simple", "epochs", "seed"}) {
    CHECK(j.contains(key));
  }
  CHECK(TrainConfig::from_json(j).to_json() == j);
  CHECK_THROWS(TrainConfig::from_json({{"learning_rate", 1.0}}));
  CHECK_THROWS(TrainConfig::from_json({{"H", 7}, {"heads", 4}}));
  c.epochs = 3;
  c.batch = 4;
  CHECK(c.total_steps(8) == 6);
  c.steps = 5;
  CHECK(c.total_steps(8) == 5);
  c.lr_final = 0.0f;
  CHECK(c.lr_at(0, 10) == doctest::Approx(c.lr));
  CHECK(c.lr_at(9, 10) == doctest::Approx(0.0f).epsilon(1e-9));
  CHECK(c.lr_at(5, 11) == doctest::Approx(c.lr / 2));
}

TEST_CASE("denoiser shapes, conditioning and zero residuals") {
  DenoiserModel model(tiny_shape(), 3);
  const Tensor x = random_tensor({9, 151}, 1);
  const Tensor m = random_tensor({9, 4}, 2);
  const Tensor out = model.forward(x, 40, m);
  CHECK(out.shape() == x.shape());
  for (float v : out.data()) CHECK(std::isfinite(v));
  CHECK_FALSE(bit_equal(out, model.forward(x, 40, random_tensor({9, 4}, 3))));
  CHECK_FALSE(bit_equal(out, model.forward(x, 41, m)));
  std::vector<Tensor> zeros{Tensor::zeros({9, 8})};
  CHECK(bit_equal(out, model.forward(x, 40, m, &zeros)));
  CHECK_THROWS(model.forward(random_tensor({9, 150}, 1), 40, m));
  CHECK_THROWS(model.forward(x, 40, random_tensor({8, 4}, 2)));
  CHECK_THROWS(model.forward(x, 101, m));
  CHECK_THROWS(DenoiserModel(ModelShape{7, 1, 2, 2, 4, 100}, 0));
}

TEST_CASE("denoiser weights round trip") {
  DenoiserModel model(tiny_shape(), 5);
  model.normalizer().mean[3] = 0.25f;
  model.normalizer().std[7] = 2.0f;
  const fs::path p = fs::temp_directory_path() / "dancedit_gen_test.dewt";
  model.save(p);
  auto loaded = DenoiserModel::load(p);
  CHECK(loaded->shape() == model.shape());
  CHECK(loaded->normalizer().mean == model.normalizer().mean);
  CHECK(loaded->normalizer().std == model.normalizer().std);
  const Tensor x = random_tensor({4, 151}, 1), m = random_tensor({4, 4}, 2);
  CHECK(bit_equal(loaded->forward(x, 10, m), model.forward(x, 10, m)));
  CHECK(io::read_file(p).substr(0, 4) == "DEWT");
  auto tensors = load_weights(p);
  tensors.pop_back();
  CHECK_THROWS_AS(DenoiserModel::from_tensors(tensors), io::FormatError);
  fs::remove(p);
}

TEST_CASE("end-to-end reduced model gradient check") {
  // 4 frames, tiny widths; loss is the full weighted objective including FK.
  DenoiserModel model(tiny_shape(), 17);
  std::vector<Tensor> raw{motion::flatten(data::synth_dance({120.0, 3.0}, 1, 12))};
  model.normalizer() = Normalizer::fit(raw);
  const Tensor x0 = model.normalizer().normalize(slice_rows(raw[0], 0, 4));
  const Tensor contacts = Tensor::full({4, 4}, 1.0f);
  const Tensor music = random_tensor({4, 4}, 3);
  const Tensor eps = random_tensor({4, 151}, 4);
  const auto& skel = motion::Skeleton::standard();
  const Tensor xt = add_noise(x0, 30, eps, model.schedule());
  auto loss = [&] {
    return diffusion_losses(x0, model.forward(xt, 30, music), contacts, model.normalizer(), skel,
                            10.0f)
        .total;
  };
  model.params().zero_grad();
  backward(loss());
  std::mt19937_64 rng(0);
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& p : model.params().items()) {
    Tensor w = p.value;
    const auto g = w.grad();
    std::vector<float> analytic(g.begin(), g.end());
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng);
      const float orig = w.data()[i];
      const float h = 2e-3f;
      double fp, fm;
      {
        NoGradGuard ng;
        w.mutable_data()[i] = orig + h;
        fp = loss().item();
        w.mutable_data()[i] = orig - h;
        fm = loss().item();
        w.mutable_data()[i] = orig;
      }
      // Effective step after float rounding of orig ± h.
      const double numeric = (fp - fm) / (double(orig + h) - double(orig - h));
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
      ++checked;
    }
  }
  MESSAGE("max relative error " << worst << " over " << checked << " entries");
  CHECK(checked > 50);
  CHECK(worst < 1e-3);
}

TEST_CASE("training is deterministic and reduces loss") {
  std::vector<GenExample> data;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const music::BeatGrid g{120.0, 2.0 + double(s)};
    data.push_back({data::synth_dance(g, s, 24), music::synth_music(g, 24, s, 4)});
  }
  TrainConfig c;
  c.H = 8;
  c.K = 1;
  c.heads = 2;
  c.ff_mult = 2;
  c.T = 100;
  c.batch = 2;
  c.epochs = 40;
  c.lr = 3e-3f;
  auto a = train_generation(data, c);
  auto b = train_generation(data, c);
  REQUIRE(a.history.steps.size() == 40);
  const auto pa = a.model->export_tensors(), pb = b.model->export_tensors();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i].value, pb[i].value));
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) first += a.history.steps[i].total;
  for (int i = 35; i < 40; ++i) last += a.history.steps[i].total;
  CHECK(last < first);
  for (const auto& s : a.history.steps) CHECK(s.total == doctest::Approx(10 * s.simple + s.vel + s.foot).epsilon(1e-5));
  CHECK_THROWS_AS(train_generation({}, c), std::invalid_argument);

  const fs::path csv = fs::temp_directory_path() / "dancedit_hist.csv";
  a.history.write_csv(csv);
  const auto text = io::read_file(csv);
  CHECK(text.rfind("step,simple,vel,foot,total\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 41);
  fs::remove(csv);

  const auto m1 = sample_motion(*a.model, data[0].music, 10, 5);
  const auto m2 = sample_motion(*a.model, data[0].music, 10, 5);
  CHECK(m1 == m2);
  CHECK(m1.size() == 24);
}
