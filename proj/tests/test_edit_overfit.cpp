#include <doctest.h>

#include <random>

#include "dancedit/data/synth.hpp"
#include "dancedit/edit/cem.hpp"

using namespace dancedit;

namespace {

constexpr std::size_t kPairs = 8;
constexpr std::size_t kFrames = 30;

struct OverfitSet {
  std::vector<edit::EditExample> pairs;
  std::vector<diffusion::GenExample> dances;
};

OverfitSet make_set() {
  OverfitSet s;
  const auto& fam = data::transform_families();
  for (std::size_t i = 0; i < kPairs; ++i) {
    const music::BeatGrid g{1800.0 / double(12 + i % 4), 2.0};
    const auto init = data::synth_dance(g, i, kFrames);
    std::mt19937_64 rng(i);
    const auto t = data::sample_transform(fam[i % 5], g, rng);
    const auto mus = music::synth_music(g, kFrames, i, 8);
    s.pairs.push_back({mus, init, data::TemplatePrompter::paraphrases(t.id)[0],
                       data::apply_transform(init, t)});
    s.dances.push_back({init, mus});
    s.dances.push_back({s.pairs.back().edited, mus});
  }
  return s;
}

// Mean total loss over a fixed grid of noise levels and noise draws, so two
// models are compared on identical inputs.
double grid_loss(const edit::EditingModel& m, const std::vector<edit::EditExample>& pairs) {
  NoGradGuard no_grad;
  const auto& skel = motion::Skeleton::standard();
  const auto& sched = m.base().schedule();
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto c = m.prepare(pairs[i].music, pairs[i].init, pairs[i].prompt);
    const Tensor raw = motion::flatten(pairs[i].edited);
    const Tensor x0 = m.base().normalizer().normalize(raw);
    for (int t = 5; t <= sched.T; t += 10) {
      const Tensor eps = diffusion::gaussian(x0.shape(), i * 1000 + t);
      const Tensor xt = diffusion::add_noise(x0, t, eps, sched);
      total += diffusion::diffusion_losses(x0, m.forward(xt, t, c), diffusion::contact_columns(raw),
                                           m.base().normalizer(), skel, 10.0f)
                   .values()
                   .total;
      ++count;
    }
  }
  return total / count;
}

}  // namespace

TEST_CASE("editing overfits eight pairs") {
  const auto set = make_set();
  TrainConfig c;
  c.H = 64;
  c.K = 2;
  c.heads = 2;
  c.ff_mult = 2;
  c.T = 100;
  c.batch = 4;
  c.epochs = 100000;
  c.lr = 3e-3f;
  c.lr_final = 3e-4f;
  c.steps = 3000;
  const auto gen = diffusion::train_generation(set.dances, c);

  c.steps = 4000;
  const auto trained = edit::train_editing(set.pairs, *gen.model, c);
  // The untrained branch contributes nothing, so it measures the initial loss.
  auto base = std::make_shared<diffusion::DenoiserModel>(gen.model->shape(), 0);
  base->copy_from(*gen.model);
  const edit::EditingModel initial(base, trained.model->vocab(), {}, c.seed);

  const double before = grid_loss(initial, set.pairs);
  const double after = grid_loss(*trained.model, set.pairs);
  MESSAGE("editing loss " << before << " -> " << after);
  CHECK(after < 0.1 * before);

  const auto& steps = trained.history.steps;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    first += steps[i].total / 50;
    last += steps[steps.size() - 1 - i].total / 50;
  }
  CHECK(last < first);
}
