#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "dancedit/data/dataset.hpp"
#include "dancedit/data/retrieval.hpp"
#include "dancedit/io/binary.hpp"

using namespace dancedit;
using namespace dancedit::data;
namespace fs = std::filesystem;

namespace {

music::BeatGrid grid_for(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int fpb = std::uniform_int_distribution<int>(12, 20)(rng);
  const int phase = std::uniform_int_distribution<int>(1, fpb - 1)(rng);
  return {1800.0 / fpb, double(phase)};
}

// Channels whose values differ by more than tol.
std::set<std::size_t> changed_channels(const motion::MotionSequence& a,
                                       const motion::MotionSequence& b, double tol) {
  const Tensor fa = motion::flatten(a), fb = motion::flatten(b);
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t c = 0; c < motion::kFeatureWidth; ++c) {
      if (std::abs(fa.at(i, c) - fb.at(i, c)) > tol) out.insert(c);
    }
  }
  return out;
}

double max_abs_diff(const motion::MotionSequence& a, const motion::MotionSequence& b) {
  const Tensor fa = motion::flatten(a), fb = motion::flatten(b);
  double m = 0.0;
  for (std::size_t i = 0; i < fa.data().size(); ++i) {
    m = std::max(m, double(std::abs(fa.data()[i] - fb.data()[i])));
  }
  return m;
}

double knee_pitch(const motion::MotionSequence& s, std::size_t i) {
  return motion::to_euler_zyx(motion::rot6d_to_matrix(s.frames[i].rot6d(motion::kRightKnee)))[0];
}

// Strict local maxima above 10% of the global maximum, plateaus counted once.
int count_peaks(const std::vector<double>& x) {
  const double top = *std::max_element(x.begin(), x.end());
  int peaks = 0;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (x[i] < 0.1 * top) continue;
    std::size_t j = i;
    while (j + 1 < x.size() && x[j + 1] == x[i]) ++j;
    if (x[i] > x[i - 1] && j + 1 < x.size() && x[i] > x[j + 1]) ++peaks;
    i = j;
  }
  return peaks;
}

std::vector<std::pair<double, std::size_t>> brute_rank(const MotionIndex& index,
                                                       const std::vector<float>& q,
                                                       SimilarityBand band) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    double dot = 0, nq = 0;
    for (std::size_t d = 0; d < q.size(); ++d) {
      dot += double(index.entries[i].embedding[d]) * q[d];
      nq += double(q[d]) * q[d];
    }
    const double s = dot / std::sqrt(nq);
    if (s <= 0.999 && s >= band.min && s <= band.max) all.push_back({s, i});
  }
  // Selection sort, earliest index wins ties.
  std::vector<std::pair<double, std::size_t>> out;
  while (!all.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < all.size(); ++i) {
      if (all[i].first > all[best].first) best = i;
    }
    out.push_back(all[best]);
    all.erase(all.begin() + long(best));
  }
  return out;
}

}  // namespace

TEST_CASE("synth_dance is deterministic and canonical") {
  const music::BeatGrid g{120.0, 5.0};
  const auto a = synth_dance(g, 7);
  CHECK(a == synth_dance(g, 7));
  CHECK(a.size() == 150);
  CHECK(a.fps == 30);
  CHECK_FALSE(a == synth_dance(g, 8));
  CHECK(a.frames[0].root_pos[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(a.frames[0].root_pos[2] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("synth_dance beats follow the grid") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto g = grid_for(s);
    const auto seq = synth_dance(g, s);
    const auto cost =
        music::dtw_beat_align(music::motion_beats(seq, motion::Skeleton::standard()), g.beats(150))
            .normalized_cost();
    CHECK(cost <= 2.0);
  }
}

TEST_CASE("identity parameters leave motion unchanged") {
  const music::BeatGrid g{150.0, 3.0};
  const auto seq = synth_dance(g, 1);
  std::mt19937_64 rng(0);
  for (const auto& [id, key, value] :
       std::vector<std::tuple<std::string, std::string, double>>{{kRaiseLeftArm, "gain", 1.0},
                                                                 {kWidenArmSwing, "gain", 1.0},
                                                                 {kKickRightLegTwice, "height", 0.0},
                                                                 {kSlowTempo, "factor", 1.0}}) {
    auto t = sample_transform(id, g, rng);
    t.params[key] = value;
    TemplatePrompter prompter;
    const auto out = apply_edit(seq, t, prompter, rng);
    CHECK(out.motion == seq);
    CHECK_FALSE(out.prompt.empty());
  }
}

TEST_CASE("edits touch only their affected channels") {
  std::mt19937_64 rng(3);
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto g = grid_for(100 + s);
    const auto seq = synth_dance(g, s);
    for (const auto& id : transform_families()) {
      const auto t = sample_transform(id, g, rng);
      const auto out = apply_transform(seq, t);
      const auto allowed = t.affected_channels();
      CHECK_FALSE(allowed.empty());
      const auto changed = changed_channels(seq, out, 1e-6);
      CHECK_FALSE(changed.empty());
      for (auto c : changed) {
        INFO(id << " changed channel " << c);
        CHECK(std::binary_search(allowed.begin(), allowed.end(), c));
      }
    }
  }
}

TEST_CASE("raise_left_arm leaves the right leg bit-identical") {
  const music::BeatGrid g{120.0, 4.0};
  const auto seq = synth_dance(g, 11);
  std::mt19937_64 rng(0);
  const auto out = apply_transform(seq, sample_transform(kRaiseLeftArm, g, rng));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (auto j : {motion::kRightHip, motion::kRightKnee, motion::kRightAnkle, motion::kRightFoot}) {
      CHECK(out.frames[i].rot6d(j) == seq.frames[i].rot6d(j));
    }
    CHECK(out.frames[i].foot_contact == seq.frames[i].foot_contact);
  }
  // The arm is higher: the left hand rises on average.
  const auto& skel = motion::Skeleton::standard();
  const auto p0 = motion::forward_kinematics(seq, skel), p1 = motion::forward_kinematics(out, skel);
  double rise = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) rise += p1[i][motion::kLeftHand].y() - p0[i][motion::kLeftHand].y();
  CHECK(rise / double(seq.size()) > 0.1);
}

TEST_CASE("invertible transforms round trip") {
  std::mt19937_64 rng(9);
  const auto g = grid_for(5);
  const auto seq = synth_dance(g, 5);
  for (const auto& id : transform_families()) {
    const auto t = sample_transform(id, g, rng);
    if (!t.invertible()) {
      CHECK_THROWS_AS(t.inverse(), std::invalid_argument);
      continue;
    }
    const auto back = apply_transform(apply_transform(seq, t), t.inverse());
    // Contacts are recomputed from positions, so compare the continuous part.
    auto strip = [](motion::MotionSequence m) {
      for (auto& f : m.frames) f.foot_contact = {};
      return m;
    };
    CHECK(max_abs_diff(strip(back), strip(seq)) < 1e-5);
  }
}

TEST_CASE("kick_right_leg_twice adds exactly two knee bends") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto g = grid_for(200 + s);
    const auto seq = synth_dance(g, s);
    std::mt19937_64 rng(s);
    const auto out = apply_transform(seq, sample_transform(kKickRightLegTwice, g, rng));
    std::vector<double> delta(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) delta[i] = std::abs(knee_pitch(out, i) - knee_pitch(seq, i));
    CHECK(count_peaks(delta) == 2);
  }
}

TEST_CASE("slow_tempo keeps upper-body rests on the beat") {
  const music::BeatGrid g{120.0, 6.0};
  const auto seq = synth_dance(g, 2);
  std::mt19937_64 rng(0);
  const auto out = apply_transform(seq, sample_transform(kSlowTempo, g, rng));
  // Half speed: the shoulder swing completes half as many cycles.
  auto swing = [](const motion::MotionSequence& m, std::size_t i) {
    return motion::to_euler_zyx(motion::rot6d_to_matrix(m.frames[i].rot6d(motion::kLeftShoulder)))[1];
  };
  auto crossings = [&](const motion::MotionSequence& m) {
    double mean = 0;
    for (std::size_t i = 0; i < m.size(); ++i) mean += swing(m, i) / double(m.size());
    int n = 0;
    for (std::size_t i = 1; i < m.size(); ++i) n += (swing(m, i - 1) - mean) * (swing(m, i) - mean) < 0;
    return n;
  };
  CHECK(crossings(out) < crossings(seq));
  CHECK(music::accept_pair(beat_cost(out, synth_music(g, 150, 0))));
}

TEST_CASE("transform validation and JSON") {
  std::mt19937_64 rng(0);
  const music::BeatGrid g;
  CHECK_THROWS_AS(sample_transform("moonwalk", g, rng), std::invalid_argument);
  EditTransform bad{"moonwalk", {}};
  CHECK_THROWS_AS(apply_transform(synth_dance(g, 0, 32), bad), std::invalid_argument);
  CHECK_THROWS_AS(bad.affected_channels(), std::invalid_argument);
  CHECK_THROWS_AS(EditTransform::from_json({{"id", "moonwalk"}}), std::invalid_argument);
  for (const auto& id : transform_families()) {
    const auto t = sample_transform(id, g, rng);
    CHECK(EditTransform::from_json(t.to_json()) == t);
    CHECK(TemplatePrompter::paraphrases(id).size() >= 2);
  }
  EditTransform missing{kRaiseLeftArm, {}};
  CHECK_THROWS_AS(apply_transform(synth_dance(g, 0, 32), missing), std::invalid_argument);
}

TEST_CASE("prompter renders one of the family paraphrases") {
  TemplatePrompter p;
  std::mt19937_64 rng(1);
  std::set<std::string> seen;
  for (int i = 0; i < 50; ++i) {
    const auto s = p.prompt({kWidenArmSwing, {{"gain", 2.0}}}, rng);
    const auto& all = TemplatePrompter::paraphrases(kWidenArmSwing);
    CHECK(std::find(all.begin(), all.end(), s) != all.end());
    seen.insert(s);
  }
  CHECK(seen.size() == TemplatePrompter::paraphrases(kWidenArmSwing).size());
}

TEST_CASE("dataset config validation") {
  DatasetConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(DatasetConfig::from_json(c.to_json()).to_json() == c.to_json());
  auto broken = [](auto mutate) {
    DatasetConfig b;
    mutate(b);
    return b;
  };
  CHECK_THROWS(broken([](DatasetConfig& b) { b.records = 0; }).validate());
  CHECK_THROWS(broken([](DatasetConfig& b) { b.min_edits = 0; }).validate());
  CHECK_THROWS(broken([](DatasetConfig& b) { b.max_edits = 9; }).validate());
  CHECK_THROWS(broken([](DatasetConfig& b) { b.families = {"moonwalk"}; }).validate());
  CHECK_THROWS(broken([](DatasetConfig& b) { b.min_frames_per_beat = 4; }).validate());
  CHECK_THROWS(DatasetConfig::from_json({{"recordz", 3}}));
}

TEST_CASE("build_dataset contracts") {
  DatasetConfig c;
  c.records = 10;
  c.seed = 42;
  const auto ds = build_dataset(c);
  REQUIRE(ds.records.size() == 10);
  CHECK(ds.skipped.empty());
  for (const auto& rec : ds.records) {
    REQUIRE(rec.edits.size() >= 1);
    CHECK(rec.edits.size() <= 3);
    CHECK(rec.music.beat_frames == rec.grid.beats(c.frames));
    CHECK(music::accept_pair(beat_cost(rec.seed_motion, rec.music), c.tau));
    motion::MotionSequence replay = rec.seed_motion;
    for (std::size_t k = 0; k < rec.edits.size(); ++k) {
      const auto& e = rec.edits[k];
      CHECK(music::accept_pair(beat_cost(e.motion, rec.music), c.tau));
      const auto allowed = e.transform.affected_channels();
      for (auto ch : changed_channels(rec.source_of(k), e.motion, 1e-6)) {
        CHECK(std::binary_search(allowed.begin(), allowed.end(), ch));
      }
      // Chained replay from the seed reproduces every stored motion.
      replay = apply_transform(replay, e.transform);
      CHECK(replay == e.motion);
    }
  }
}

TEST_CASE("dataset files round trip and are deterministic") {
  const fs::path a = fs::temp_directory_path() / "dancedit_ds_a";
  const fs::path b = fs::temp_directory_path() / "dancedit_ds_b";
  fs::remove_all(a);
  fs::remove_all(b);
  DatasetConfig c;
  c.records = 4;
  c.seed = 7;
  const auto ds = build_dataset(c);
  const auto manifest = save_dataset(a, ds, c);
  save_dataset(b, build_dataset(c), c);
  CHECK_NOTHROW(verify_manifest(a));
  CHECK(manifest.at("records").size() == 4);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    CHECK(io::read_file(entry.path()) == io::read_file(b / rel));
  }
  const auto loaded = load_dataset(a);
  REQUIRE(loaded.records.size() == ds.records.size());
  for (std::size_t r = 0; r < ds.records.size(); ++r) {
    CHECK(loaded.records[r].music == ds.records[r].music);
    CHECK(loaded.records[r].seed_motion == ds.records[r].seed_motion);
    REQUIRE(loaded.records[r].edits.size() == ds.records[r].edits.size());
    for (std::size_t k = 0; k < ds.records[r].edits.size(); ++k) {
      CHECK(loaded.records[r].edits[k].motion == ds.records[r].edits[k].motion);
      CHECK(loaded.records[r].edits[k].prompt == ds.records[r].edits[k].prompt);
      CHECK(loaded.records[r].edits[k].transform == ds.records[r].edits[k].transform);
    }
  }
  fs::remove(a / manifest["records"][1]["seed"].get<std::string>());
  CHECK_THROWS_AS(verify_manifest(a), io::FormatError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("retrieval self-exclusion and band") {
  MotionIndex index;
  index.add("dup", {1, 0, 0});
  index.add("near", {0.9f, 0.3f, 0.0f});
  index.add("far", {0, 0, 1});
  auto hits = retrieve_topk(index, {2, 0, 0}, 1, {0.0, 0.999});
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].ref == "near");
  CHECK(retrieve_topk(index, {0, 1, 0}, 3, {0.99, 0.999}).empty());
  CHECK_THROWS_AS(retrieve_topk(MotionIndex{}, {1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(retrieve_topk(index, {1, 0, 0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(retrieve_topk(index, {1, 0, 0}, 1, {0.9, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(index.add("zero", {0, 0, 0}), std::invalid_argument);
  for (const auto& e : index.entries) {
    double n = 0;
    for (float v : e.embedding) n += double(v) * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("retrieve_topk matches brute-force ranking") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> nd;
  for (std::size_t size : {10u, 25u, 50u}) {
    MotionIndex index;
    for (std::size_t i = 0; i < size; ++i) {
      std::vector<float> v(8);
      for (auto& x : v) x = nd(rng) + 1.5f;  // skewed so many pairs land in the band
      index.add("m" + std::to_string(i), v);
    }
    // A duplicate entry to exercise tie-breaking.
    index.add("dup", index.entries[3].embedding);
    std::vector<float> q(8);
    for (auto& x : q) x = nd(rng) + 1.5f;
    for (SimilarityBand band : {SimilarityBand{}, SimilarityBand{-1.0, 1.0}}) {
      const auto expected = brute_rank(index, q, band);
      const auto hits = retrieve_topk(index, q, 3, band);
      REQUIRE(hits.size() == std::min<std::size_t>(3, expected.size()));
      for (std::size_t i = 0; i < hits.size(); ++i) {
        CHECK(hits[i].index == expected[i].second);
        CHECK(hits[i].similarity == doctest::Approx(expected[i].first).epsilon(1e-6));
      }
    }
  }
}
