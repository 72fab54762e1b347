#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dancedit/io/binary.hpp"
#include "dancedit/music/music.hpp"
#include "oracles.hpp"

using namespace dancedit;
using namespace dancedit::music;

namespace {

motion::MotionSequence root_path(const std::vector<double>& xs) {
  motion::MotionSequence seq;
  seq.frames.resize(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto& f = seq.frames[i];
    f.root_pos = {float(xs[i]), 1.0f, 0.0f};
    for (std::size_t j = 0; j < motion::kJointCount; ++j) f.set_rot6d(j, {1, 0, 0, 0, 1, 0});
  }
  return seq;
}

}  // namespace

TEST_CASE("beat grid") {
  BeatGrid g{120.0, 0.0};
  auto beats = g.beats(150);
  REQUIRE(beats.size() == 10);
  for (std::size_t k = 0; k < beats.size(); ++k) CHECK(beats[k] == 15 * k);
  BeatGrid shifted{120.0, 7.0};
  auto b2 = shifted.beats(40);
  CHECK(b2 == std::vector<std::uint32_t>{7, 22, 37});
  CHECK_THROWS((BeatGrid{30.0, 0.0}.validate()));
  CHECK_THROWS((BeatGrid{120.0, 15.0}.validate()));
}

TEST_CASE("synthetic music") {
  auto a = synth_music({120.0, 7.0}, 150, 3);
  auto b = synth_music({120.0, 7.0}, 150, 3);
  CHECK(a == b);
  CHECK(a.size() == 150);
  CHECK(a.width == kDefaultMusicWidth);
  CHECK_NOTHROW(a.validate());
  for (auto f : a.beat_frames) CHECK(a.at(f, 0) == 1.0f);
  CHECK(a.at(8, 0) == doctest::Approx(0.5));
  CHECK(a.at(9, 0) == doctest::Approx(0.25));
  auto c = synth_music({120.0, 7.0}, 150, 4);
  CHECK_FALSE(a == c);
  CHECK_THROWS(synth_music({120.0, 0.0}, 1, 0));
}

TEST_CASE("sinusoidal root gives minima at quarter periods") {
  const double period = 40.0;
  std::vector<double> xs;
  for (int i = 0; i < 100; ++i) xs.push_back(0.3 * std::sin(2 * std::numbers::pi * i / period));
  auto beats = motion_beats(root_path(xs), motion::Skeleton::standard());
  CHECK(beats == std::vector<std::uint32_t>{10, 30, 50, 70, 90});
}

TEST_CASE("constant velocity has no beats") {
  std::vector<double> xs;
  for (int i = 0; i < 30; ++i) xs.push_back(0.02 * i);
  CHECK(motion_beats(root_path(xs), motion::Skeleton::standard()).empty());
}

TEST_CASE("two holds give one beat each") {
  std::vector<double> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(0.05 * i);
  for (int i = 0; i < 20; ++i) xs.push_back(0.5);
  for (int i = 1; i <= 10; ++i) xs.push_back(0.5 + 0.05 * i);
  for (int i = 0; i < 20; ++i) xs.push_back(1.0);
  for (int i = 1; i <= 10; ++i) xs.push_back(1.0 + 0.05 * i);
  auto beats = motion_beats(root_path(xs), motion::Skeleton::standard());
  REQUIRE(beats.size() == 2);
  CHECK(beats[0] >= 10);
  CHECK(beats[0] < 30);
  CHECK(beats[1] >= 40);
  CHECK(beats[1] < 60);
}

TEST_CASE("dtw examples") {
  auto r = dtw_beat_align({0, 15, 30}, {2, 17, 32});
  CHECK(r.cost == 6.0);
  CHECK(r.path == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 2}});
  CHECK(r.normalized_cost() == doctest::Approx(2.0));
  r = dtw_beat_align({0}, {0, 15});
  CHECK(r.cost == 15.0);
  CHECK(r.path == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {0, 1}});
  r = dtw_beat_align({4, 9, 30}, {4, 9, 30});
  CHECK(r.cost == 0.0);
  CHECK(r.path.size() == 3);
  CHECK_THROWS(dtw_beat_align({}, {1}));
}

TEST_CASE("dtw equals brute force and is symmetric") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> len(1, 6), t(0, 60);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::uint32_t> a(len(rng)), b(len(rng));
    for (auto& x : a) x = t(rng);
    for (auto& x : b) x = t(rng);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const auto r = dtw_beat_align(a, b);
    CHECK(r.cost == doctest::Approx(testing::brute_force_dtw(a, b)));
    CHECK(r.cost == doctest::Approx(dtw_beat_align(b, a).cost));
    double along = 0.0;
    for (auto [i, j] : r.path) along += std::abs(double(a[i]) - double(b[j]));
    CHECK(along == doctest::Approx(r.cost));
    CHECK(r.path.front() == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(r.path.back() == std::pair<std::size_t, std::size_t>{a.size() - 1, b.size() - 1});
  }
}

TEST_CASE("accept pair threshold") {
  CHECK(accept_pair(0.0));
  CHECK(accept_pair(2.9, 3.0));
  CHECK_FALSE(accept_pair(3.1, 3.0));
  CHECK_THROWS(accept_pair(1.0, 0.0));
}

TEST_CASE("music files round trip") {
  auto m = synth_music({100.0, 3.0}, 20, 1, 8);
  CHECK(decode_music(encode_music(m)) == m);
  CHECK(music_from_json(music_to_json(m)) == m);
  auto bytes = encode_music(m);
  CHECK_THROWS_AS(decode_music(bytes.substr(0, bytes.size() - 1)), io::FormatError);
  CHECK_THROWS_AS(decode_music("DRMX" + bytes.substr(4)), io::FormatError);
}
