#pragma once

// Music conditioning: per-frame feature tracks with a beat grid, a synthetic
// generator with known beats, kinematic beats and DTW beat alignment.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dancedit/motion/motion.hpp"
#include "dancedit/tensor/tensor.hpp"

namespace dancedit::music {

inline constexpr std::size_t kDefaultMusicWidth = 32;

struct MusicFeatures {
  int fps = motion::kDefaultFps;
  std::size_t width = kDefaultMusicWidth;
  std::vector<float> frames;  // N×width, row-major
  std::vector<std::uint32_t> beat_frames;

  std::size_t size() const { return width == 0 ? 0 : frames.size() / width; }
  float at(std::size_t frame, std::size_t channel) const { return frames[frame * width + channel]; }
  Tensor tensor() const;
  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;
  bool operator==(const MusicFeatures&) const = default;
};

struct BeatGrid {
  double bpm = 120.0;
  double phase = 0.0;  // frame of the first beat

  double frames_per_beat(int fps = motion::kDefaultFps) const { return 60.0 * fps / bpm; }
  void validate(int fps = motion::kDefaultFps) const;
  // Beat frames in [0, n), rounded to the nearest frame.
  std::vector<std::uint32_t> beats(std::size_t n, int fps = motion::kDefaultFps) const;
};

// Channel 0 is a beat pulse (1 on beats, halving every frame after), the rest
// are seeded smooth harmonics locked to the beat period.
MusicFeatures synth_music(const BeatGrid& grid, std::size_t n, std::uint64_t seed,
                          std::size_t width = kDefaultMusicWidth);

// Source of conditioning features. Real audio front-ends implement this with
// the same output shape.
class MusicSource {
 public:
  virtual ~MusicSource() = default;
  virtual MusicFeatures features(std::size_t n) const = 0;
};

class SyntheticMusicSource final : public MusicSource {
 public:
  SyntheticMusicSource(BeatGrid grid, std::uint64_t seed, std::size_t width = kDefaultMusicWidth)
      : grid_(grid), seed_(seed), width_(width) {}
  MusicFeatures features(std::size_t n) const override {
    return synth_music(grid_, n, seed_, width_);
  }

 private:
  BeatGrid grid_;
  std::uint64_t seed_;
  std::size_t width_;
};

// Strict local minima of mean joint speed that lie below the sequence mean.
// A flat run (equal within 1e-5 of the peak speed) counts once, at its middle
// frame; runs touching either end of the sequence are not minima.
std::vector<std::uint32_t> speed_minima(const std::vector<double>& speed);
std::vector<std::uint32_t> motion_beats(const motion::MotionSequence& seq,
                                        const motion::Skeleton& skel);

struct DtwResult {
  double cost = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;
  double normalized_cost() const { return path.empty() ? 0.0 : cost / double(path.size()); }
};

// L1 cost on beat times, boundary to boundary. Ties prefer the diagonal step.
DtwResult dtw_beat_align(const std::vector<std::uint32_t>& motion_beats,
                         const std::vector<std::uint32_t>& music_beats);

inline constexpr double kDefaultBeatTau = 3.0;
bool accept_pair(double normalized_cost, double tau = kDefaultBeatTau);

// "DRMU" files: magic, version, fps, N, D_m, beat count, beats u32[], N×D_m f32.
inline constexpr std::uint32_t kMusicVersion = 1;
std::string encode_music(const MusicFeatures& m);
MusicFeatures decode_music(std::string_view bytes);
void save_music(const std::filesystem::path& path, const MusicFeatures& m);
MusicFeatures load_music(const std::filesystem::path& path);

// {"fps":30,"width":32,"beat_frames":[...],"frames":[[...]]}
nlohmann::json music_to_json(const MusicFeatures& m);
MusicFeatures music_from_json(const nlohmann::json& j);

}  // namespace dancedit::music
