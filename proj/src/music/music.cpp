#include "dancedit/music/music.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "dancedit/io/binary.hpp"

namespace dancedit::music {

Tensor MusicFeatures::tensor() const {
  return Tensor::from_data({size(), width}, frames);
}

void MusicFeatures::validate() const {
  if (fps <= 0) throw std::invalid_argument("music fps must be positive");
  if (width == 0) throw std::invalid_argument("music width must be positive");
  if (frames.empty() || frames.size() % width != 0) {
    throw std::invalid_argument("music frames must be a non-empty N×width block");
  }
  for (float v : frames) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite music feature");
  }
  for (std::size_t i = 0; i < beat_frames.size(); ++i) {
    if (beat_frames[i] >= size()) throw std::invalid_argument("beat frame out of range");
    if (i > 0 && beat_frames[i] <= beat_frames[i - 1]) {
      throw std::invalid_argument("beat frames must be strictly increasing");
    }
  }
}

void BeatGrid::validate(int fps) const {
  if (!(bpm >= 40.0 && bpm <= 240.0)) throw std::invalid_argument("bpm must be in [40, 240]");
  if (!(phase >= 0.0 && phase < frames_per_beat(fps))) {
    throw std::invalid_argument("beat phase must be in [0, frames per beat)");
  }
}

std::vector<std::uint32_t> BeatGrid::beats(std::size_t n, int fps) const {
  validate(fps);
  std::vector<std::uint32_t> out;
  const double fpb = frames_per_beat(fps);
  for (std::size_t k = 0;; ++k) {
    const double f = std::round(phase + double(k) * fpb);
    if (f >= double(n)) break;
    const auto frame = static_cast<std::uint32_t>(f);
    if (out.empty() || frame > out.back()) out.push_back(frame);
  }
  return out;
}

MusicFeatures synth_music(const BeatGrid& grid, std::size_t n, std::uint64_t seed,
                          std::size_t width) {
  if (n < 2) throw std::invalid_argument("synth_music needs at least 2 frames");
  if (width < 1) throw std::invalid_argument("synth_music needs at least one channel");
  MusicFeatures m;
  m.width = width;
  m.beat_frames = grid.beats(n, m.fps);
  m.frames.assign(n * width, 0.0f);
  const double fpb = grid.frames_per_beat(m.fps);

  std::size_t next = 0;
  double last_beat = grid.phase - fpb;
  for (std::size_t i = 0; i < n; ++i) {
    while (next < m.beat_frames.size() && m.beat_frames[next] <= i) {
      last_beat = m.beat_frames[next++];
    }
    m.frames[i * width] = static_cast<float>(std::pow(0.5, double(i) - last_beat));
  }

  static constexpr double kRatios[] = {0.25, 0.5, 1.0, 2.0, 3.0, 4.0};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kRatios) - 1);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  for (std::size_t c = 1; c < width; ++c) {
    const double ratio = kRatios[pick(rng)];
    const double offset = angle(rng);
    const double a = amp(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double beat_pos = (double(i) - grid.phase) / fpb;
      m.frames[i * width + c] =
          static_cast<float>(a * std::sin(2.0 * std::numbers::pi * ratio * beat_pos + offset));
    }
  }
  return m;
}

std::vector<std::uint32_t> speed_minima(const std::vector<double>& speed) {
  std::vector<std::uint32_t> out;
  const std::size_t n = speed.size();
  if (n < 3) return out;
  double mean = 0.0;
  for (double s : speed) mean += s;
  mean /= double(n);
  // Differences below this are float noise from the f32 feature storage.
  const double tol = 1e-5 * *std::max_element(speed.begin(), speed.end()) + 1e-12;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(speed[j + 1] - speed[i]) <= tol) ++j;
    const bool interior = i > 0 && j + 1 < n;
    if (interior && speed[i - 1] > speed[i] + tol && speed[j + 1] > speed[i] + tol &&
        speed[i] < mean) {
      out.push_back(static_cast<std::uint32_t>((i + j) / 2));
    }
    i = j + 1;
  }
  return out;
}

std::vector<std::uint32_t> motion_beats(const motion::MotionSequence& seq,
                                        const motion::Skeleton& skel) {
  if (seq.size() < 3) throw std::invalid_argument("motion_beats needs at least 3 frames");
  return speed_minima(motion::mean_joint_speed(motion::forward_kinematics(seq, skel)));
}

DtwResult dtw_beat_align(const std::vector<std::uint32_t>& a,
                         const std::vector<std::uint32_t>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("dtw_beat_align: empty beat list");
  const std::size_t n = a.size(), m = b.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(n * m, kInf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = std::abs(double(a[i]) - double(b[j]));
      if (i == 0 && j == 0) {
        at(i, j) = d;
        continue;
      }
      double best = kInf;
      if (i > 0 && j > 0) best = at(i - 1, j - 1);
      if (i > 0) best = std::min(best, at(i - 1, j));
      if (j > 0) best = std::min(best, at(i, j - 1));
      at(i, j) = d + best;
    }
  }
  DtwResult res;
  res.cost = at(n - 1, m - 1);
  std::size_t i = n - 1, j = m - 1;
  res.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i - 1, j - 1) <= std::min(i > 0 ? at(i - 1, j) : kInf,
                                                       j > 0 ? at(i, j - 1) : kInf)) {
      --i;
      --j;
    } else if (i > 0 && (j == 0 || at(i - 1, j) <= at(i, j - 1))) {
      --i;
    } else {
      --j;
    }
    res.path.emplace_back(i, j);
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

bool accept_pair(double normalized_cost, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("accept_pair: tau must be positive");
  return normalized_cost <= tau;
}

std::string encode_music(const MusicFeatures& m) {
  m.validate();
  io::ByteWriter w;
  w.magic("DRMU");
  w.u32(kMusicVersion);
  w.u32(static_cast<std::uint32_t>(m.fps));
  w.u32(static_cast<std::uint32_t>(m.size()));
  w.u32(static_cast<std::uint32_t>(m.width));
  w.u32(static_cast<std::uint32_t>(m.beat_frames.size()));
  for (auto b : m.beat_frames) w.u32(b);
  for (float v : m.frames) w.f32(v);
  return w.take();
}

MusicFeatures decode_music(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("DRMU");
  const auto version = r.u32();
  if (version != kMusicVersion) {
    throw io::FormatError("unsupported DRMU version " + std::to_string(version));
  }
  MusicFeatures m;
  m.fps = static_cast<int>(r.u32());
  const std::size_t n = r.u32();
  m.width = r.u32();
  const std::size_t beats = r.u32();
  if (beats * 4 > r.remaining()) throw io::FormatError("truncated DRMU beat list");
  m.beat_frames.resize(beats);
  for (auto& b : m.beat_frames) b = r.u32();
  if (n * m.width * 4 != r.remaining()) {
    throw io::FormatError("DRMU payload size does not match N×D_m");
  }
  m.frames.resize(n * m.width);
  for (auto& v : m.frames) v = r.f32();
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("invalid DRMU content: ") + e.what());
  }
  return m;
}

void save_music(const std::filesystem::path& path, const MusicFeatures& m) {
  io::write_file(path, encode_music(m));
}

MusicFeatures load_music(const std::filesystem::path& path) {
  return decode_music(io::read_file(path));
}

nlohmann::json music_to_json(const MusicFeatures& m) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    frames.push_back(std::vector<float>(m.frames.begin() + i * m.width,
                                        m.frames.begin() + (i + 1) * m.width));
  }
  return {{"fps", m.fps}, {"width", m.width}, {"beat_frames", m.beat_frames},
          {"frames", std::move(frames)}};
}

MusicFeatures music_from_json(const nlohmann::json& j) {
  MusicFeatures m;
  m.fps = j.at("fps").get<int>();
  m.beat_frames = j.at("beat_frames").get<std::vector<std::uint32_t>>();
  const auto& frames = j.at("frames");
  if (!frames.is_array() || frames.empty()) {
    throw std::invalid_argument("music JSON needs a non-empty frames array");
  }
  m.width = j.contains("width") ? j.at("width").get<std::size_t>() : frames[0].size();
  for (const auto& row : frames) {
    if (row.size() != m.width) throw std::invalid_argument("music JSON rows have unequal width");
    for (const auto& v : row) m.frames.push_back(v.get<float>());
  }
  m.validate();
  return m;
}

}  // namespace dancedit::music
