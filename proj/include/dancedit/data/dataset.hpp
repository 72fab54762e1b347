#pragma once

// Paired corpus forge: synthetic music, a seed dance per record, chained
// ground-truth edits, manifest emission and loading.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dancedit/data/synth.hpp"
#include "dancedit/motion/motion.hpp"
#include "dancedit/music/music.hpp"

namespace dancedit::data {

struct DatasetConfig {
  std::size_t records = 64;
  std::size_t frames = motion::kCanonicalFrames;
  std::uint64_t seed = 0;
  // Integer frames per beat, so beats fall on exact frames.
  int min_frames_per_beat = 12;
  int max_frames_per_beat = 20;
  std::size_t min_edits = 1;
  std::size_t max_edits = 3;
  double tau = music::kDefaultBeatTau;
  std::size_t retries = 10;
  std::size_t music_width = music::kDefaultMusicWidth;
  std::vector<std::string> families = transform_families();

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct EditStep {
  EditTransform transform;
  std::string prompt;
  motion::MotionSequence motion;
};

struct DancePairRecord {
  std::string id;
  music::BeatGrid grid;
  std::uint64_t style_seed = 0;
  music::MusicFeatures music;
  motion::MotionSequence seed_motion;
  std::vector<EditStep> edits;  // each applied to the previous motion

  // Motion before edit k (the seed for k = 0).
  const motion::MotionSequence& source_of(std::size_t k) const {
    return k == 0 ? seed_motion : edits.at(k - 1).motion;
  }
};

struct Dataset {
  std::vector<DancePairRecord> records;
  // Indices of records abandoned after exhausting their retries.
  std::vector<std::size_t> skipped;
};

double beat_cost(const motion::MotionSequence& seq, const music::MusicFeatures& music);

// Deterministic per (config, index): attempt r of record i draws from a seed
// derived from (config.seed, i, r). Returns false when all retries fail.
bool make_record(const DatasetConfig& config, std::size_t index, const EditPrompter& prompter,
                 DancePairRecord& out);

Dataset build_dataset(const DatasetConfig& config, const EditPrompter& prompter = TemplatePrompter{});

// Writes music/, motion/ and manifest.json under `root`; returns the manifest.
nlohmann::json save_dataset(const std::filesystem::path& root, const Dataset& dataset,
                            const DatasetConfig& config);
// Reads a manifest and every file it references. Grid and style seed are
// taken from the manifest's optional per-record fields.
Dataset load_dataset(const std::filesystem::path& root);

// Throws io::FormatError naming the first referenced file that is missing or
// fails to decode.
void verify_manifest(const std::filesystem::path& root);

}  // namespace dancedit::data
