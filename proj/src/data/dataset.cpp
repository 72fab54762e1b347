#include "dancedit/data/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "dancedit/io/binary.hpp"
#include "dancedit/io/seed.hpp"

namespace dancedit::data {

namespace fs = std::filesystem;
using nlohmann::json;

void DatasetConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("dataset config: " + m); };
  if (records == 0) fail("records must be positive");
  if (frames < 16) fail("frames must be at least 16");
  if (min_frames_per_beat < 8 || max_frames_per_beat < min_frames_per_beat) {
    fail("frames per beat range must satisfy 8 <= min <= max");
  }
  if (60.0 * motion::kDefaultFps / max_frames_per_beat < 40.0 ||
      60.0 * motion::kDefaultFps / min_frames_per_beat > 240.0) {
    fail("frames per beat range maps outside 40..240 bpm");
  }
  if (min_edits == 0 || max_edits < min_edits) fail("edits range must satisfy 1 <= min <= max");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (retries == 0) fail("retries must be positive");
  if (music_width == 0) fail("music_width must be positive");
  if (families.empty()) fail("at least one transform family must be enabled");
  const auto& known = transform_families();
  std::set<std::string> seen;
  for (const auto& f : families) {
    if (std::find(known.begin(), known.end(), f) == known.end()) fail("unknown family " + f);
    if (!seen.insert(f).second) fail("duplicate family " + f);
  }
  if (max_edits > families.size()) fail("max_edits exceeds the number of enabled families");
}

json DatasetConfig::to_json() const {
  return {{"records", records},
          {"frames", frames},
          {"seed", seed},
          {"min_frames_per_beat", min_frames_per_beat},
          {"max_frames_per_beat", max_frames_per_beat},
          {"min_edits", min_edits},
          {"max_edits", max_edits},
          {"tau", tau},
          {"retries", retries},
          {"music_width", music_width},
          {"families", families}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "records") c.records = v.get<std::size_t>();
    else if (key == "frames") c.frames = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "min_frames_per_beat") c.min_frames_per_beat = v.get<int>();
    else if (key == "max_frames_per_beat") c.max_frames_per_beat = v.get<int>();
    else if (key == "min_edits") c.min_edits = v.get<std::size_t>();
    else if (key == "max_edits") c.max_edits = v.get<std::size_t>();
    else if (key == "tau") c.tau = v.get<double>();
    else if (key == "retries") c.retries = v.get<std::size_t>();
    else if (key == "music_width") c.music_width = v.get<std::size_t>();
    else if (key == "families") c.families = v.get<std::vector<std::string>>();
    else throw std::invalid_argument("dataset config: unknown key \"" + key + "\"");
  }
  c.validate();
  return c;
}

double beat_cost(const motion::MotionSequence& seq, const music::MusicFeatures& music) {
  const auto beats = music::motion_beats(seq, motion::Skeleton::standard());
  return music::dtw_beat_align(beats, music.beat_frames).normalized_cost();
}

namespace {

std::string record_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rec_%04zu", index);
  return buf;
}

bool try_record(const DatasetConfig& c, std::mt19937_64& rng, const EditPrompter& prompter,
                DancePairRecord& out) {
  const int fpb = std::uniform_int_distribution<int>(c.min_frames_per_beat,
                                                     c.max_frames_per_beat)(rng);
  const int phase = std::uniform_int_distribution<int>(1, fpb - 1)(rng);
  out.grid = {60.0 * motion::kDefaultFps / fpb, double(phase)};
  out.style_seed = rng();
  out.music = music::synth_music(out.grid, c.frames, rng(), c.music_width);
  out.seed_motion = synth_dance(out.grid, out.style_seed, c.frames);
  if (!music::accept_pair(beat_cost(out.seed_motion, out.music), c.tau)) return false;

  const auto n_edits = std::uniform_int_distribution<std::size_t>(c.min_edits, c.max_edits)(rng);
  std::vector<std::string> families = c.families;
  std::shuffle(families.begin(), families.end(), rng);
  out.edits.clear();
  for (std::size_t k = 0; k < n_edits; ++k) {
    EditStep step;
    step.transform = sample_transform(families[k], out.grid, rng);
    auto applied = apply_edit(out.source_of(k), step.transform, prompter, rng);
    if (!music::accept_pair(beat_cost(applied.motion, out.music), c.tau)) return false;
    step.motion = std::move(applied.motion);
    step.prompt = std::move(applied.prompt);
    out.edits.push_back(std::move(step));
  }
  return true;
}

}  // namespace

bool make_record(const DatasetConfig& config, std::size_t index, const EditPrompter& prompter,
                 DancePairRecord& out) {
  config.validate();
  for (std::size_t attempt = 0; attempt < config.retries; ++attempt) {
    std::mt19937_64 rng(io::mix_seed(io::mix_seed(config.seed, index), attempt));
    DancePairRecord rec;
    rec.id = record_id(index);
    if (try_record(config, rng, prompter, rec)) {
      out = std::move(rec);
      return true;
    }
  }
  return false;
}

Dataset build_dataset(const DatasetConfig& config, const EditPrompter& prompter) {
  config.validate();
  Dataset ds;
  for (std::size_t i = 0; i < config.records; ++i) {
    DancePairRecord rec;
    if (make_record(config, i, prompter, rec)) {
      ds.records.push_back(std::move(rec));
    } else {
      ds.skipped.push_back(i);
    }
  }
  return ds;
}

json save_dataset(const fs::path& root, const Dataset& dataset, const DatasetConfig& config) {
  json records = json::array();
  for (const auto& rec : dataset.records) {
    const std::string music_ref = "music/" + rec.id + ".drmu";
    const std::string seed_ref = "motion/" + rec.id + "_seed.drmx";
    music::save_music(root / music_ref, rec.music);
    motion::save_motion(root / seed_ref, rec.seed_motion);
    json edits = json::array();
    for (std::size_t k = 0; k < rec.edits.size(); ++k) {
      const auto& e = rec.edits[k];
      const std::string ref = "motion/" + rec.id + "_edit" + std::to_string(k + 1) + ".drmx";
      motion::save_motion(root / ref, e.motion);
      edits.push_back({{"prompt", e.prompt}, {"motion", ref}, {"transform", e.transform.to_json()}});
    }
    records.push_back({{"id", rec.id},
                       {"music", music_ref},
                       {"seed", seed_ref},
                       {"bpm", rec.grid.bpm},
                       {"phase", rec.grid.phase},
                       {"style_seed", rec.style_seed},
                       {"edits", std::move(edits)}});
  }
  json manifest = {{"config", config.to_json()},
                   {"records", std::move(records)},
                   {"skipped", dataset.skipped}};
  io::write_file(root / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

Dataset load_dataset(const fs::path& root) {
  const json manifest = json::parse(io::read_file(root / "manifest.json"));
  Dataset ds;
  for (const auto& r : manifest.at("records")) {
    DancePairRecord rec;
    rec.id = r.value("id", std::string());
    rec.grid.bpm = r.value("bpm", 0.0);
    rec.grid.phase = r.value("phase", 0.0);
    rec.style_seed = r.value("style_seed", std::uint64_t{0});
    rec.music = music::load_music(root / r.at("music").get<std::string>());
    rec.seed_motion = motion::load_motion(root / r.at("seed").get<std::string>());
    for (const auto& e : r.at("edits")) {
      EditStep step;
      step.prompt = e.at("prompt").get<std::string>();
      step.transform = EditTransform::from_json(e.at("transform"));
      step.motion = motion::load_motion(root / e.at("motion").get<std::string>());
      rec.edits.push_back(std::move(step));
    }
    if (rec.edits.empty()) throw io::FormatError("record " + rec.id + " has no edits");
    ds.records.push_back(std::move(rec));
  }
  if (manifest.contains("skipped")) ds.skipped = manifest["skipped"].get<std::vector<std::size_t>>();
  return ds;
}

void verify_manifest(const fs::path& root) {
  json manifest;
  try {
    manifest = json::parse(io::read_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw io::FormatError(std::string("manifest.json: ") + e.what());
  }
  auto check = [&](const std::string& ref, auto&& loader) {
    try {
      loader(root / ref);
    } catch (const std::exception& e) {
      throw io::FormatError(ref + ": " + e.what());
    }
  };
  for (const auto& r : manifest.at("records")) {
    check(r.at("music").get<std::string>(), [](const fs::path& p) { music::load_music(p); });
    check(r.at("seed").get<std::string>(), [](const fs::path& p) { motion::load_motion(p); });
    for (const auto& e : r.at("edits")) {
      check(e.at("motion").get<std::string>(), [](const fs::path& p) { motion::load_motion(p); });
    }
  }
}

}  // namespace dancedit::data
