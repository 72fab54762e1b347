#include "dancedit/service/session.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>

#include "dancedit/io/binary.hpp"
#include "dancedit/io/seed.hpp"

namespace dancedit::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "session.json";
constexpr const char* kMusicFile = "music.drmu";

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ServiceError unprocessable(const std::string& message) {
  return ServiceError(422, "unprocessable", message);
}

}  // namespace

// ---- music spec -------------------------------------------------------------

MusicSpec MusicSpec::from_json(const json& j) {
  if (!j.is_object()) throw unprocessable("music spec must be an object");
  MusicSpec spec;
  try {
    if (j.contains("features")) {
      if (j.size() != 1) throw unprocessable("uploaded music takes only \"features\"");
      spec.uploaded = music::music_from_json(j.at("features"));
      spec.frames = spec.uploaded->size();
    } else {
      for (const auto& [key, _] : j.items()) {
        if (key != "bpm" && key != "phase" && key != "frames" && key != "seed") {
          throw unprocessable("unknown music spec key \"" + key + "\"");
        }
      }
      music::BeatGrid grid;
      grid.bpm = j.value("bpm", grid.bpm);
      grid.phase = j.value("phase", grid.phase);
      grid.validate();
      spec.grid = grid;
      spec.frames = j.value("frames", spec.frames);
      spec.music_seed = j.value("seed", spec.music_seed);
    }
  } catch (const ServiceError&) {
    throw;
  } catch (const std::exception& e) {
    throw unprocessable(std::string("bad music spec: ") + e.what());
  }
  if (spec.frames < 3) throw unprocessable("music spec needs at least 3 frames");
  return spec;
}

json MusicSpec::to_json() const {
  if (uploaded) return {{"features", music::music_to_json(*uploaded)}};
  return {{"bpm", grid->bpm}, {"phase", grid->phase}, {"frames", frames}, {"seed", music_seed}};
}

music::MusicFeatures MusicSpec::realize(std::size_t width) const {
  if (uploaded) {
    if (uploaded->width != width) {
      throw unprocessable("uploaded music has width " + std::to_string(uploaded->width) +
                          ", the model expects " + std::to_string(width));
    }
    return *uploaded;
  }
  return music::synth_music(*grid, frames, music_seed, width);
}

// ---- iterations -------------------------------------------------------------

json Iteration::to_json() const {
  return {{"index", index},
          {"prompt", prompt ? json(*prompt) : json(nullptr)},
          {"motion", motion_file},
          {"sampler_seed", sampler_seed}};
}

Iteration Iteration::from_json(const json& j) {
  Iteration it;
  it.index = j.at("index").get<std::size_t>();
  if (!j.at("prompt").is_null()) it.prompt = j.at("prompt").get<std::string>();
  it.motion_file = j.at("motion").get<std::string>();
  it.sampler_seed = j.at("sampler_seed").get<std::uint64_t>();
  return it;
}

json Session::to_json() const {
  json active = json::array(), old = json::array();
  for (const auto& it : iterations) active.push_back(it.to_json());
  for (const auto& it : retired) old.push_back(it.to_json());
  return {{"id", id},
          {"seed", seed},
          {"music", spec.to_json()},
          {"frames", music.size()},
          {"beats", music.beat_frames},
          {"iterations", active},
          {"retired", old},
          {"files_written", files_written},
          {"created", created},
          {"updated", updated}};
}

std::uint64_t sampler_seed(std::uint64_t session_seed, std::size_t iteration,
                           const std::string& prompt) {
  return io::mix_seed(io::mix_seed(session_seed, iteration), io::fnv1a(prompt));
}

// ---- store ------------------------------------------------------------------

SessionStore::SessionStore(fs::path root, std::shared_ptr<const diffusion::DenoiserModel> gen,
                           std::shared_ptr<const edit::EditingModel> editor,
                           StoreOptions options)
    : root_(std::move(root)), gen_(std::move(gen)), editor_(std::move(editor)), options_(options) {
  if (editor_ && !gen_) throw std::invalid_argument("editing weights need generation weights");
  fs::create_directories(root_);
  for (const auto& dirent : fs::directory_iterator(root_)) {
    if (!dirent.is_directory() || !fs::exists(dirent.path() / kManifest)) continue;
    try {
      auto entry = std::make_shared<Entry>();
      entry->session = load_session(dirent.path());
      const std::string& id = entry->session.id;
      if (id.size() > 1 && id[0] == 's') {
        next_id_ = std::max<std::size_t>(next_id_, std::stoul(id.substr(1)) + 1);
      }
      sessions_.emplace(id, std::move(entry));
    } catch (const std::exception& e) {
      std::cerr << "skipping session " << dirent.path() << ": " << e.what() << "\n";
    }
  }
}

std::size_t SessionStore::music_width() const {
  return gen_ ? gen_->shape().music_width : options_.music_width;
}

Session SessionStore::load_session(const fs::path& dir) const {
  const json j = json::parse(io::read_file(dir / kManifest));
  Session s;
  s.id = j.at("id").get<std::string>();
  if (s.id != dir.filename().string()) throw io::FormatError("session id does not match its directory");
  s.seed = j.at("seed").get<std::uint64_t>();
  s.spec = MusicSpec::from_json(j.at("music"));
  s.music = music::load_music(dir / kMusicFile);
  for (const auto& it : j.at("iterations")) s.iterations.push_back(Iteration::from_json(it));
  for (const auto& it : j.at("retired")) s.retired.push_back(Iteration::from_json(it));
  s.files_written = j.at("files_written").get<std::size_t>();
  s.created = j.value("created", std::string());
  s.updated = j.value("updated", std::string());
  return s;
}

void SessionStore::persist(const Session& s) const {
  io::write_file(session_dir(s.id) / kManifest, s.to_json().dump(2) + "\n");
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown session \"" + id + "\"");
  return it->second;
}

std::string SessionStore::create(const json& spec_json, std::uint64_t seed) {
  const MusicSpec spec = MusicSpec::from_json(spec_json);
  auto entry = std::make_shared<Entry>();
  Session& s = entry->session;
  s.seed = seed;
  s.spec = spec;
  s.music = spec.realize(music_width());
  s.created = s.updated = now_utc();

  std::lock_guard lock(mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", next_id_++);
  s.id = buf;
  fs::create_directories(session_dir(s.id));
  music::save_music(session_dir(s.id) / kMusicFile, s.music);
  persist(s);
  sessions_.emplace(s.id, entry);
  return s.id;
}

std::size_t SessionStore::predict(const std::string& id) {
  auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  Session& s = entry->session;
  if (!s.iterations.empty()) {
    throw ServiceError(409, "conflict", "session \"" + id + "\" already has an initial prediction");
  }
  if (!gen_) throw ServiceError(503, "unavailable", "generation weights are not loaded");
  if (s.music.width != gen_->shape().music_width) {
    throw unprocessable("session music width " + std::to_string(s.music.width) +
                        " does not match the model's " +
                        std::to_string(gen_->shape().music_width));
  }
  Iteration it;
  it.index = 0;
  it.sampler_seed = sampler_seed(s.seed, 0, "");
  const auto seq = diffusion::sample_motion(*gen_, s.music, options_.steps, it.sampler_seed);
  char name[32];
  std::snprintf(name, sizeof name, "motion_%04zu.drmx", s.files_written);
  it.motion_file = name;
  motion::save_motion(session_dir(id) / it.motion_file, seq);
  s.files_written++;
  s.iterations.push_back(it);
  s.updated = now_utc();
  persist(s);
  return 0;
}

std::size_t SessionStore::edit(const std::string& id, const std::string& prompt) {
  auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  Session& s = entry->session;
  if (edit::tokenize(prompt).empty()) throw unprocessable("prompt has no words");
  if (edit::tokenize(prompt).size() > edit::kMaxPromptTokens) {
    throw unprocessable("prompt has more than " + std::to_string(edit::kMaxPromptTokens) +
                        " words");
  }
  if (s.iterations.empty()) {
    throw ServiceError(409, "conflict", "session \"" + id + "\" has no initial prediction yet");
  }
  if (!editor_) throw ServiceError(503, "unavailable", "editing weights are not loaded");
  const motion::MotionSequence previous =
      motion::load_motion(session_dir(id) / s.iterations.back().motion_file);
  Iteration it;
  it.index = s.iterations.size();
  it.prompt = prompt;
  it.sampler_seed = sampler_seed(s.seed, it.index, prompt);
  const auto seq =
      edit::sample_edit(*editor_, s.music, previous, prompt, options_.steps, it.sampler_seed);
  char name[32];
  std::snprintf(name, sizeof name, "motion_%04zu.drmx", s.files_written);
  it.motion_file = name;
  motion::save_motion(session_dir(id) / it.motion_file, seq);
  s.files_written++;
  s.iterations.push_back(it);
  s.updated = now_utc();
  persist(s);
  return it.index;
}

std::size_t SessionStore::undo(const std::string& id) {
  auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  Session& s = entry->session;
  if (s.iterations.size() < 2) {
    throw ServiceError(409, "conflict", "session \"" + id + "\" has no edit to undo");
  }
  s.retired.push_back(s.iterations.back());
  s.iterations.pop_back();
  s.updated = now_utc();
  persist(s);
  return s.iterations.size() - 1;
}

json SessionStore::describe(const std::string& id) const {
  auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  return entry->session.to_json();
}

std::vector<std::string> SessionStore::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

motion::MotionSequence SessionStore::motion(const std::string& id, std::size_t iteration) const {
  auto entry = find(id);
  std::string file;
  {
    std::lock_guard lock(entry->mutex);
    const auto& its = entry->session.iterations;
    if (iteration >= its.size()) {
      throw ServiceError(404, "not_found",
                         "session \"" + id + "\" has no iteration " + std::to_string(iteration));
    }
    file = its[iteration].motion_file;
  }
  return motion::load_motion(session_dir(id) / file);
}

json SessionStore::motion_payload(const std::string& id, std::size_t iteration,
                                  const std::string& format) const {
  if (format != "features" && format != "positions") {
    throw unprocessable("unknown motion format \"" + format + "\"");
  }
  const auto seq = motion(id, iteration);
  json frames = json::array();
  if (format == "features") {
    const Tensor flat = motion::flatten(seq);
    for (std::size_t r = 0; r < flat.rows(); ++r) {
      const auto row = flat.data().subspan(r * flat.cols(), flat.cols());
      frames.push_back(std::vector<float>(row.begin(), row.end()));
    }
  } else {
    for (const auto& frame : motion::forward_kinematics(seq, motion::Skeleton::standard())) {
      json joints = json::array();
      for (const auto& p : frame) joints.push_back({p.x(), p.y(), p.z()});
      frames.push_back(std::move(joints));
    }
  }
  return {{"session", id},
          {"iteration", iteration},
          {"format", format},
          {"fps", seq.fps},
          {"frames", std::move(frames)}};
}

}  // namespace dancedit::service
