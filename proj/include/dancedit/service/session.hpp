#pragma once

// Iterative editing sessions: predict an initial dance, chain prompt edits on
// the latest iteration, undo. Every mutation is written through to disk.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dancedit/diffusion/denoiser.hpp"
#include "dancedit/edit/cem.hpp"
#include "dancedit/music/music.hpp"

namespace dancedit::service {

// Carries the HTTP status the server maps it to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

// Synthetic beat grid ({"bpm","phase","frames","seed"}) or uploaded features
// ({"features": music JSON}).
struct MusicSpec {
  std::optional<music::BeatGrid> grid;
  std::size_t frames = motion::kCanonicalFrames;
  std::uint64_t music_seed = 0;
  std::optional<music::MusicFeatures> uploaded;

  static MusicSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  music::MusicFeatures realize(std::size_t width) const;
};

struct Iteration {
  std::size_t index = 0;
  std::optional<std::string> prompt;  // empty for the initial prediction
  std::string motion_file;
  std::uint64_t sampler_seed = 0;

  nlohmann::json to_json() const;
  static Iteration from_json(const nlohmann::json& j);
  bool operator==(const Iteration&) const = default;
};

struct Session {
  std::string id;
  std::uint64_t seed = 0;
  MusicSpec spec;
  music::MusicFeatures music;
  std::vector<Iteration> iterations;  // active chain
  std::vector<Iteration> retired;     // undone, files kept
  std::size_t files_written = 0;
  std::string created;
  std::string updated;

  nlohmann::json to_json() const;
};

// hash(session seed, iteration index, prompt).
std::uint64_t sampler_seed(std::uint64_t session_seed, std::size_t iteration,
                           const std::string& prompt);

struct StoreOptions {
  int steps = diffusion::kDefaultSamplingSteps;
  std::size_t music_width = music::kDefaultMusicWidth;  // used when no model is loaded
};

// Sessions keyed by id under `root`, one directory each. Operations on one
// session are serialized; different sessions proceed independently. The
// models are shared read-only and may be null, which makes predict/edit fail
// with 503.
class SessionStore {
 public:
  SessionStore(std::filesystem::path root, std::shared_ptr<const diffusion::DenoiserModel> gen,
               std::shared_ptr<const edit::EditingModel> editor, StoreOptions options = {});

  std::string create(const nlohmann::json& spec, std::uint64_t seed);
  std::size_t predict(const std::string& id);
  std::size_t edit(const std::string& id, const std::string& prompt);
  // Returns the new active iteration index.
  std::size_t undo(const std::string& id);

  nlohmann::json describe(const std::string& id) const;
  std::vector<std::string> list() const;
  motion::MotionSequence motion(const std::string& id, std::size_t iteration) const;
  // format "features" (N×151) or "positions" (N×24×3).
  nlohmann::json motion_payload(const std::string& id, std::size_t iteration,
                                const std::string& format) const;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path session_dir(const std::string& id) const { return root_ / id; }

 private:
  struct Entry {
    mutable std::mutex mutex;
    Session session;
  };

  std::shared_ptr<Entry> find(const std::string& id) const;
  void persist(const Session& s) const;
  Session load_session(const std::filesystem::path& dir) const;
  std::size_t music_width() const;

  std::filesystem::path root_;
  std::shared_ptr<const diffusion::DenoiserModel> gen_;
  std::shared_ptr<const edit::EditingModel> editor_;
  StoreOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::size_t next_id_ = 1;
};

}  // namespace dancedit::service
