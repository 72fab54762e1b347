#pragma once

// Procedural beat-locked dances and the edit transforms that ground prompts.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dancedit/motion/motion.hpp"
#include "dancedit/music/music.hpp"

namespace dancedit::data {

// Every animated joint angle is stationary on the beat grid, so kinematic
// beats land on musical beats. Output is canonicalized, n frames at 30 fps.
motion::MotionSequence synth_dance(const music::BeatGrid& grid, std::uint64_t style_seed,
                                   std::size_t n = motion::kCanonicalFrames);

// Family ids.
inline constexpr const char* kRaiseLeftArm = "raise_left_arm";
inline constexpr const char* kKickRightLegTwice = "kick_right_leg_twice";
inline constexpr const char* kWidenArmSwing = "widen_arm_swing";
inline constexpr const char* kSlowTempo = "slow_tempo";
inline constexpr const char* kFreezeHead = "freeze_head";

const std::vector<std::string>& transform_families();

struct EditTransform {
  std::string id;
  std::map<std::string, double> params;

  // Indices into the 151-wide feature row that the transform may change.
  std::vector<std::size_t> affected_channels() const;
  bool invertible() const;
  // Throws std::invalid_argument for transforms without an inverse.
  EditTransform inverse() const;
  nlohmann::json to_json() const;
  static EditTransform from_json(const nlohmann::json& j);
  bool operator==(const EditTransform&) const = default;
};

// Parameters drawn for a family on the given beat grid.
EditTransform sample_transform(const std::string& id, const music::BeatGrid& grid,
                               std::mt19937_64& rng);

// Deterministic channel-level edit. Unknown ids throw std::invalid_argument.
motion::MotionSequence apply_transform(const motion::MotionSequence& seq,
                                       const EditTransform& transform);

// Prompt wording for a transform. Implementations may call out to an
// external captioning service; the default renders templates.
class EditPrompter {
 public:
  virtual ~EditPrompter() = default;
  virtual std::string prompt(const EditTransform& transform, std::mt19937_64& rng) const = 0;
};

class TemplatePrompter final : public EditPrompter {
 public:
  std::string prompt(const EditTransform& transform, std::mt19937_64& rng) const override;
  // All paraphrases for a family.
  static const std::vector<std::string>& paraphrases(const std::string& id);
};

struct AppliedEdit {
  motion::MotionSequence motion;
  std::string prompt;
};

AppliedEdit apply_edit(const motion::MotionSequence& seq, const EditTransform& transform,
                       const EditPrompter& prompter, std::mt19937_64& rng);

}  // namespace dancedit::data
