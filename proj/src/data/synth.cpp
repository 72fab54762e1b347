#include "dancedit/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dancedit::data {

using motion::Joint;
using motion::MotionSequence;
using std::numbers::pi;

namespace {

constexpr double kStandHeight = 0.55;

struct Euler {
  double pitch = 0, yaw = 0, roll = 0;
};

struct DanceStyle {
  double pelvis_yaw, pelvis_pitch, spine_roll, spine_pitch, nod, head_yaw, collar;
  double arm_swing, arm_raise, arm_base, elbow_base, elbow_flex, swing_sign;
  double leg_lift, knee_flex, ankle, root_sway, root_bob;
};

DanceStyle draw_style(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  DanceStyle s;
  s.pelvis_yaw = u(0.08, 0.3);
  s.pelvis_pitch = u(0.02, 0.08);
  s.spine_roll = u(0.04, 0.15);
  s.spine_pitch = u(0.02, 0.1);
  s.nod = u(0.08, 0.25);
  s.head_yaw = u(0.05, 0.3);
  s.collar = u(0.02, 0.1);
  s.arm_swing = u(0.25, 0.6);
  s.arm_raise = u(0.15, 0.45);
  s.arm_base = u(1.0, 1.35);
  s.elbow_base = u(0.2, 0.6);
  s.elbow_flex = u(0.2, 0.6);
  s.swing_sign = u(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  s.leg_lift = u(0.2, 0.55);
  s.knee_flex = u(0.2, 0.7);
  s.ankle = u(0.05, 0.2);
  s.root_sway = u(0.01, 0.06);
  s.root_bob = u(0.005, 0.025);
  return s;
}

Euler joint_euler(const MotionSequence& seq, std::size_t frame, std::size_t joint) {
  const auto e = motion::to_euler_zyx(motion::rot6d_to_matrix_unchecked(
      seq.frames[frame].rot6d(joint)));
  return {e[0], e[1], e[2]};
}

void set_joint_euler(MotionSequence& seq, std::size_t frame, std::size_t joint, const Euler& e) {
  seq.frames[frame].set_rot6d(joint,
                              motion::matrix_to_rot6d(motion::from_euler_zyx(e.pitch, e.yaw, e.roll)));
}

double param(const EditTransform& t, const std::string& key) {
  auto it = t.params.find(key);
  if (it == t.params.end()) {
    throw std::invalid_argument("transform " + t.id + " lacks parameter " + key);
  }
  return it->second;
}

constexpr std::size_t kUpperBody[] = {
    Joint::kSpine1,       Joint::kSpine2,        Joint::kSpine3,     Joint::kNeck,
    Joint::kLeftCollar,   Joint::kRightCollar,   Joint::kHead,       Joint::kLeftShoulder,
    Joint::kRightShoulder, Joint::kLeftElbow,    Joint::kRightElbow, Joint::kLeftWrist,
    Joint::kRightWrist,   Joint::kLeftHand,      Joint::kRightHand};

void add_rot_channels(std::vector<std::size_t>& out, std::size_t joint) {
  for (std::size_t k = 0; k < 6; ++k) out.push_back(motion::rot_channel(joint, k));
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * pi); }

}  // namespace

MotionSequence synth_dance(const music::BeatGrid& grid, std::uint64_t style_seed, std::size_t n) {
  grid.validate();
  if (n < 2) throw std::invalid_argument("synth_dance needs at least 2 frames");
  const DanceStyle s = draw_style(style_seed);
  const double fpb = grid.frames_per_beat();
  MotionSequence seq;
  seq.frames.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (double(i) - grid.phase) / fpb;
    // Every channel is a function of cos(pi u) alone, so speed carries a
    // |sin(pi u)| factor and vanishes only on beats. One-beat cycles would
    // also stop mid-beat.
    const double c1 = std::cos(pi * u);
    std::array<Euler, motion::kJointCount> e{};
    e[Joint::kPelvis] = {s.pelvis_pitch * c1, s.pelvis_yaw * c1, 0.0};
    for (auto j : {Joint::kSpine1, Joint::kSpine2, Joint::kSpine3}) {
      e[j] = {s.spine_pitch * c1, 0.0, s.spine_roll * c1};
    }
    e[Joint::kNeck] = {s.nod * c1, 0.0, 0.0};
    e[Joint::kHead] = {0.5 * s.nod * c1, s.head_yaw * c1, 0.0};
    e[Joint::kLeftCollar] = {0.0, 0.0, s.collar * c1};
    e[Joint::kRightCollar] = {0.0, 0.0, -s.collar * c1};
    e[Joint::kLeftShoulder] = {0.0, s.swing_sign * s.arm_swing * c1,
                               -s.arm_base + s.arm_raise * c1};
    e[Joint::kRightShoulder] = {0.0, s.swing_sign * s.arm_swing * c1,
                                s.arm_base - s.arm_raise * c1};
    const double flex = s.elbow_base + s.elbow_flex * 0.5 * (1.0 + c1);
    e[Joint::kLeftElbow] = {0.0, -flex, 0.0};
    e[Joint::kRightElbow] = {0.0, flex, 0.0};
    e[Joint::kLeftHip] = {-s.leg_lift * 0.5 * (1.0 - c1), 0.0, 0.0};
    e[Joint::kRightHip] = {-s.leg_lift * 0.5 * (1.0 + c1), 0.0, 0.0};
    e[Joint::kLeftKnee] = {s.knee_flex * 0.5 * (1.0 - c1), 0.0, 0.0};
    e[Joint::kRightKnee] = {s.knee_flex * 0.5 * (1.0 + c1), 0.0, 0.0};
    e[Joint::kLeftAnkle] = {-s.ankle * 0.5 * (1.0 - c1), 0.0, 0.0};
    e[Joint::kRightAnkle] = {-s.ankle * 0.5 * (1.0 + c1), 0.0, 0.0};

    auto& f = seq.frames[i];
    f.root_pos = {float(s.root_sway * c1), float(kStandHeight + s.root_bob * c1), 0.0f};
    for (std::size_t j = 0; j < motion::kJointCount; ++j) {
      f.set_rot6d(j, motion::matrix_to_rot6d(motion::from_euler_zyx(e[j].pitch, e[j].yaw,
                                                                    e[j].roll)));
    }
  }
  seq = motion::canonicalize_first_frame(seq);
  const auto& skel = motion::Skeleton::standard();
  const auto contacts = motion::contacts_from_positions(motion::forward_kinematics(seq, skel), skel);
  for (std::size_t i = 0; i < n; ++i) seq.frames[i].foot_contact = contacts[i];
  return seq;
}

const std::vector<std::string>& transform_families() {
  static const std::vector<std::string> ids{kRaiseLeftArm, kKickRightLegTwice, kWidenArmSwing,
                                            kSlowTempo, kFreezeHead};
  return ids;
}

std::vector<std::size_t> EditTransform::affected_channels() const {
  std::vector<std::size_t> out;
  if (id == kRaiseLeftArm) {
    add_rot_channels(out, Joint::kLeftShoulder);
  } else if (id == kKickRightLegTwice) {
    add_rot_channels(out, Joint::kRightHip);
    add_rot_channels(out, Joint::kRightKnee);
    out.push_back(motion::kContactOffset + 1);
    out.push_back(motion::kContactOffset + 3);
  } else if (id == kWidenArmSwing) {
    add_rot_channels(out, Joint::kLeftShoulder);
    add_rot_channels(out, Joint::kRightShoulder);
  } else if (id == kSlowTempo) {
    for (auto j : kUpperBody) add_rot_channels(out, j);
  } else if (id == kFreezeHead) {
    add_rot_channels(out, Joint::kNeck);
    add_rot_channels(out, Joint::kHead);
  } else {
    throw std::invalid_argument("unknown transform id \"" + id + "\"");
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool EditTransform::invertible() const {
  return id == kRaiseLeftArm || id == kKickRightLegTwice || id == kWidenArmSwing;
}

EditTransform EditTransform::inverse() const {
  EditTransform inv = *this;
  if (id == kRaiseLeftArm) {
    inv.params["gain"] = 1.0 / param(*this, "gain");
  } else if (id == kKickRightLegTwice) {
    inv.params["height"] = -param(*this, "height");
  } else if (id == kWidenArmSwing) {
    inv.params["gain"] = 1.0 / param(*this, "gain");
  } else {
    throw std::invalid_argument("transform " + id + " has no inverse");
  }
  return inv;
}

nlohmann::json EditTransform::to_json() const {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [k, v] : params) p[k] = v;
  return {{"id", id}, {"params", std::move(p)}};
}

EditTransform EditTransform::from_json(const nlohmann::json& j) {
  EditTransform t;
  t.id = j.at("id").get<std::string>();
  if (j.contains("params")) {
    for (const auto& [k, v] : j.at("params").items()) t.params[k] = v.get<double>();
  }
  t.affected_channels();  // validates the id
  return t;
}

EditTransform sample_transform(const std::string& id, const music::BeatGrid& grid,
                               std::mt19937_64& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  EditTransform t;
  t.id = id;
  if (id == kRaiseLeftArm) {
    t.params["gain"] = u(2.0, 3.0);
  } else if (id == kKickRightLegTwice) {
    t.params["height"] = u(0.6, 0.9);
    t.params["beat_a"] = 1;
    t.params["beat_b"] = 3;
    t.params["phase"] = grid.phase;
    t.params["frames_per_beat"] = grid.frames_per_beat();
  } else if (id == kWidenArmSwing) {
    t.params["gain"] = u(1.6, 2.2);
  } else if (id == kSlowTempo) {
    t.params["factor"] = 2.0;
    t.params["phase"] = grid.phase;
    t.params["frames_per_beat"] = grid.frames_per_beat();
  } else if (id == kFreezeHead) {
    // no parameters
  } else {
    throw std::invalid_argument("unknown transform id \"" + id + "\"");
  }
  return t;
}

MotionSequence apply_transform(const MotionSequence& seq, const EditTransform& t) {
  seq.validate();
  const std::size_t n = seq.size();
  MotionSequence out = seq;
  if (t.id == kRaiseLeftArm) {
    // Roll is the drop of the arm below horizontal; dividing it raises the arm.
    const double gain = param(t, "gain");
    if (!(gain > 0.0)) throw std::invalid_argument("raise_left_arm gain must be positive");
    if (gain == 1.0) return out;
    for (std::size_t i = 0; i < n; ++i) {
      Euler e = joint_euler(seq, i, Joint::kLeftShoulder);
      e.roll /= gain;
      set_joint_euler(out, i, Joint::kLeftShoulder, e);
    }
  } else if (t.id == kWidenArmSwing) {
    const double gain = param(t, "gain");
    if (!(gain > 0.0)) throw std::invalid_argument("widen_arm_swing gain must be positive");
    if (gain == 1.0) return out;
    for (auto j : {Joint::kLeftShoulder, Joint::kRightShoulder}) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += joint_euler(seq, i, j).yaw;
      mean /= double(n);
      for (std::size_t i = 0; i < n; ++i) {
        Euler e = joint_euler(seq, i, j);
        e.yaw = mean + gain * (e.yaw - mean);
        set_joint_euler(out, i, j, e);
      }
    }
  } else if (t.id == kKickRightLegTwice) {
    const double height = param(t, "height");
    if (height == 0.0) return out;
    const double fpb = param(t, "frames_per_beat"), phase = param(t, "phase");
    for (const char* key : {"beat_a", "beat_b"}) {
      const double start = phase + param(t, key) * fpb;
      for (std::size_t i = 0; i < n; ++i) {
        const double s = (double(i) - start) / fpb;
        if (s <= 0.0 || s >= 1.0) continue;
        const double bump = std::pow(std::sin(pi * s), 2);
        Euler hip = joint_euler(out, i, Joint::kRightHip);
        hip.pitch -= height * bump;
        set_joint_euler(out, i, Joint::kRightHip, hip);
        Euler knee = joint_euler(out, i, Joint::kRightKnee);
        knee.pitch += 0.6 * height * bump;
        set_joint_euler(out, i, Joint::kRightKnee, knee);
      }
    }
    const auto& skel = motion::Skeleton::standard();
    const auto contacts =
        motion::contacts_from_positions(motion::forward_kinematics(out, skel), skel);
    for (std::size_t i = 0; i < n; ++i) {
      out.frames[i].foot_contact[1] = contacts[i][1];
      out.frames[i].foot_contact[3] = contacts[i][3];
    }
  } else if (t.id == kSlowTempo) {
    const double factor = param(t, "factor");
    if (!(factor >= 1.0)) throw std::invalid_argument("slow_tempo factor must be >= 1");
    if (factor == 1.0) return out;
    const double fpb = param(t, "frames_per_beat"), phase = param(t, "phase");
    for (auto j : kUpperBody) {
      std::vector<Euler> src(n);
      for (std::size_t i = 0; i < n; ++i) src[i] = joint_euler(seq, i, j);
      for (std::size_t i = 0; i < n; ++i) {
        // Each beat interval maps onto 1/factor of an interval with an
        // ease-in-out warp, so the upper body still rests on every beat.
        const double u = (double(i) - phase) / fpb;
        const double k = std::floor(u), s = u - k;
        const double warped = k + s - std::sin(2.0 * pi * s) / (2.0 * pi);
        const double tau = std::clamp(phase + fpb * warped / factor, 0.0, double(n - 1));
        const auto lo = static_cast<std::size_t>(std::floor(tau));
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double w = tau - double(lo);
        auto lerp = [&](double a, double b) { return a + w * wrap_angle(b - a); };
        set_joint_euler(out, i, j,
                        {lerp(src[lo].pitch, src[hi].pitch), lerp(src[lo].yaw, src[hi].yaw),
                         lerp(src[lo].roll, src[hi].roll)});
      }
    }
  } else if (t.id == kFreezeHead) {
    for (auto j : {Joint::kNeck, Joint::kHead}) {
      Euler mean;
      for (std::size_t i = 0; i < n; ++i) {
        const Euler e = joint_euler(seq, i, j);
        mean.pitch += e.pitch / double(n);
        mean.yaw += e.yaw / double(n);
        mean.roll += e.roll / double(n);
      }
      for (std::size_t i = 0; i < n; ++i) set_joint_euler(out, i, j, mean);
    }
  } else {
    throw std::invalid_argument("unknown transform id \"" + t.id + "\"");
  }
  return out;
}

const std::vector<std::string>& TemplatePrompter::paraphrases(const std::string& id) {
  static const std::map<std::string, std::vector<std::string>> table{
      {kRaiseLeftArm,
       {"raise your left arm higher", "lift the left arm up", "hold your left arm higher"}},
      {kKickRightLegTwice, {"kick your right leg twice", "do two kicks with the right leg"}},
      {kWidenArmSwing, {"swing your arms wider", "make the arm swings bigger"}},
      {kSlowTempo, {"move your upper body at half speed", "slow down the upper body"}},
      {kFreezeHead, {"keep your head still", "stop moving your head"}},
  };
  auto it = table.find(id);
  if (it == table.end()) throw std::invalid_argument("unknown transform id \"" + id + "\"");
  return it->second;
}

std::string TemplatePrompter::prompt(const EditTransform& transform, std::mt19937_64& rng) const {
  const auto& options = paraphrases(transform.id);
  return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

AppliedEdit apply_edit(const MotionSequence& seq, const EditTransform& transform,
                       const EditPrompter& prompter, std::mt19937_64& rng) {
  AppliedEdit out;
  out.motion = apply_transform(seq, transform);
  out.prompt = prompter.prompt(transform, rng);
  return out;
}

}  // namespace dancedit::data
