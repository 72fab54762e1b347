#pragma once

// Motion data model: 24-joint skeleton, 6D joint rotations, root trajectory
// and foot contacts. Conventions: +Y up, facing +Z, meters, 30 fps.

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dancedit/tensor/tensor.hpp"

namespace dancedit::motion {

inline constexpr std::size_t kJointCount = 24;
inline constexpr std::size_t kRootWidth = 3;
inline constexpr std::size_t kRotWidth = kJointCount * 6;
inline constexpr std::size_t kContactWidth = 4;
inline constexpr std::size_t kFeatureWidth = kRootWidth + kRotWidth + kContactWidth;  // 151
inline constexpr std::size_t kRotOffset = kRootWidth;
inline constexpr std::size_t kContactOffset = kRootWidth + kRotWidth;
inline constexpr int kDefaultFps = 30;
inline constexpr std::size_t kCanonicalFrames = 150;
// Ankles and toes; contact bit order follows this list.
inline constexpr std::array<std::size_t, 4> kFootJoints{7, 8, 10, 11};

enum Joint : std::size_t {
  kPelvis = 0, kLeftHip, kRightHip, kSpine1, kLeftKnee, kRightKnee, kSpine2,
  kLeftAnkle, kRightAnkle, kSpine3, kLeftFoot, kRightFoot, kNeck, kLeftCollar,
  kRightCollar, kHead, kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow,
  kLeftWrist, kRightWrist, kLeftHand, kRightHand
};

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Rot6d = std::array<double, 6>;

// Channel index of component `k` (0..5) of joint `j` in the flat feature row.
constexpr std::size_t rot_channel(std::size_t joint, std::size_t k) {
  return kRotOffset + joint * 6 + k;
}

struct FrameFeature {
  std::array<float, 3> root_pos{};
  std::array<float, kRotWidth> joint_rot6d{};
  std::array<float, kContactWidth> foot_contact{};

  Rot6d rot6d(std::size_t joint) const;
  void set_rot6d(std::size_t joint, const Rot6d& v);
  bool operator==(const FrameFeature&) const = default;
};

struct MotionSequence {
  int fps = kDefaultFps;
  std::vector<FrameFeature> frames;

  std::size_t size() const { return frames.size(); }
  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;
  bool operator==(const MotionSequence&) const = default;
};

struct Skeleton {
  std::array<int, kJointCount> parent{};
  std::array<Vec3, kJointCount> offset{};
  std::array<std::size_t, 4> foot_joints = kFootJoints;

  // SMPL parenting with a fixed unit-height rest pose.
  static const Skeleton& standard();
  void validate() const;
};

// Per frame, 24 joint positions.
using JointPositions = std::vector<std::array<Vec3, kJointCount>>;

Mat3 rot6d_to_matrix(const Rot6d& v);
Rot6d matrix_to_rot6d(const Mat3& r);
// Gram-Schmidt without the degeneracy check; norms are floored at 1e-8.
Mat3 rot6d_to_matrix_unchecked(const Rot6d& v);

// R = Rz(roll) · Ry(yaw) · Rx(pitch)
Mat3 from_euler_zyx(double pitch, double yaw, double roll);
// Inverse of from_euler_zyx for |yaw| < pi/2. Returns {pitch, yaw, roll}.
std::array<double, 3> to_euler_zyx(const Mat3& r);
Mat3 rotation_y(double angle);

JointPositions forward_kinematics(const MotionSequence& seq, const Skeleton& skel);
MotionSequence canonicalize_first_frame(const MotionSequence& seq);

Tensor flatten(const MotionSequence& seq);
// Contacts are thresholded at 0.5.
MotionSequence unflatten(const Tensor& features, int fps = kDefaultFps);

// Per frame, 4 contact bits in kFootJoints order. Speed uses the forward
// difference (backward at the last frame).
std::vector<std::array<float, kContactWidth>> contacts_from_positions(
    const JointPositions& positions, const Skeleton& skel, double threshold = 0.01);

// Mean over joints of the per-frame joint speed (central differences,
// one-sided at the ends), in meters per frame.
std::vector<double> mean_joint_speed(const JointPositions& positions);

// Differentiable forward kinematics over flat features [N×151] -> [N×72]
// (joint-major xyz).
template <class T>
BasicTensor<T> fk_positions(const BasicTensor<T>& features, const Skeleton& skel);

// "DRMX" files: magic, version u32, fps u32, N u32, J u32 (=24), N×151 f32.
inline constexpr std::uint32_t kMotionVersion = 1;
std::string encode_motion(const MotionSequence& seq);
MotionSequence decode_motion(std::string_view bytes);
void save_motion(const std::filesystem::path& path, const MotionSequence& seq);
MotionSequence load_motion(const std::filesystem::path& path);

// {"fps":30,"frames":[[...151 floats...]]}
nlohmann::json motion_to_json(const MotionSequence& seq);
MotionSequence motion_from_json(const nlohmann::json& j);

}  // namespace dancedit::motion
