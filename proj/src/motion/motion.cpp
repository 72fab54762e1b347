#include "dancedit/motion/motion.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

#include "dancedit/io/binary.hpp"

namespace dancedit::motion {

namespace {

constexpr double kDegenerate = 1e-8;

// Rest offsets of an average adult in meters, scaled to unit height below.
constexpr double kRestOffsets[kJointCount][3] = {
    {0.0, 0.0, 0.0},         // pelvis
    {0.06, -0.09, 0.0},      // left hip
    {-0.06, -0.09, 0.0},     // right hip
    {0.0, 0.11, -0.01},      // spine1
    {0.04, -0.38, 0.0},      // left knee
    {-0.04, -0.38, 0.0},     // right knee
    {0.0, 0.13, 0.0},        // spine2
    {0.0, -0.40, -0.04},     // left ankle
    {0.0, -0.40, -0.04},     // right ankle
    {0.0, 0.05, 0.02},       // spine3
    {0.02, -0.06, 0.12},     // left foot
    {-0.02, -0.06, 0.12},    // right foot
    {0.0, 0.21, -0.03},      // neck
    {0.07, 0.11, -0.02},     // left collar
    {-0.07, 0.11, -0.02},    // right collar
    {0.0, 0.09, 0.05},       // head
    {0.12, 0.04, -0.01},     // left shoulder
    {-0.12, 0.04, -0.01},    // right shoulder
    {0.26, 0.0, -0.02},      // left elbow
    {-0.26, 0.0, -0.02},     // right elbow
    {0.25, 0.01, 0.0},       // left wrist
    {-0.25, 0.01, 0.0},      // right wrist
    {0.08, -0.01, -0.01},    // left hand
    {-0.08, -0.01, -0.01},   // right hand
};
constexpr double kFigureHeight = 1.7;
constexpr int kSmplParents[kJointCount] = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                                          9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

struct GramSchmidt {
  Vec3 a, b, b1, b2, u;
  double na = 0, nu = 0, s = 0;
  Mat3 r;
};

GramSchmidt gram_schmidt(const Vec3& a, const Vec3& b) {
  GramSchmidt gs;
  gs.a = a;
  gs.b = b;
  gs.na = std::max(a.norm(), kDegenerate);
  gs.b1 = a / gs.na;
  gs.s = gs.b1.dot(b);
  gs.u = b - gs.s * gs.b1;
  gs.nu = std::max(gs.u.norm(), kDegenerate);
  gs.b2 = gs.u / gs.nu;
  gs.r.col(0) = gs.b1;
  gs.r.col(1) = gs.b2;
  gs.r.col(2) = gs.b1.cross(gs.b2);
  return gs;
}

// Accumulates d(loss)/d(a,b) from d(loss)/dR.
void gram_schmidt_backward(const GramSchmidt& gs, const Mat3& g_r, Vec3& g_a, Vec3& g_b) {
  Vec3 g_b1 = g_r.col(0);
  Vec3 g_b2 = g_r.col(1);
  const Vec3 g_b3 = g_r.col(2);
  g_b1 += gs.b2.cross(g_b3);
  g_b2 += g_b3.cross(gs.b1);
  const Vec3 g_u = (g_b2 - gs.b2 * gs.b2.dot(g_b2)) / gs.nu;
  Vec3 gb = g_u;
  const double g_s = -g_u.dot(gs.b1);
  g_b1 += -gs.s * g_u + g_s * gs.b;
  gb += g_s * gs.b1;
  g_a = (g_b1 - gs.b1 * gs.b1.dot(g_b1)) / gs.na;
  g_b = gb;
}

template <class T>
Vec3 vec_at(std::span<const T> row, std::size_t offset) {
  return {double(row[offset]), double(row[offset + 1]), double(row[offset + 2])};
}

}  // namespace

// ---- types -----------------------------------------------------------------

Rot6d FrameFeature::rot6d(std::size_t joint) const {
  Rot6d out;
  for (std::size_t k = 0; k < 6; ++k) out[k] = joint_rot6d[joint * 6 + k];
  return out;
}

void FrameFeature::set_rot6d(std::size_t joint, const Rot6d& v) {
  for (std::size_t k = 0; k < 6; ++k) joint_rot6d[joint * 6 + k] = static_cast<float>(v[k]);
}

void MotionSequence::validate() const {
  if (fps <= 0) throw std::invalid_argument("motion fps must be positive");
  if (frames.size() < 2) throw std::invalid_argument("motion needs at least 2 frames");
  for (const auto& f : frames) {
    for (float v : f.root_pos) {
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite root position");
    }
    for (float v : f.joint_rot6d) {
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite joint rotation");
    }
    for (float v : f.foot_contact) {
      if (v != 0.0f && v != 1.0f) throw std::invalid_argument("contact bits must be 0 or 1");
    }
  }
}

const Skeleton& Skeleton::standard() {
  static const Skeleton skel = [] {
    Skeleton s;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      s.parent[j] = kSmplParents[j];
      s.offset[j] = Vec3(kRestOffsets[j][0], kRestOffsets[j][1], kRestOffsets[j][2]) /
                    kFigureHeight;
    }
    return s;
  }();
  return skel;
}

void Skeleton::validate() const {
  if (parent[0] != -1) throw std::invalid_argument("skeleton root must have parent -1");
  for (std::size_t j = 1; j < kJointCount; ++j) {
    // Parents precede children, which also rules out cycles.
    if (parent[j] < 0 || static_cast<std::size_t>(parent[j]) >= j) {
      throw std::invalid_argument("malformed skeleton tree at joint " + std::to_string(j));
    }
  }
  for (const auto& o : offset) {
    if (!o.allFinite()) throw std::invalid_argument("non-finite skeleton offset");
  }
}

// ---- rotations -------------------------------------------------------------

Mat3 rot6d_to_matrix(const Rot6d& v) {
  const Vec3 a(v[0], v[1], v[2]);
  const Vec3 b(v[3], v[4], v[5]);
  const double na = a.norm();
  if (na < kDegenerate) throw std::invalid_argument("degenerate 6D rotation: zero first column");
  const Vec3 b1 = a / na;
  const Vec3 u = b - b1.dot(b) * b1;
  if (u.norm() < kDegenerate * std::max(1.0, b.norm())) {
    throw std::invalid_argument("degenerate 6D rotation: collinear columns");
  }
  return gram_schmidt(a, b).r;
}

Mat3 rot6d_to_matrix_unchecked(const Rot6d& v) {
  return gram_schmidt(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])).r;
}

Rot6d matrix_to_rot6d(const Mat3& r) {
  if (!r.allFinite() || (r.transpose() * r - Mat3::Identity()).norm() > 1e-4 ||
      std::abs(r.determinant() - 1.0) > 1e-4) {
    throw std::invalid_argument("matrix_to_rot6d: input is not a rotation");
  }
  return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

Mat3 from_euler_zyx(double pitch, double yaw, double roll) {
  return (Eigen::AngleAxisd(roll, Vec3::UnitZ()) * Eigen::AngleAxisd(yaw, Vec3::UnitY()) *
          Eigen::AngleAxisd(pitch, Vec3::UnitX()))
      .toRotationMatrix();
}

std::array<double, 3> to_euler_zyx(const Mat3& r) {
  const double yaw = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double pitch = std::atan2(r(2, 1), r(2, 2));
  const double roll = std::atan2(r(1, 0), r(0, 0));
  return {pitch, yaw, roll};
}

Mat3 rotation_y(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}

// ---- kinematics ------------------------------------------------------------

JointPositions forward_kinematics(const MotionSequence& seq, const Skeleton& skel) {
  skel.validate();
  JointPositions out(seq.size());
  std::array<Mat3, kJointCount> global;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& f = seq.frames[i];
    auto& pos = out[i];
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Mat3 local = rot6d_to_matrix_unchecked(f.rot6d(j));
      if (j == 0) {
        global[0] = local;
        pos[0] = Vec3(f.root_pos[0], f.root_pos[1], f.root_pos[2]);
      } else {
        const auto p = static_cast<std::size_t>(skel.parent[j]);
        global[j] = global[p] * local;
        pos[j] = pos[p] + global[p] * skel.offset[j];
      }
    }
  }
  return out;
}

MotionSequence canonicalize_first_frame(const MotionSequence& seq) {
  if (seq.frames.empty()) throw std::invalid_argument("canonicalize: empty motion");
  MotionSequence out = seq;
  const auto& first = seq.frames.front();
  const Mat3 root0 = rot6d_to_matrix_unchecked(first.rot6d(0));
  const Vec3 forward = root0 * Vec3::UnitZ();
  const double heading =
      (std::abs(forward.x()) + std::abs(forward.z()) < 1e-12) ? 0.0
                                                              : std::atan2(forward.x(), forward.z());
  const Mat3 undo = rotation_y(-heading);
  const double x0 = first.root_pos[0], z0 = first.root_pos[2];
  for (auto& f : out.frames) {
    const Vec3 p(f.root_pos[0] - x0, f.root_pos[1], f.root_pos[2] - z0);
    const Vec3 q = undo * p;
    f.root_pos = {float(q.x()), float(f.root_pos[1]), float(q.z())};
    const Mat3 r = undo * rot6d_to_matrix_unchecked(f.rot6d(0));
    f.set_rot6d(0, {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)});
  }
  return out;
}

std::vector<std::array<float, kContactWidth>> contacts_from_positions(
    const JointPositions& positions, const Skeleton& skel, double threshold) {
  const std::size_t n = positions.size();
  std::vector<std::array<float, kContactWidth>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kContactWidth; ++k) {
      const std::size_t j = skel.foot_joints[k];
      double speed = 0.0;
      if (n >= 2) {
        speed = i + 1 < n ? (positions[i + 1][j] - positions[i][j]).norm()
                          : (positions[i][j] - positions[i - 1][j]).norm();
      }
      out[i][k] = speed < threshold ? 1.0f : 0.0f;
    }
  }
  return out;
}

std::vector<double> mean_joint_speed(const JointPositions& positions) {
  const std::size_t n = positions.size();
  std::vector<double> speed(n, 0.0);
  if (n < 2) return speed;
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      if (i == 0) {
        total += (positions[1][j] - positions[0][j]).norm();
      } else if (i + 1 == n) {
        total += (positions[i][j] - positions[i - 1][j]).norm();
      } else {
        total += 0.5 * (positions[i + 1][j] - positions[i - 1][j]).norm();
      }
    }
    speed[i] = total / double(kJointCount);
  }
  return speed;
}

template <class T>
BasicTensor<T> fk_positions(const BasicTensor<T>& features, const Skeleton& skel) {
  skel.validate();
  const Skeleton sk = skel;
  if (features.cols() != kFeatureWidth) {
    throw std::invalid_argument("fk_positions: width must be 151, got " +
                                std::to_string(features.cols()));
  }
  const std::size_t n = features.rows();
  constexpr std::size_t kOut = kJointCount * 3;
  const auto fv = features.data();

  auto frame_forward = [sk](std::span<const T> row, std::array<GramSchmidt, kJointCount>& gs,
                               std::array<Mat3, kJointCount>& global,
                               std::array<Vec3, kJointCount>& pos) {
    for (std::size_t j = 0; j < kJointCount; ++j) {
      gs[j] = gram_schmidt(vec_at(row, rot_channel(j, 0)), vec_at(row, rot_channel(j, 3)));
      if (j == 0) {
        global[0] = gs[0].r;
        pos[0] = vec_at(row, 0);
      } else {
        const auto p = static_cast<std::size_t>(sk.parent[j]);
        global[j] = global[p] * gs[j].r;
        pos[j] = pos[p] + global[p] * sk.offset[j];
      }
    }
  };

  std::vector<T> out(n * kOut);
  {
    std::array<GramSchmidt, kJointCount> gs;
    std::array<Mat3, kJointCount> global;
    std::array<Vec3, kJointCount> pos;
    for (std::size_t i = 0; i < n; ++i) {
      frame_forward(fv.subspan(i * kFeatureWidth, kFeatureWidth), gs, global, pos);
      for (std::size_t j = 0; j < kJointCount; ++j) {
        for (std::size_t c = 0; c < 3; ++c) out[i * kOut + j * 3 + c] = static_cast<T>(pos[j][c]);
      }
    }
  }
  return make_op<T>(
      "fk_positions", {n, kOut}, std::move(out), {features},
      [features, n, frame_forward, sk](std::span<const T> g) {
        const auto fv = features.data();
        auto gf = features.node()->ensure_grad();
        std::array<GramSchmidt, kJointCount> gs;
        std::array<Mat3, kJointCount> global;
        std::array<Vec3, kJointCount> pos;
        std::array<Mat3, kJointCount> g_global;
        std::array<Vec3, kJointCount> g_pos;
        for (std::size_t i = 0; i < n; ++i) {
          frame_forward(fv.subspan(i * kFeatureWidth, kFeatureWidth), gs, global, pos);
          for (std::size_t j = 0; j < kJointCount; ++j) {
            g_global[j].setZero();
            g_pos[j] = Vec3(g[i * kOut + j * 3], g[i * kOut + j * 3 + 1], g[i * kOut + j * 3 + 2]);
          }
          auto row_grad = gf.subspan(i * kFeatureWidth, kFeatureWidth);
          for (std::size_t j = kJointCount; j-- > 0;) {
            Mat3 g_local;
            if (j == 0) {
              g_local = g_global[0];
              for (std::size_t c = 0; c < 3; ++c) row_grad[c] += static_cast<T>(g_pos[0][c]);
            } else {
              const auto p = static_cast<std::size_t>(sk.parent[j]);
              g_pos[p] += g_pos[j];
              g_global[p] += g_pos[j] * sk.offset[j].transpose();
              g_global[p] += g_global[j] * gs[j].r.transpose();
              g_local = global[p].transpose() * g_global[j];
            }
            Vec3 g_a, g_b;
            gram_schmidt_backward(gs[j], g_local, g_a, g_b);
            for (std::size_t c = 0; c < 3; ++c) {
              row_grad[rot_channel(j, c)] += static_cast<T>(g_a[c]);
              row_grad[rot_channel(j, 3 + c)] += static_cast<T>(g_b[c]);
            }
          }
        }
      });
}

template BasicTensor<float> fk_positions<float>(const BasicTensor<float>&, const Skeleton&);
template BasicTensor<double> fk_positions<double>(const BasicTensor<double>&, const Skeleton&);

// ---- flat features ---------------------------------------------------------

Tensor flatten(const MotionSequence& seq) {
  if (seq.frames.empty()) throw std::invalid_argument("flatten: empty motion");
  std::vector<float> data;
  data.reserve(seq.size() * kFeatureWidth);
  for (const auto& f : seq.frames) {
    data.insert(data.end(), f.root_pos.begin(), f.root_pos.end());
    data.insert(data.end(), f.joint_rot6d.begin(), f.joint_rot6d.end());
    data.insert(data.end(), f.foot_contact.begin(), f.foot_contact.end());
  }
  return Tensor::from_data({seq.size(), kFeatureWidth}, std::move(data));
}

MotionSequence unflatten(const Tensor& features, int fps) {
  if (features.cols() != kFeatureWidth) {
    throw std::invalid_argument("unflatten: width must be 151, got " +
                                std::to_string(features.cols()));
  }
  MotionSequence seq;
  seq.fps = fps;
  seq.frames.resize(features.rows());
  const auto v = features.data();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    auto& f = seq.frames[i];
    const auto row = v.subspan(i * kFeatureWidth, kFeatureWidth);
    std::copy_n(row.begin(), kRootWidth, f.root_pos.begin());
    std::copy_n(row.begin() + kRotOffset, kRotWidth, f.joint_rot6d.begin());
    for (std::size_t k = 0; k < kContactWidth; ++k) {
      f.foot_contact[k] = row[kContactOffset + k] >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return seq;
}

// ---- files -----------------------------------------------------------------

std::string encode_motion(const MotionSequence& seq) {
  io::ByteWriter w;
  w.magic("DRMX");
  w.u32(kMotionVersion);
  w.u32(static_cast<std::uint32_t>(seq.fps));
  w.u32(static_cast<std::uint32_t>(seq.size()));
  w.u32(static_cast<std::uint32_t>(kJointCount));
  for (const auto& f : seq.frames) {
    for (float v : f.root_pos) w.f32(v);
    for (float v : f.joint_rot6d) w.f32(v);
    for (float v : f.foot_contact) w.f32(v);
  }
  return w.take();
}

MotionSequence decode_motion(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("DRMX");
  const auto version = r.u32();
  if (version != kMotionVersion) {
    throw io::FormatError("unsupported DRMX version " + std::to_string(version));
  }
  MotionSequence seq;
  seq.fps = static_cast<int>(r.u32());
  const auto n = r.u32();
  const auto joints = r.u32();
  if (joints != kJointCount) throw io::FormatError("DRMX joint count must be 24");
  if (std::size_t(n) * kFeatureWidth * 4 != r.remaining()) {
    throw io::FormatError("DRMX payload size does not match frame count");
  }
  seq.frames.resize(n);
  for (auto& f : seq.frames) {
    for (auto& v : f.root_pos) v = r.f32();
    for (auto& v : f.joint_rot6d) v = r.f32();
    for (auto& v : f.foot_contact) v = r.f32() >= 0.5f ? 1.0f : 0.0f;
  }
  return seq;
}

void save_motion(const std::filesystem::path& path, const MotionSequence& seq) {
  io::write_file(path, encode_motion(seq));
}

MotionSequence load_motion(const std::filesystem::path& path) {
  return decode_motion(io::read_file(path));
}

nlohmann::json motion_to_json(const MotionSequence& seq) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : seq.frames) {
    nlohmann::json row = nlohmann::json::array();
    for (float v : f.root_pos) row.push_back(v);
    for (float v : f.joint_rot6d) row.push_back(v);
    for (float v : f.foot_contact) row.push_back(v);
    frames.push_back(std::move(row));
  }
  return {{"fps", seq.fps}, {"frames", std::move(frames)}};
}

MotionSequence motion_from_json(const nlohmann::json& j) {
  MotionSequence seq;
  seq.fps = j.at("fps").get<int>();
  const auto& frames = j.at("frames");
  std::vector<float> flat;
  flat.reserve(frames.size() * kFeatureWidth);
  for (const auto& row : frames) {
    if (row.size() != kFeatureWidth) {
      throw std::invalid_argument("motion JSON rows must have 151 values");
    }
    for (const auto& v : row) flat.push_back(v.get<float>());
  }
  if (flat.empty()) throw std::invalid_argument("motion JSON has no frames");
  return unflatten(Tensor::from_data({frames.size(), kFeatureWidth}, std::move(flat)), seq.fps);
}

}  // namespace dancedit::motion
