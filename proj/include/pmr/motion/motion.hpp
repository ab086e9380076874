#pragma once

#include <span>
#include <string>
#include <vector>

#include "pmr/motion/rotation.hpp"
#include "pmr/motion/skeleton.hpp"

namespace pmr::motion {

/// Root translation plus one local 6D rotation per joint (root first).
struct MotionFrame {
  Vec3 translation = Vec3::Zero();
  std::vector<Rot6> rotations;

  static MotionFrame identity(std::size_t joints);
};

struct MotionSequence {
  double fps = 30.0;
  std::string skeleton_id;
  std::vector<MotionFrame> frames;

  std::size_t size() const { return frames.size(); }
};

/// World-space joint positions and rotations.
struct JointPose {
  std::vector<Vec3> positions;
  std::vector<Mat3> rotations;
};

/// Per-joint linear (world, m/s) and angular (body frame, rad/s) velocity.
struct FrameVelocities {
  std::vector<Vec3> linear;
  std::vector<Vec3> angular;
};

JointPose forward_kinematics(const Skeleton& skel, const MotionFrame& frame);

/// FK from local rotation matrices.
JointPose forward_kinematics(const Skeleton& skel, const Vec3& root_translation,
                             std::span<const Mat3> local_rotations);

/// Local rotation matrices of a frame (Gram-Schmidt per joint).
std::vector<Mat3> local_matrices(const MotionFrame& frame);

/// Forward differences at the sequence fps; the last frame copies the
/// previous value.
std::vector<FrameVelocities> finite_velocities(const Skeleton& skel, const MotionSequence& seq);

inline constexpr std::size_t kFrameDim = 135;

/// [translation(3) | root 6D(6) | 21 joint 6D(126)].
std::vector<double> encode_frame(const MotionFrame& frame);
MotionFrame decode_frame(std::span<const double> v);

}  // namespace pmr::motion
