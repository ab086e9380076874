#include "pmr/motion/motion.hpp"

#include "pmr/error.hpp"

namespace pmr::motion {

MotionFrame MotionFrame::identity(std::size_t joints) {
  MotionFrame f;
  f.rotations.assign(joints, identity_rot6d());
  return f;
}

std::vector<Mat3> local_matrices(const MotionFrame& frame) {
  std::vector<Mat3> out;
  out.reserve(frame.rotations.size());
  for (const auto& r : frame.rotations) out.push_back(rot6d_to_matrix(r));
  return out;
}

JointPose forward_kinematics(const Skeleton& skel, const Vec3& root_translation,
                             std::span<const Mat3> local_rotations) {
  const std::size_t J = skel.joint_count();
  if (local_rotations.size() != J) {
    throw ShapeError("forward_kinematics: frame has " + std::to_string(local_rotations.size()) +
                     " rotations, skeleton has " + std::to_string(J) + " joints");
  }
  JointPose pose;
  pose.positions.resize(J);
  pose.rotations.resize(J);
  pose.positions[0] = root_translation;
  pose.rotations[0] = local_rotations[0];
  for (std::size_t j = 1; j < J; ++j) {
    const int p = skel.parent(j);
    pose.positions[j] = pose.positions[p] + pose.rotations[p] * skel.joint(j).offset;
    pose.rotations[j] = pose.rotations[p] * local_rotations[j];
  }
  return pose;
}

JointPose forward_kinematics(const Skeleton& skel, const MotionFrame& frame) {
  if (frame.rotations.size() != skel.joint_count()) {
    throw ShapeError("forward_kinematics: rotation count does not match skeleton");
  }
  const auto local = local_matrices(frame);
  return forward_kinematics(skel, frame.translation, local);
}

std::vector<FrameVelocities> finite_velocities(const Skeleton& skel, const MotionSequence& seq) {
  if (seq.size() < 2) throw InsufficientFrames("finite_velocities needs at least 2 frames");
  if (!(seq.fps > 0.0)) throw ValidationError("fps must be positive");
  const std::size_t T = seq.size();
  const std::size_t J = skel.joint_count();
  std::vector<JointPose> poses;
  poses.reserve(T);
  for (const auto& f : seq.frames) poses.push_back(forward_kinematics(skel, f));

  std::vector<FrameVelocities> out(T);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    auto& v = out[t];
    v.linear.resize(J);
    v.angular.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      v.linear[j] = (poses[t + 1].positions[j] - poses[t].positions[j]) * seq.fps;
      v.angular[j] =
          log_so3(poses[t].rotations[j].transpose() * poses[t + 1].rotations[j]) * seq.fps;
    }
  }
  out[T - 1] = out[T - 2];
  return out;
}

std::vector<double> encode_frame(const MotionFrame& frame) {
  if (frame.rotations.size() != kSmplJoints) {
    throw ShapeError("encode_frame: canonical codec needs 22 joints");
  }
  std::vector<double> v(kFrameDim);
  for (int i = 0; i < 3; ++i) v[i] = frame.translation[i];
  for (std::size_t j = 0; j < kSmplJoints; ++j) {
    for (int k = 0; k < 6; ++k) v[3 + 6 * j + k] = frame.rotations[j][k];
  }
  return v;
}

MotionFrame decode_frame(std::span<const double> v) {
  if (v.size() != kFrameDim) {
    throw ShapeError("decode_frame: expected 135 values, got " + std::to_string(v.size()));
  }
  MotionFrame f;
  f.translation = Vec3(v[0], v[1], v[2]);
  f.rotations.resize(kSmplJoints);
  for (std::size_t j = 0; j < kSmplJoints; ++j) {
    for (int k = 0; k < 6; ++k) f.rotations[j][k] = v[3 + 6 * j + k];
  }
  return f;
}

}  // namespace pmr::motion
