#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pmr/camera/camera.hpp"
#include "pmr/motion/motion.hpp"

namespace pmr::synth {

// Procedural clips for the desk humanoid. Legs are solved with planar
// two-link IK so planted feet stay planted and flat on the ground.

struct WalkParams {
  double duration = 4.0;  // s
  double fps = 30.0;
  double speed = 0.7;     // m/s
  double stride_period = 1.1;  // s, one full gait cycle
  double pelvis_height = 0.86;
  double swing_height = 0.07;
  double heading = 0.0;   // rad about z
  double arm_swing = 0.35;  // rad
  double sway = 0.035;    // m, lateral pelvis shift over the stance foot
  double phase = 0.0;     // [0,1) gait phase at t = 0
};

struct JumpParams {
  double fps = 30.0;
  double apex = 0.08;      // m above take-off height
  double crouch = 0.12;    // m of pelvis drop before take-off
  double forward = 0.0;    // m travelled in flight
  double heading = 0.0;
  double settle = 0.4;     // s standing before and after
};

struct SquatParams {
  double fps = 30.0;
  double depth = 0.2;      // m of pelvis drop
  double period = 2.0;     // s per repetition
  int reps = 2;
  double heading = 0.0;
};

struct KickParams {
  double fps = 30.0;
  double height = 1.1;     // rad of peak hip flexion
  double duration = 1.2;   // s of the kick itself
  double settle = 0.5;
  bool right = true;
  double heading = 0.0;
};

motion::MotionSequence walk(const WalkParams& p);
motion::MotionSequence jump(const JumpParams& p);
motion::MotionSequence squat(const SquatParams& p);
motion::MotionSequence kick(const KickParams& p);

enum class ClipKind { Walk, Jump, Squat, Kick };
const char* clip_kind_name(ClipKind k);
ClipKind clip_kind_from_name(const std::string& name);

/// Parameters drawn around the defaults.
motion::MotionSequence random_clip(ClipKind kind, std::mt19937_64& rng);

struct NamedClip {
  std::string name;
  motion::MotionSequence seq;
};
/// `count` clips cycling through the kinds in `kinds`.
std::vector<NamedClip> corpus(std::size_t count, std::uint64_t seed, const std::vector<ClipKind>& kinds);

// ---------------------------------------------------------------- defects

/// Adds dz to the root height of frames [start, end].
void shift_height(motion::MotionSequence& seq, double dz, std::size_t start, std::size_t end);
/// Random local rotation of angle ~ N(0, sigma) on every joint of every frame.
void jitter(motion::MotionSequence& seq, double sigma, std::mt19937_64& rng);

struct InjectedFlaw {
  int start = 0, end = 0;  // inclusive
};
/// Replaces a run of frames with capture garbage: the root tips over, limbs
/// flail and the root jumps sideways. Frames outside the run are untouched.
InjectedFlaw inject_flaw(motion::MotionSequence& seq, int start, int length, std::mt19937_64& rng);

// ---------------------------------------------------------------- evidence

/// Side-on camera 4.5 m from the clip's mean root position.
camera::CameraModel observing_camera(const motion::Skeleton& skel, const motion::MotionSequence& seq);

std::vector<camera::MaskRaster> render_masks(const camera::CameraModel& cam, const motion::Skeleton& skel,
                                             const motion::MotionSequence& seq, int samples_per_bone = 32);

/// Projected keypoints with Gaussian pixel noise; keypoints behind the camera
/// or outside the image are invisible.
camera::KeypointTrack render_keypoints(const camera::CameraModel& cam, const motion::Skeleton& skel,
                                       const motion::MotionSequence& seq, double pixel_noise,
                                       std::mt19937_64& rng);

}  // namespace pmr::synth
