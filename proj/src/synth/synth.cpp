#include "pmr/synth/synth.hpp"

#include <algorithm>
#include <cmath>

#include "pmr/error.hpp"

namespace pmr::synth {

using motion::MotionFrame;
using motion::MotionSequence;
using motion::Skeleton;

namespace {

const double kGravity = 9.81;

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3 - 2 * s);
}

double ease(double a, double b, double s) { return a + (b - a) * 0.5 * (1 - std::cos(M_PI * std::clamp(s, 0.0, 1.0))); }

double hermite(double p0, double v0, double p1, double v1, double dur, double s) {
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * v0 * dur + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * v1 * dur;
}

// Joint indices and dimensions of the desk humanoid, looked up by name.
struct Rig {
  const Skeleton& sk = motion::desk_humanoid();
  int hip[2], knee[2], ankle[2], shoulder[2], elbow[2];
  int spine1, spine2, spine3, neck, head;
  Vec3 hip_offset[2];
  double thigh, shin, ankle_height;

  Rig() {
    const char* side[2] = {"left_", "right_"};
    for (int s = 0; s < 2; ++s) {
      auto idx = [&](const char* n) { return sk.index_of(std::string(side[s]) + n); };
      hip[s] = idx("hip");
      knee[s] = idx("knee");
      ankle[s] = idx("ankle");
      shoulder[s] = idx("shoulder");
      elbow[s] = idx("elbow");
      hip_offset[s] = sk.joint(hip[s]).offset;
    }
    spine1 = sk.index_of("spine1");
    spine2 = sk.index_of("spine2");
    spine3 = sk.index_of("spine3");
    neck = sk.index_of("neck");
    head = sk.index_of("head");
    thigh = sk.joint(knee[0]).offset.norm();
    shin = sk.joint(ankle[0]).offset.norm();
    ankle_height = sk.contact_radius(ankle[0]);
  }
  double max_reach() const { return 0.994 * (thigh + shin); }
};

const Rig& rig() {
  static const Rig r;
  return r;
}

// Pose under construction: heading-frame quantities, converted at the end.
struct Pose {
  Vec3 root = Vec3::Zero();  // heading frame
  std::vector<Mat3> local;

  Pose() : local(rig().sk.joint_count(), Mat3::Identity()) {}
};

// Two-link leg reaching from the hip to the ankle target (both in the pelvis
// frame); the foot is kept level, pitched by `foot_pitch`.
void solve_leg(Pose& pose, int side, const Vec3& ankle_target, double foot_pitch = 0.0) {
  const Rig& r = rig();
  const Vec3 hip = pose.root + r.hip_offset[side];
  const Vec3 d = ankle_target - hip;
  const double roll = std::atan2(d.y(), -d.z());
  const double down = std::hypot(d.y(), d.z());
  double D = std::hypot(d.x(), down);
  D = std::clamp(D, 0.25, r.max_reach());
  const double L1 = r.thigh, L2 = r.shin;
  const double beta = std::atan2(-d.x(), down);
  const double knee = M_PI - std::acos(std::clamp((L1 * L1 + L2 * L2 - D * D) / (2 * L1 * L2), -1.0, 1.0));
  const double delta = std::acos(std::clamp((L1 * L1 + D * D - L2 * L2) / (2 * L1 * D), -1.0, 1.0));
  const double hip_pitch = beta - delta;
  pose.local[r.hip[side]] = rot_x(roll) * rot_y(hip_pitch);
  pose.local[r.knee[side]] = rot_y(knee);
  pose.local[r.ankle[side]] = rot_y(-(hip_pitch + knee) + foot_pitch) * rot_x(-roll);
}

// Arms hanging at the sides; `forward` swings each arm about the lateral axis.
void set_arms(Pose& pose, double forward_left, double forward_right, double elbow = 0.25, double hang = 1.3) {
  const Rig& r = rig();
  pose.local[r.shoulder[0]] = rot_y(-forward_left) * rot_x(-hang);
  pose.local[r.shoulder[1]] = rot_y(-forward_right) * rot_x(hang);
  pose.local[r.elbow[0]] = rot_z(-elbow);
  pose.local[r.elbow[1]] = rot_z(elbow);
}

MotionFrame finish(const Pose& pose, double heading, const Vec3& origin = Vec3::Zero()) {
  MotionFrame f;
  const Mat3 yaw = rot_z(heading);
  f.translation = origin + yaw * pose.root;
  f.rotations.resize(pose.local.size());
  for (std::size_t j = 0; j < pose.local.size(); ++j) {
    const Mat3 R = j == 0 ? Mat3(yaw * pose.local[0]) : pose.local[j];
    f.rotations[j] = motion::matrix_to_rot6d(R);
  }
  return f;
}

std::size_t frame_count(double duration, double fps) {
  return static_cast<std::size_t>(std::max(2.0, std::round(duration * fps)));
}

// Feet sit slightly behind the pelvis so the standing centre of mass falls
// inside the support polygon.
constexpr double kFootSetback = 0.05;

Vec3 stance_foot(int side, double x = 0.0) {
  return Vec3(x - kFootSetback, rig().hip_offset[side].y(), rig().ankle_height);
}

double uniform(std::mt19937_64& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

}  // namespace

MotionSequence walk(const WalkParams& p) {
  if (!(p.duration > 0) || !(p.fps > 0) || !(p.stride_period > 0)) throw ValidationError("walk: bad parameters");
  const Rig& r = rig();
  MotionSequence seq;
  seq.fps = p.fps;
  seq.skeleton_id = r.sk.id();
  const double T = p.stride_period, stride = p.speed * T;
  const std::size_t n = frame_count(p.duration, p.fps);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / p.fps;
    Pose pose;
    const double px = p.speed * t;
    Vec3 foot[2];
    double rel[2];
    for (int s = 0; s < 2; ++s) {
      const double c = p.phase + 0.5 * s;
      const double u = t / T + c;
      const double k = std::floor(u), f = u - k;
      double x, z = r.ankle_height;
      if (f < 0.6) {
        x = stride * (k + 0.3 - c);
      } else {
        const double sw = (f - 0.6) / 0.4;
        x = stride * (k + 0.3 - c + smoothstep(sw));
        z += p.swing_height * std::sin(M_PI * sw);
      }
      foot[s] = stance_foot(s, x);
      foot[s].z() = z;
      rel[s] = x - px;
    }
    // Lower the pelvis where a leg would otherwise over-extend.
    double z = p.pelvis_height;
    for (int s = 0; s < 2; ++s) {
      const double dx = foot[s].x() - px;
      const double reach = r.max_reach() - 0.002;
      z = std::min(z, foot[s].z() - r.hip_offset[s].z() + std::sqrt(reach * reach - dx * dx));
    }
    // Weight shifts over the stance foot, peaking mid single-support.
    const double sway = p.sway * std::sin(2 * M_PI * (t / T + p.phase - 0.05));
    pose.root = Vec3(px, sway, z);
    for (int s = 0; s < 2; ++s) solve_leg(pose, s, foot[s]);
    const double norm = std::max(0.3 * stride, 1e-6);
    set_arms(pose, -p.arm_swing * rel[0] / norm, -p.arm_swing * rel[1] / norm);
    pose.local[r.spine1] = rot_y(0.05);
    seq.frames.push_back(finish(pose, p.heading));
  }
  return seq;
}

MotionSequence jump(const JumpParams& p) {
  if (!(p.apex > 0) || !(p.crouch > 0) || !(p.fps > 0)) throw ValidationError("jump: bad parameters");
  const Rig& r = rig();
  const double z_stand = 0.89, z_low = z_stand - p.crouch;
  const double z_off = r.ankle_height - r.hip_offset[0].z() + r.max_reach() - 0.004;
  const double v_off = std::sqrt(2 * kGravity * p.apex);
  const double t_flight = 2 * v_off / kGravity;
  const double d_crouch = 0.45, d_push = 0.18, d_land = 0.22, d_recover = 0.5;
  const double t0 = p.settle, t1 = t0 + d_crouch, t2 = t1 + d_push, t3 = t2 + t_flight, t4 = t3 + d_land,
               t5 = t4 + d_recover, t_end = t5 + p.settle;

  MotionSequence seq;
  seq.fps = p.fps;
  seq.skeleton_id = r.sk.id();
  const std::size_t n = frame_count(t_end, p.fps);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / p.fps;
    double z, x = 0, arm = 0, tuck = 0;
    if (t < t0) {
      z = z_stand;
    } else if (t < t1) {
      const double s = (t - t0) / d_crouch;
      z = ease(z_stand, z_low, s);
      arm = ease(0, -0.6, s);
    } else if (t < t2) {
      const double s = (t - t1) / d_push;
      z = hermite(z_low, 0, z_off, v_off, d_push, s);
      arm = ease(-0.6, 0.9, s);
    } else if (t < t3) {
      const double tau = t - t2;
      z = z_off + v_off * tau - 0.5 * kGravity * tau * tau;
      x = p.forward * tau / t_flight;
      arm = 0.9;
      tuck = std::sin(M_PI * tau / t_flight);
    } else if (t < t4) {
      const double s = (t - t3) / d_land;
      z = hermite(z_off, -v_off, z_low + 0.3 * p.crouch, 0, d_land, s);
      x = p.forward;
      arm = ease(0.9, 0.2, s);
    } else if (t < t5) {
      const double s = (t - t4) / d_recover;
      z = ease(z_low + 0.3 * p.crouch, z_stand, s);
      x = p.forward;
      arm = ease(0.2, 0, s);
    } else {
      z = z_stand;
      x = p.forward;
    }
    Pose pose;
    pose.root = Vec3(x, 0, z);
    for (int s = 0; s < 2; ++s) {
      Vec3 foot;
      if (t >= t2 && t < t3) {
        // Legs keep their take-off shape, travel with the pelvis and tuck a little.
        foot = stance_foot(s) + Vec3(x, 0, z - z_off + 0.06 * tuck);
        solve_leg(pose, s, foot, 0.25 * tuck);
      } else {
        foot = stance_foot(s, t >= t3 ? p.forward : 0.0);
        solve_leg(pose, s, foot);
      }
    }
    set_arms(pose, arm, arm);
    pose.local[r.spine1] = rot_y(0.15 * (z_stand - std::min(z, z_stand)) / p.crouch);
    seq.frames.push_back(finish(pose, p.heading));
  }
  return seq;
}

MotionSequence squat(const SquatParams& p) {
  if (!(p.depth > 0) || !(p.period > 0) || p.reps < 1 || !(p.fps > 0)) throw ValidationError("squat: bad parameters");
  const Rig& r = rig();
  const double z_stand = 0.89, settle = 0.4;
  MotionSequence seq;
  seq.fps = p.fps;
  seq.skeleton_id = r.sk.id();
  const std::size_t n = frame_count(2 * settle + p.reps * p.period, p.fps);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / p.fps - settle;
    double frac = 0;
    if (t > 0 && t < p.reps * p.period) frac = 0.5 * (1 - std::cos(2 * M_PI * t / p.period));
    Pose pose;
    pose.root = Vec3(0, 0, z_stand - p.depth * frac);
    for (int s = 0; s < 2; ++s) solve_leg(pose, s, stance_foot(s));
    set_arms(pose, 1.4 * frac, 1.4 * frac, 0.2);
    pose.local[r.spine1] = rot_y(0.45 * frac);
    pose.local[r.neck] = rot_y(-0.3 * frac);
    seq.frames.push_back(finish(pose, p.heading));
  }
  return seq;
}

MotionSequence kick(const KickParams& p) {
  if (!(p.duration > 0) || !(p.fps > 0)) throw ValidationError("kick: bad parameters");
  const Rig& r = rig();
  const int kick_side = p.right ? 1 : 0, support = 1 - kick_side;
  const double z_stand = 0.88, shift_time = 0.35;
  const double shift = r.hip_offset[support].y() * 0.75;
  MotionSequence seq;
  seq.fps = p.fps;
  seq.skeleton_id = r.sk.id();
  const double t_kick = p.settle + shift_time, t_back = t_kick + p.duration;
  const std::size_t n = frame_count(t_back + shift_time + p.settle, p.fps);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / p.fps;
    double w = 0;  // weight shift progress
    if (t >= p.settle && t < t_kick) w = (t - p.settle) / shift_time;
    else if (t >= t_kick && t < t_back) w = 1;
    else if (t >= t_back) w = 1 - (t - t_back) / shift_time;
    w = smoothstep(w);
    Pose pose;
    pose.root = Vec3(0, shift * w, z_stand);
    for (int s = 0; s < 2; ++s) solve_leg(pose, s, stance_foot(s));
    if (t >= t_kick && t < t_back) {
      const double s = (t - t_kick) / p.duration;
      const double lift = std::sin(M_PI * s);
      // Chamber, extend, recover: flexion leads, the knee extends at the peak.
      const double hip = -p.height * lift * lift;
      const double knee = 1.3 * std::sin(M_PI * s) * (1 - 0.8 * std::sin(M_PI * std::clamp(2 * s - 0.5, 0.0, 1.0)));
      const Mat3 h0 = pose.local[r.hip[kick_side]], k0 = pose.local[r.knee[kick_side]];
      pose.local[r.hip[kick_side]] = h0 * rot_y(hip);
      pose.local[r.knee[kick_side]] = k0 * rot_y(knee);
    }
    const double arm_out = 0.4 * w;
    set_arms(pose, 0.2 * w, 0.2 * w, 0.25, 1.3 - arm_out);
    seq.frames.push_back(finish(pose, p.heading));
  }
  return seq;
}

const char* clip_kind_name(ClipKind k) {
  switch (k) {
    case ClipKind::Walk: return "walk";
    case ClipKind::Jump: return "jump";
    case ClipKind::Squat: return "squat";
    case ClipKind::Kick: return "kick";
  }
  return "?";
}

ClipKind clip_kind_from_name(const std::string& name) {
  for (ClipKind k : {ClipKind::Walk, ClipKind::Jump, ClipKind::Squat, ClipKind::Kick}) {
    if (name == clip_kind_name(k)) return k;
  }
  throw ValidationError("unknown clip kind '" + name + "' (walk, jump, squat, kick)");
}

MotionSequence random_clip(ClipKind kind, std::mt19937_64& rng) {
  const double heading = uniform(rng, -M_PI, M_PI);
  switch (kind) {
    case ClipKind::Walk: {
      WalkParams w;
      w.duration = 3.0;
      w.speed = uniform(rng, 0.5, 0.85);
      w.stride_period = uniform(rng, 1.0, 1.25);
      w.pelvis_height = uniform(rng, 0.84, 0.87);
      w.swing_height = uniform(rng, 0.05, 0.08);
      w.arm_swing = uniform(rng, 0.2, 0.45);
      w.phase = uniform(rng, 0, 1);
      w.heading = heading;
      return walk(w);
    }
    case ClipKind::Jump: {
      JumpParams j;
      j.apex = uniform(rng, 0.05, 0.10);
      j.crouch = uniform(rng, 0.08, 0.14);
      j.forward = uniform(rng, 0, 0.15);
      j.settle = uniform(rng, 0.3, 0.5);
      j.heading = heading;
      return jump(j);
    }
    case ClipKind::Squat: {
      SquatParams s;
      s.depth = uniform(rng, 0.12, 0.25);
      s.period = uniform(rng, 1.6, 2.4);
      s.reps = 1 + static_cast<int>(rng() % 2);
      s.heading = heading;
      return squat(s);
    }
    case ClipKind::Kick: {
      KickParams k;
      k.height = uniform(rng, 0.7, 1.2);
      k.duration = uniform(rng, 1.0, 1.4);
      k.right = rng() % 2 == 0;
      k.heading = heading;
      return kick(k);
    }
  }
  throw ValidationError("random_clip: unknown kind");
}

std::vector<NamedClip> corpus(std::size_t count, std::uint64_t seed, const std::vector<ClipKind>& kinds) {
  if (kinds.empty()) throw ValidationError("corpus: no clip kinds");
  std::mt19937_64 rng(seed);
  std::vector<NamedClip> out;
  for (std::size_t i = 0; i < count; ++i) {
    const ClipKind k = kinds[i % kinds.size()];
    out.push_back({std::string(clip_kind_name(k)) + "_" + std::to_string(i), random_clip(k, rng)});
  }
  return out;
}

void shift_height(MotionSequence& seq, double dz, std::size_t start, std::size_t end) {
  for (std::size_t i = start; i <= end && i < seq.frames.size(); ++i) seq.frames[i].translation.z() += dz;
}

void jitter(MotionSequence& seq, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& f : seq.frames) {
    for (auto& r : f.rotations) {
      const Vec3 w(g(rng), g(rng), g(rng));
      r = motion::matrix_to_rot6d(motion::rot6d_to_matrix(r) * motion::exp_so3(w));
    }
  }
}

InjectedFlaw inject_flaw(MotionSequence& seq, int start, int length, std::mt19937_64& rng) {
  const int n = static_cast<int>(seq.frames.size());
  if (length < 1 || start < 0 || start + length > n) throw ValidationError("inject_flaw: run outside the sequence");
  const double tip = uniform(rng, 1.1, 1.6) * (rng() % 2 ? 1.0 : -1.0);
  const Vec3 tip_axis = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), 0).normalized();
  const double lateral = uniform(rng, 0.25, 0.4);
  std::uniform_real_distribution<double> limb(-1.5, 1.5);
  for (int i = start; i < start + length; ++i) {
    MotionFrame& f = seq.frames[i];
    const Mat3 root = motion::rot6d_to_matrix(f.rotations[0]);
    f.rotations[0] = motion::matrix_to_rot6d(motion::exp_so3(tip * tip_axis) * root);
    f.translation += lateral * Vec3(-tip_axis.y(), tip_axis.x(), 0) - Vec3(0, 0, 0.2);
    for (std::size_t j = 1; j < f.rotations.size(); ++j) {
      const Vec3 w(limb(rng), limb(rng), limb(rng));
      f.rotations[j] = motion::matrix_to_rot6d(motion::rot6d_to_matrix(f.rotations[j]) * motion::exp_so3(w));
    }
  }
  return {start, start + length - 1};
}

camera::CameraModel observing_camera(const Skeleton& skel, const MotionSequence& seq) {
  if (seq.frames.empty()) throw ValidationError("observing_camera: empty sequence");
  Vec3 mean = Vec3::Zero();
  for (const auto& f : seq.frames) mean += f.translation;
  mean /= static_cast<double>(seq.frames.size());
  // Heading of the first frame; the camera looks at the subject's left side.
  const Vec3 fwd = motion::rot6d_to_matrix(seq.frames.front().rotations[0]).col(0);
  Vec3 side(-fwd.y(), fwd.x(), 0);
  if (side.norm() < 1e-6) side = Vec3::UnitY();
  side.normalize();
  (void)skel;
  const Vec3 target(mean.x(), mean.y(), 0.85);
  return camera::look_at(target + 4.5 * side + Vec3(0, 0, 0.15), target, 160.0, 192, 144);
}

std::vector<camera::MaskRaster> render_masks(const camera::CameraModel& cam, const Skeleton& skel,
                                             const MotionSequence& seq, int samples_per_bone) {
  std::vector<camera::MaskRaster> out;
  out.reserve(seq.frames.size());
  for (const auto& f : seq.frames) {
    out.push_back(camera::render_silhouette(cam, skel, motion::forward_kinematics(skel, f), samples_per_bone));
  }
  return out;
}

camera::KeypointTrack render_keypoints(const camera::CameraModel& cam, const Skeleton& skel, const MotionSequence& seq,
                                       double pixel_noise, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  camera::KeypointTrack track;
  for (const auto& f : seq.frames) {
    const auto pose = motion::forward_kinematics(skel, f);
    const auto proj = camera::project_keypoints(cam, skel, pose);
    camera::KeypointFrame kf;
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (const auto& p : camera::project(cam, pose.positions)) {
      if (!p.valid) continue;
      umin = std::min(umin, p.uv.x());
      umax = std::max(umax, p.uv.x());
      vmin = std::min(vmin, p.uv.y());
      vmax = std::max(vmax, p.uv.y());
    }
    kf.bbox_area = umax > umin ? std::max(1.0, (umax - umin) * (vmax - vmin)) : 1.0;
    for (std::size_t k = 0; k < camera::kKeypointCount; ++k) {
      auto& kp = kf.kps[k];
      kp.u = proj[k].uv.x() + pixel_noise * g(rng);
      kp.v = proj[k].uv.y() + pixel_noise * g(rng);
      kp.visible = proj[k].valid && kp.u >= 0 && kp.v >= 0 && kp.u < cam.width && kp.v < cam.height;
    }
    track.frames.push_back(kf);
  }
  return track;
}

}  // namespace pmr::synth
