#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmr/motion/motion.hpp"
#include "pmr/sim/sim.hpp"

namespace pmr::ptm {

/// World-frame kinematic state of every joint. Velocities are backward
/// differences between consecutive control frames.
struct BodyState {
  std::vector<Vec3> pos;
  std::vector<Mat3> rot;
  std::vector<Vec3> lin, ang;
};

BodyState body_state(const motion::JointPose& now, const motion::JointPose& prev, double fps);
/// Frame 0 takes the forward difference to frame 1.
std::vector<BodyState> reference_states(const motion::Skeleton& skel, const motion::MotionSequence& seq);

struct RewardWeights {
  double w_p = 0.25, w_r = 0.25, w_v = 0.25, w_w = 0.25;
  double c_p = 100.0, c_r = 10.0, c_v = 0.1, c_w = 0.1;
  double goal = 0.5;   // weight of r_g in the total
  double style = 0.5;  // weight of r_amp
  double energy = 5e-5;
  double residual = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static RewardWeights from_json(const nlohmann::json& j);
};

struct TrackingError {
  double pos = 0, rot = 0, vel = 0, ang = 0;  // mean per joint
};

/// Mean-per-joint errors. With `relative` the root's horizontal position is
/// subtracted from the positions of each body first.
TrackingError tracking_error(const BodyState& hum, const BodyState& ref, bool relative = true);

/// w_p e^(-c_p e_p) + w_r e^(-c_r e_r) + w_v e^(-c_v e_v) + w_w e^(-c_w e_w).
double relative_reward(const BodyState& hum, const BodyState& ref, const RewardWeights& w, bool relative = true);

/// max(0, 1 - (d - 1)^2 / 4).
double style_reward(double d);

/// -w_e mean_i (tau_i qd_i)^2 - w_rf (|f|^2 / f_cap^2 + |t|^2 / t_cap^2).
double energy_penalty(std::span<const double> torques, std::span<const double> qd, const sim::ResidualForce& residual,
                      const RewardWeights& w, double force_cap, double torque_cap);

struct RewardParts {
  double goal = 0, style = 0, energy = 0;
};
double total_reward(const RewardParts& parts, const RewardWeights& w);

struct TerminationConfig {
  double distance = 0.5;    // m, mean relative joint distance
  double head_floor = 0.15;  // m
  double contact_tolerance = 0.005;  // m, reference joint counts as touching within this of the ground
  double ground_height = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TerminationConfig from_json(const nlohmann::json& j);
};

enum class Termination { None, Distance, Head, Contact, Diverged };
const char* termination_name(Termination t);

/// Reference contact flags for the skeleton's contact joints.
std::vector<bool> reference_contacts(const motion::Skeleton& skel, const BodyState& ref, const TerminationConfig& cfg);

/// `hum_contact` is indexed like skel.contact_joints().
Termination check_termination(const motion::Skeleton& skel, const BodyState& hum, const BodyState& ref,
                              const std::vector<bool>& hum_contact, const TerminationConfig& cfg);

// ---------------------------------------------------------------- observation

/// Heading-frame features of the simulated body plus the goal towards the
/// next reference frame: joint position, rotation (log of R_ref R^T),
/// linear and angular velocity differences.
std::size_t observation_size(const motion::Skeleton& skel);
std::vector<double> observe(const sim::Simulator& sim, const sim::SimState& s, const BodyState& hum,
                            const std::vector<BodyState>& ref, std::size_t t);

/// Offsets into the observation vector.
struct ObservationLayout {
  std::size_t state = 0, goal_pos = 0, goal_rot = 0, goal_vel = 0, goal_ang = 0, size = 0;
};
ObservationLayout observation_layout(const motion::Skeleton& skel);

/// Per-frame features seen by the discriminator (root height, root tilt,
/// root-relative joint positions and root velocities in the heading frame).
std::size_t style_feature_size(const motion::Skeleton& skel);
std::vector<double> style_features(const BodyState& b);

/// Yaw of the root's forward axis.
double heading(const Mat3& root);

}  // namespace pmr::ptm
