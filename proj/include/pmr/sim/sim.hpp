#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "pmr/motion/motion.hpp"

namespace pmr::sim {

/// Simulation constants. Per-DoF vectors may be left empty; they are then
/// derived from the body model (gains scale with the generalized mass).
struct SimConfig {
  double dt = 1.0 / 120.0;
  double control_dt = 1.0 / 30.0;
  int integrator_substeps = 4;  // semi-implicit Euler sub-steps inside one dt
  double gravity = 9.81;

  double total_mass = 70.0;  // kg, distributed by capsule volume
  double armature = 0.05;    // kg m^2 added to every rotational DoF
  // Derived gains: kp = pd_frequency^2 * (whole-body inertia about the
  // joint), kd = 2 * pd_damping_ratio * sqrt(kp * generalized mass).
  double pd_frequency = 15.0;
  double pd_damping_ratio = 1.0;
  bool actuate_root_rotation = false;
  std::vector<double> kp, kd, damping, inertia;
  double joint_damping = 0.5;  // N m s/rad, used when `damping` is empty

  double contact_stiffness = 1e5;  // N/m
  double contact_damping = 1e3;    // N s/m
  double tangential_damping = 500;  // N s/m, viscous bound of the friction force
  double tangential_stiffness = 2e4;  // N/m, stick spring towards the contact anchor
  double friction = 0.8;
  double contact_tolerance = 0.005;  // m
  double ground_height = 0.0;

  double residual_force_cap = 300.0;   // N
  double residual_torque_cap = 150.0;  // N m

  bool fixed_root = false;  // pins the root (test rigs)

  void validate() const;
  int physics_steps_per_control() const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
};

/// Generalized coordinates: root translation (3), root rotation (3,
/// exponential coordinates), then 3 exponential coordinates per joint.
/// Velocities: root linear (world), root angular (root frame), joint angular
/// velocities in the joint's own frame.
struct SimState {
  std::vector<double> q, qd;
  std::vector<bool> contact;  // one flag per contact joint
  // Stick anchors on the ground, one per contact joint; NaN when released.
  // Empty means no anchors (pure viscous friction).
  std::vector<Vec3> anchors;
  double time = 0.0;
};

struct ResidualForce {
  Vec3 force = Vec3::Zero();   // world frame, applied at the root
  Vec3 torque = Vec3::Zero();  // world frame

  ResidualForce clamped(double force_cap, double torque_cap) const;
};

struct ContactResult {
  std::vector<Vec3> forces;  // per contact joint, world frame
  std::vector<bool> flags;
};

inline std::size_t dof_count(std::size_t joints) { return 6 + 3 * (joints - 1); }

/// tau_i = kp_i (a_i - x_i) - kd_i qd_i. The first three (root translation)
/// entries are always zero.
std::vector<double> pd_torque(std::span<const double> action, std::span<const double> q,
                              std::span<const double> qd, std::span<const double> kp, std::span<const double> kd);

/// Reduced-coordinate humanoid with diagonal generalized mass and
/// Jacobian-transpose force mapping. Immutable after construction; one
/// instance can drive any number of states.
class Simulator {
 public:
  Simulator(const motion::Skeleton& skel, SimConfig cfg);

  const motion::Skeleton& skeleton() const { return skel_; }
  const SimConfig& config() const { return cfg_; }
  std::size_t dofs() const { return ndof_; }
  const std::vector<double>& mass() const { return mass_; }
  const std::vector<double>& kp() const { return kp_; }
  const std::vector<double>& kd() const { return kd_; }
  const std::vector<double>& body_mass() const { return body_mass_; }
  double total_mass() const { return total_mass_; }
  const std::vector<int>& contact_joints() const { return contacts_; }

  motion::JointPose pose(const SimState& s) const;

  ContactResult contact_forces(const SimState& s) const;

  /// Advances by config().dt with torques held over the step. Throws
  /// SimulationDiverged naming the first non-finite DoF.
  SimState step(const SimState& s, std::span<const double> torques, const ResidualForce& residual) const;

  /// One physics step with PD towards `target` evaluated inside every
  /// integrator sub-step, velocity implicit (stable PD). `torques` are added
  /// on top. `applied` (optional) receives the mean PD + feed-forward torque.
  SimState step_pd(const SimState& s, std::span<const double> target, std::span<const double> torques,
                   const ResidualForce& residual, std::vector<double>* applied = nullptr) const;

  /// PD towards `action` for one control period (physics_steps_per_control
  /// calls of step_pd). `applied` (optional) receives the mean torque.
  SimState control_step(const SimState& s, std::span<const double> action, const ResidualForce& residual,
                        std::vector<double>* applied = nullptr) const;

  SimState reset_to_frame(const motion::MotionFrame& frame, const motion::FrameVelocities* vel = nullptr) const;
  motion::MotionFrame to_frame(const SimState& s) const;

  /// Generalized coordinates of a kinematic frame (no lift).
  std::vector<double> coordinates(const motion::MotionFrame& frame) const;

  /// Kinetic plus gravitational potential energy.
  double energy(const SimState& s) const;

  /// Lowest point of any contact sphere.
  double lowest_contact_point(const SimState& s) const;

 private:
  struct Frames {
    motion::JointPose pose;
    std::vector<Vec3> world_omega;  // per joint, world-frame angular velocity
    std::vector<Vec3> com;          // per body (bone), world frame
  };
  Frames kinematics(const SimState& s, bool with_velocity) const;
  Vec3 point_velocity(const SimState& s, const Frames& f, int joint, const Vec3& p) const;
  void integrate(SimState& s, std::span<const double> torques, const ResidualForce& residual, double h,
                 std::span<const double> target, std::vector<double>* applied) const;
  std::vector<bool> flags(const Frames& f) const;
  ContactResult contact_forces(const SimState& s, const Frames& f, std::vector<Vec3>* anchors) const;

  motion::Skeleton skel_;
  SimConfig cfg_;
  std::size_t ndof_ = 0;
  std::vector<double> body_mass_;  // per bone (index = child joint)
  double total_mass_ = 0;
  std::vector<double> mass_, kp_, kd_, damping_;
  std::vector<int> contacts_;
};

// Trajectory dump: motion JSON plus per-frame contact flags and residuals.
struct TrajectoryFrame {
  motion::MotionFrame frame;
  std::vector<bool> contact;
  ResidualForce residual;
};
nlohmann::json trajectory_to_json(const motion::Skeleton& skel, double fps, const std::vector<TrajectoryFrame>& frames);

}  // namespace pmr::sim
