#include "pmr/sim/sim.hpp"

#include <cmath>

#include "pmr/error.hpp"
#include "pmr/motion/io.hpp"

namespace pmr::sim {

using motion::JointPose;
using motion::MotionFrame;

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw ValidationError("sim: dt must be positive");
  if (!(control_dt >= dt)) throw ValidationError("sim: control_dt must be >= dt");
  const double ratio = control_dt / dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) throw ValidationError("sim: control_dt must be a multiple of dt");
  if (integrator_substeps < 1) throw ValidationError("sim: integrator_substeps must be >= 1");
  if (!(total_mass > 0.0)) throw ValidationError("sim: total_mass must be positive");
  if (!(armature >= 0.0)) throw ValidationError("sim: armature must be >= 0");
  if (!(contact_stiffness > 0.0)) throw ValidationError("sim: contact stiffness must be positive");
  if (!(contact_damping >= 0.0) || !(tangential_damping >= 0.0) || !(tangential_stiffness >= 0.0)) throw ValidationError("sim: damping must be >= 0");
  if (!(friction >= 0.0)) throw ValidationError("sim: friction must be >= 0");
  if (!(pd_frequency >= 0.0) || !(pd_damping_ratio >= 0.0)) throw ValidationError("sim: PD parameters must be >= 0");
  for (const auto* v : {&kp, &kd, &damping}) {
    for (double g : *v) {
      if (!(g >= 0.0)) throw ValidationError("sim: gains and damping must be >= 0");
    }
  }
  for (double m : inertia) {
    if (!(m > 0.0)) throw ValidationError("sim: inertia must be positive");
  }
  if (!(residual_force_cap >= 0.0) || !(residual_torque_cap >= 0.0)) {
    throw ValidationError("sim: residual caps must be >= 0");
  }
}

int SimConfig::physics_steps_per_control() const { return static_cast<int>(std::lround(control_dt / dt)); }

nlohmann::json SimConfig::to_json() const {
  return {{"dt", dt},
          {"control_dt", control_dt},
          {"integrator_substeps", integrator_substeps},
          {"gravity", gravity},
          {"total_mass", total_mass},
          {"armature", armature},
          {"pd_frequency", pd_frequency},
          {"pd_damping_ratio", pd_damping_ratio},
          {"actuate_root_rotation", actuate_root_rotation},
          {"kp", kp},
          {"kd", kd},
          {"damping", damping},
          {"inertia", inertia},
          {"joint_damping", joint_damping},
          {"contact_stiffness", contact_stiffness},
          {"contact_damping", contact_damping},
          {"tangential_damping", tangential_damping},
          {"tangential_stiffness", tangential_stiffness},
          {"friction", friction},
          {"contact_tolerance", contact_tolerance},
          {"ground_height", ground_height},
          {"residual_force_cap", residual_force_cap},
          {"residual_torque_cap", residual_torque_cap},
          {"fixed_root", fixed_root}};
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  SimConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("dt", c.dt);
  get("control_dt", c.control_dt);
  get("integrator_substeps", c.integrator_substeps);
  get("gravity", c.gravity);
  get("total_mass", c.total_mass);
  get("armature", c.armature);
  get("pd_frequency", c.pd_frequency);
  get("pd_damping_ratio", c.pd_damping_ratio);
  get("actuate_root_rotation", c.actuate_root_rotation);
  get("kp", c.kp);
  get("kd", c.kd);
  get("damping", c.damping);
  get("inertia", c.inertia);
  get("joint_damping", c.joint_damping);
  get("contact_stiffness", c.contact_stiffness);
  get("contact_damping", c.contact_damping);
  get("tangential_damping", c.tangential_damping);
  get("tangential_stiffness", c.tangential_stiffness);
  get("friction", c.friction);
  get("contact_tolerance", c.contact_tolerance);
  get("ground_height", c.ground_height);
  get("residual_force_cap", c.residual_force_cap);
  get("residual_torque_cap", c.residual_torque_cap);
  get("fixed_root", c.fixed_root);
  c.validate();
  return c;
}

ResidualForce ResidualForce::clamped(double force_cap, double torque_cap) const {
  ResidualForce r = *this;
  const double fn = r.force.norm(), tn = r.torque.norm();
  if (fn > force_cap) r.force *= force_cap / fn;
  if (tn > torque_cap) r.torque *= torque_cap / tn;
  return r;
}

std::vector<double> pd_torque(std::span<const double> action, std::span<const double> q, std::span<const double> qd,
                              std::span<const double> kp, std::span<const double> kd) {
  const std::size_t n = q.size();
  if (action.size() != n || qd.size() != n || kp.size() != n || kd.size() != n) {
    throw ShapeError("pd_torque: action, state and gain vectors must have the same length");
  }
  std::vector<double> tau(n, 0.0);
  for (std::size_t i = 3; i < n; ++i) tau[i] = kp[i] * (action[i] - q[i]) - kd[i] * qd[i];
  return tau;
}

namespace {

Vec3 vec_at(std::span<const double> v, std::size_t i) { return Vec3(v[i], v[i + 1], v[i + 2]); }

void put_vec(std::span<double> v, std::size_t i, const Vec3& x) {
  v[i] = x.x();
  v[i + 1] = x.y();
  v[i + 2] = x.z();
}

std::size_t rot_index(std::size_t joint) { return joint == 0 ? 3 : 6 + 3 * (joint - 1); }

// Exponential coordinates of R closest to `prev`; the two candidates differ
// by a full turn about the same axis.
Vec3 continuous_log(const Mat3& R, const Vec3& prev) {
  Vec3 v = motion::log_so3(R);
  const double n = v.norm();
  if (n > M_PI - 0.1) {
    const Vec3 alt = v * (1.0 - 2.0 * M_PI / n);
    if ((alt - prev).squaredNorm() < (v - prev).squaredNorm()) v = alt;
  }
  return v;
}

}  // namespace

Simulator::Simulator(const motion::Skeleton& skel, SimConfig cfg) : skel_(skel), cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t J = skel_.joint_count();
  if (J < 2) throw ValidationError("sim: skeleton needs at least two joints");
  ndof_ = dof_count(J);
  contacts_ = skel_.contact_joints();

  // Bone k: capsule parent(k) -> k, attached to the parent frame.
  body_mass_.assign(J, 0.0);
  double vol_sum = 0.0;
  for (std::size_t k = 1; k < J; ++k) {
    const double r = skel_.joint(k).radius, L = skel_.joint(k).offset.norm();
    body_mass_[k] = M_PI * r * r * L + 4.0 / 3.0 * M_PI * r * r * r;
    vol_sum += body_mass_[k];
  }
  for (auto& m : body_mass_) m *= cfg_.total_mass / vol_sum;
  total_mass_ = cfg_.total_mass;

  // Inertia per joint about its origin at the rest pose (world and joint
  // frames coincide there): the moving subtree gives the generalized mass,
  // the whole body sets the gain scale.
  MotionFrame rest = MotionFrame::identity(J);
  const JointPose rp = motion::forward_kinematics(skel_, rest);
  auto body_inertia = [&](std::size_t k, const Vec3& about) {
    const double m = body_mass_[k], r = skel_.joint(k).radius;
    const Vec3 off = skel_.joint(k).offset;
    const double L = off.norm();
    const Vec3 u = L > 1e-12 ? Vec3(off / L) : Vec3::UnitZ();
    const Mat3 uu = u * u.transpose();
    Mat3 I = 0.5 * m * r * r * uu + m * (3 * r * r + L * L) / 12.0 * (Mat3::Identity() - uu);
    const Vec3 d = rp.positions[skel_.parent(k)] + 0.5 * off - about;
    return Mat3(I + m * (d.squaredNorm() * Mat3::Identity() - d * d.transpose()));
  };
  mass_.assign(ndof_, 0.0);
  std::vector<double> whole(ndof_, 0.0);
  for (int i = 0; i < 3; ++i) mass_[i] = total_mass_;
  for (std::size_t a = 0; a < J; ++a) {
    Mat3 I = Mat3::Zero(), W = Mat3::Zero();
    for (std::size_t k = 1; k < J; ++k) {
      const Mat3 Ik = body_inertia(k, rp.positions[a]);
      W += Ik;
      if (skel_.is_ancestor_or_self(static_cast<int>(a), skel_.parent(k))) I += Ik;
    }
    const std::size_t base = rot_index(a);
    for (int c = 0; c < 3; ++c) {
      mass_[base + c] = I(c, c) + cfg_.armature;
      whole[base + c] = W(c, c) + cfg_.armature;
    }
  }
  if (!cfg_.inertia.empty()) {
    if (cfg_.inertia.size() != ndof_) throw ShapeError("sim: inertia must have one entry per DoF");
    mass_ = cfg_.inertia;
  }
  for (std::size_t i = 0; i < ndof_; ++i) {
    if (!(mass_[i] > 0.0)) throw ValidationError("sim: DoF " + std::to_string(i) + " has zero generalized mass");
  }

  kp_.assign(ndof_, 0.0);
  kd_.assign(ndof_, 0.0);
  const std::size_t first_actuated = cfg_.actuate_root_rotation ? 3 : 6;
  for (std::size_t i = first_actuated; i < ndof_; ++i) {
    kp_[i] = whole[i] * cfg_.pd_frequency * cfg_.pd_frequency;
    kd_[i] = 2.0 * cfg_.pd_damping_ratio * std::sqrt(kp_[i] * mass_[i]);
  }
  if (!cfg_.kp.empty()) {
    if (cfg_.kp.size() != ndof_) throw ShapeError("sim: kp must have one entry per DoF");
    kp_ = cfg_.kp;
  }
  if (!cfg_.kd.empty()) {
    if (cfg_.kd.size() != ndof_) throw ShapeError("sim: kd must have one entry per DoF");
    kd_ = cfg_.kd;
  }
  for (int i = 0; i < 3; ++i) kp_[i] = kd_[i] = 0.0;

  damping_.assign(ndof_, 0.0);
  for (std::size_t i = 6; i < ndof_; ++i) damping_[i] = cfg_.joint_damping;
  if (!cfg_.damping.empty()) {
    if (cfg_.damping.size() != ndof_) throw ShapeError("sim: damping must have one entry per DoF");
    damping_ = cfg_.damping;
  }
}

Simulator::Frames Simulator::kinematics(const SimState& s, bool with_velocity) const {
  const std::size_t J = skel_.joint_count();
  std::vector<Mat3> local(J);
  for (std::size_t j = 0; j < J; ++j) local[j] = motion::exp_so3(vec_at(s.q, rot_index(j)));
  Frames f;
  f.pose = motion::forward_kinematics(skel_, vec_at(s.q, 0), local);
  f.com.assign(J, Vec3::Zero());
  for (std::size_t k = 1; k < J; ++k) {
    const int p = skel_.parent(k);
    f.com[k] = f.pose.positions[p] + f.pose.rotations[p] * (0.5 * skel_.joint(k).offset);
  }
  if (with_velocity) {
    f.world_omega.assign(J, Vec3::Zero());
    f.world_omega[0] = f.pose.rotations[0] * vec_at(s.qd, 3);
    for (std::size_t j = 1; j < J; ++j) {
      f.world_omega[j] = f.world_omega[skel_.parent(j)] + f.pose.rotations[j] * vec_at(s.qd, rot_index(j));
    }
  }
  return f;
}

Vec3 Simulator::point_velocity(const SimState& s, const Frames& f, int joint, const Vec3& p) const {
  Vec3 v = vec_at(s.qd, 0);
  for (int a = joint; a >= 0; a = skel_.parent(a)) {
    const Vec3 w = f.pose.rotations[a] * vec_at(s.qd, rot_index(a));
    v += w.cross(p - f.pose.positions[a]);
  }
  return v;
}

std::vector<bool> Simulator::flags(const Frames& f) const {
  std::vector<bool> out(contacts_.size());
  for (std::size_t c = 0; c < contacts_.size(); ++c) {
    const int j = contacts_[c];
    out[c] = f.pose.positions[j].z() - skel_.contact_radius(j) < cfg_.ground_height + cfg_.contact_tolerance;
  }
  return out;
}

ContactResult Simulator::contact_forces(const SimState& s) const {
  return contact_forces(s, kinematics(s, true), nullptr);
}

// Penalty normal force; friction is a stick spring towards the anchor plus
// viscous damping, limited by the Coulomb cone. When `anchors` is given the
// anchors are advanced: set on touch-down, dragged while slipping, released
// on lift-off.
ContactResult Simulator::contact_forces(const SimState& s, const Frames& f, std::vector<Vec3>* anchors) const {
  const bool use_anchor = s.anchors.size() == contacts_.size();
  ContactResult out;
  out.flags = flags(f);
  out.forces.assign(contacts_.size(), Vec3::Zero());
  for (std::size_t c = 0; c < contacts_.size(); ++c) {
    const int j = contacts_[c];
    const Vec3& p = f.pose.positions[j];
    const double depth = cfg_.ground_height - (p.z() - skel_.contact_radius(j));
    if (depth <= 0.0) {
      if (anchors) (*anchors)[c] = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const Vec3 v = point_velocity(s, f, j, p);
    const double fn = std::max(0.0, cfg_.contact_stiffness * depth - cfg_.contact_damping * v.z());
    Eigen::Vector2d ft = -cfg_.tangential_damping * v.head<2>();
    const bool anchored = use_anchor && std::isfinite(s.anchors[c].x());
    if (anchored) ft -= cfg_.tangential_stiffness * (p.head<2>() - s.anchors[c].head<2>());
    const double limit = cfg_.friction * fn, mag = ft.norm();
    const bool slipping = mag > limit;
    if (slipping) ft *= mag > 0 ? limit / mag : 0.0;
    out.forces[c] = Vec3(ft.x(), ft.y(), fn);
    if (anchors) {
      Vec3& a = (*anchors)[c];
      if (!anchored) {
        a = Vec3(p.x(), p.y(), cfg_.ground_height);
      } else if (slipping && cfg_.tangential_stiffness > 0) {
        // Keep the spring at the cone boundary.
        const Eigen::Vector2d spring = ft + cfg_.tangential_damping * v.head<2>();
        a.head<2>() = p.head<2>() + spring / cfg_.tangential_stiffness;
      }
    }
  }
  return out;
}

void Simulator::integrate(SimState& s, std::span<const double> torques, const ResidualForce& residual, double h,
                          std::span<const double> target, std::vector<double>* applied) const {
  const std::size_t J = skel_.joint_count();
  const Frames f = kinematics(s, true);
  if (s.anchors.size() != contacts_.size()) {
    s.anchors.assign(contacts_.size(), Vec3::Constant(std::numeric_limits<double>::quiet_NaN()));
  }
  std::vector<Vec3> anchors = s.anchors;
  const ContactResult contact = contact_forces(s, f, &anchors);
  s.anchors = std::move(anchors);
  const Vec3 g(0, 0, -cfg_.gravity);

  // Passive damping is implicit in the velocity update, like the PD term.
  std::vector<double> Q(torques.begin(), torques.end());

  Vec3 force = residual.force;
  for (std::size_t k = 1; k < J; ++k) force += body_mass_[k] * g;
  for (const auto& fc : contact.forces) force += fc;
  put_vec(Q, 0, vec_at(Q, 0) + force);

  for (std::size_t a = 0; a < J; ++a) {
    const Vec3& pa = f.pose.positions[a];
    Vec3 moment = a == 0 ? residual.torque : Vec3::Zero();
    for (std::size_t k = 1; k < J; ++k) {
      if (skel_.is_ancestor_or_self(static_cast<int>(a), skel_.parent(k))) {
        moment += (f.com[k] - pa).cross(body_mass_[k] * g);
      }
    }
    for (std::size_t c = 0; c < contacts_.size(); ++c) {
      const int j = contacts_[c];
      if (j == static_cast<int>(a) || !skel_.is_ancestor_or_self(static_cast<int>(a), j)) continue;
      moment += (f.pose.positions[j] - pa).cross(contact.forces[c]);
    }
    const std::size_t base = rot_index(a);
    put_vec(Q, base, vec_at(Q, base) + f.pose.rotations[a].transpose() * moment);
  }

  // Per DoF: M (v' - v) / h = Q + kp (a - x - h v') - (kd + c) v'.
  const bool pd = !target.empty();
  const std::size_t first = cfg_.fixed_root ? 6 : 0;
  for (std::size_t i = first; i < ndof_; ++i) {
    const double kp = pd ? kp_[i] : 0.0, kd = pd ? kd_[i] : 0.0;
    const double drive = pd && i >= 3 ? kp * (target[i] - s.q[i]) : 0.0;
    const double v = (mass_[i] * s.qd[i] + h * (Q[i] + drive)) / (mass_[i] + h * (kd + damping_[i]) + h * h * kp);
    if (applied) (*applied)[i] += torques[i] + (i >= 3 ? drive - kp * h * v - kd * v : 0.0);
    s.qd[i] = v;
  }

  if (!cfg_.fixed_root) {
    put_vec(s.q, 0, vec_at(s.q, 0) + h * vec_at(s.qd, 0));
  }
  for (std::size_t j = cfg_.fixed_root ? 1 : 0; j < J; ++j) {
    const std::size_t base = rot_index(j);
    const Vec3 x = vec_at(s.q, base);
    const Mat3 R = motion::exp_so3(x) * motion::exp_so3(h * vec_at(s.qd, base));
    put_vec(s.q, base, continuous_log(R, x));
  }

  for (std::size_t i = 0; i < ndof_; ++i) {
    if (!std::isfinite(s.q[i]) || !std::isfinite(s.qd[i]) || std::abs(s.qd[i]) > 1e6 || std::abs(s.q[i]) > 1e6) {
      throw SimulationDiverged(i, "simulation diverged at DoF " + std::to_string(i) + " (t = " +
                                      std::to_string(s.time) + " s)");
    }
  }
}

SimState Simulator::step(const SimState& s, std::span<const double> torques, const ResidualForce& residual) const {
  if (s.q.size() != ndof_ || s.qd.size() != ndof_) throw ShapeError("sim: state size does not match the model");
  if (torques.size() != ndof_) throw ShapeError("sim: torque vector must have one entry per DoF");
  const ResidualForce res = residual.clamped(cfg_.residual_force_cap, cfg_.residual_torque_cap);
  SimState next = s;
  const double h = cfg_.dt / cfg_.integrator_substeps;
  for (int k = 0; k < cfg_.integrator_substeps; ++k) integrate(next, torques, res, h, {}, nullptr);
  next.time = s.time + cfg_.dt;
  next.contact = flags(kinematics(next, false));
  return next;
}

SimState Simulator::step_pd(const SimState& s, std::span<const double> target, std::span<const double> torques,
                            const ResidualForce& residual, std::vector<double>* applied) const {
  if (s.q.size() != ndof_ || s.qd.size() != ndof_) throw ShapeError("sim: state size does not match the model");
  if (target.size() != ndof_) throw ShapeError("sim: PD target must have one entry per DoF");
  std::vector<double> zero;
  if (torques.empty()) {
    zero.assign(ndof_, 0.0);
    torques = zero;
  }
  if (torques.size() != ndof_) throw ShapeError("sim: torque vector must have one entry per DoF");
  const ResidualForce res = residual.clamped(cfg_.residual_force_cap, cfg_.residual_torque_cap);
  SimState next = s;
  const int n = cfg_.integrator_substeps;
  const double h = cfg_.dt / n;
  std::vector<double> sum(ndof_, 0.0);
  for (int k = 0; k < n; ++k) integrate(next, torques, res, h, target, &sum);
  if (applied) {
    applied->resize(ndof_);
    for (std::size_t i = 0; i < ndof_; ++i) (*applied)[i] = sum[i] / n;
  }
  next.time = s.time + cfg_.dt;
  next.contact = flags(kinematics(next, false));
  return next;
}

SimState Simulator::control_step(const SimState& s, std::span<const double> action, const ResidualForce& residual,
                                 std::vector<double>* applied) const {
  const int n = cfg_.physics_steps_per_control();
  SimState cur = s;
  if (applied) applied->assign(ndof_, 0.0);
  std::vector<double> tau;
  for (int k = 0; k < n; ++k) {
    cur = step_pd(cur, action, {}, residual, applied ? &tau : nullptr);
    if (applied) {
      for (std::size_t i = 0; i < ndof_; ++i) (*applied)[i] += tau[i] / n;
    }
  }
  return cur;
}

JointPose Simulator::pose(const SimState& s) const { return kinematics(s, false).pose; }

std::vector<double> Simulator::coordinates(const MotionFrame& frame) const {
  const std::size_t J = skel_.joint_count();
  if (frame.rotations.size() != J) throw ShapeError("sim: frame joint count does not match the skeleton");
  std::vector<double> q(ndof_, 0.0);
  put_vec(q, 0, frame.translation);
  for (std::size_t j = 0; j < J; ++j) put_vec(q, rot_index(j), motion::log_so3(motion::rot6d_to_matrix(frame.rotations[j])));
  return q;
}

double Simulator::lowest_contact_point(const SimState& s) const {
  const JointPose p = pose(s);
  double low = std::numeric_limits<double>::infinity();
  for (int j : contacts_) low = std::min(low, p.positions[j].z() - skel_.contact_radius(j));
  return low;
}

SimState Simulator::reset_to_frame(const MotionFrame& frame, const motion::FrameVelocities* vel) const {
  const std::size_t J = skel_.joint_count();
  SimState s;
  s.q = coordinates(frame);
  s.qd.assign(ndof_, 0.0);
  if (vel) {
    if (vel->linear.size() != J || vel->angular.size() != J) throw ShapeError("sim: velocity joint count mismatch");
    if (!cfg_.fixed_root) {
      put_vec(s.qd, 0, vel->linear[0]);
      put_vec(s.qd, 3, vel->angular[0]);
    }
    for (std::size_t j = 1; j < J; ++j) {
      const Mat3 R = motion::exp_so3(vec_at(s.q, rot_index(j)));
      put_vec(s.qd, rot_index(j), vel->angular[j] - R.transpose() * vel->angular[skel_.parent(j)]);
    }
  }
  if (!cfg_.fixed_root) {
    const double low = lowest_contact_point(s);
    const double floor = cfg_.ground_height - 0.001;
    if (low < floor) s.q[2] += floor - low;
  }
  s.contact = flags(kinematics(s, false));
  return s;
}

MotionFrame Simulator::to_frame(const SimState& s) const {
  const std::size_t J = skel_.joint_count();
  MotionFrame f;
  f.translation = vec_at(s.q, 0);
  f.rotations.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    f.rotations[j] = motion::matrix_to_rot6d(motion::exp_so3(vec_at(s.q, rot_index(j))));
  }
  return f;
}

double Simulator::energy(const SimState& s) const {
  double e = 0.0;
  for (std::size_t i = 0; i < ndof_; ++i) e += 0.5 * mass_[i] * s.qd[i] * s.qd[i];
  const Frames f = kinematics(s, false);
  for (std::size_t k = 1; k < skel_.joint_count(); ++k) e += body_mass_[k] * cfg_.gravity * f.com[k].z();
  return e;
}

nlohmann::json trajectory_to_json(const motion::Skeleton& skel, double fps, const std::vector<TrajectoryFrame>& frames) {
  motion::MotionSequence seq;
  seq.fps = fps;
  seq.skeleton_id = skel.id();
  nlohmann::json contacts = nlohmann::json::array(), residuals = nlohmann::json::array();
  for (const auto& f : frames) {
    seq.frames.push_back(f.frame);
    nlohmann::json c = nlohmann::json::array();
    for (bool b : f.contact) c.push_back(b);
    contacts.push_back(c);
    const auto& r = f.residual;
    residuals.push_back({r.force.x(), r.force.y(), r.force.z(), r.torque.x(), r.torque.y(), r.torque.z()});
  }
  nlohmann::json j = motion::motion_to_json(seq);
  nlohmann::json names = nlohmann::json::array();
  for (int c : skel.contact_joints()) names.push_back(skel.joint(c).name);
  j["contact_joints"] = names;
  j["contacts"] = contacts;
  j["residual"] = residuals;
  return j;
}

}  // namespace pmr::sim
