#include "pmr/ptm/reward.hpp"

#include <algorithm>
#include <cmath>

#include "pmr/error.hpp"

namespace pmr::ptm {

using motion::Skeleton;

BodyState body_state(const motion::JointPose& now, const motion::JointPose& prev, double fps) {
  const std::size_t J = now.positions.size();
  if (prev.positions.size() != J) throw ShapeError("body_state: poses differ in joint count");
  BodyState b;
  b.pos = now.positions;
  b.rot = now.rotations;
  b.lin.resize(J);
  b.ang.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    b.lin[j] = (now.positions[j] - prev.positions[j]) * fps;
    b.ang[j] = motion::log_so3(now.rotations[j] * prev.rotations[j].transpose()) * fps;
  }
  return b;
}

std::vector<BodyState> reference_states(const Skeleton& skel, const motion::MotionSequence& seq) {
  if (seq.size() < 2) throw InsufficientFrames("reference needs at least 2 frames");
  std::vector<motion::JointPose> poses;
  for (const auto& f : seq.frames) poses.push_back(motion::forward_kinematics(skel, f));
  std::vector<BodyState> out;
  out.reserve(seq.size());
  out.push_back(body_state(poses[1], poses[0], seq.fps));
  out[0].pos = poses[0].positions;
  out[0].rot = poses[0].rotations;
  for (std::size_t t = 1; t < seq.size(); ++t) out.push_back(body_state(poses[t], poses[t - 1], seq.fps));
  return out;
}

// ---------------------------------------------------------------- rewards

void RewardWeights::validate() const {
  for (double v : {w_p, w_r, w_v, w_w, c_p, c_r, c_v, c_w, goal, style, energy, residual}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("reward weights must be finite and non-negative");
  }
}

nlohmann::json RewardWeights::to_json() const {
  return {{"w_p", w_p}, {"w_r", w_r}, {"w_v", w_v}, {"w_w", w_w}, {"c_p", c_p},       {"c_r", c_r},
          {"c_v", c_v}, {"c_w", c_w}, {"goal", goal}, {"style", style}, {"energy", energy}, {"residual", residual}};
}

RewardWeights RewardWeights::from_json(const nlohmann::json& j) {
  RewardWeights w;
  try {
    w.w_p = j.value("w_p", w.w_p);
    w.w_r = j.value("w_r", w.w_r);
    w.w_v = j.value("w_v", w.w_v);
    w.w_w = j.value("w_w", w.w_w);
    w.c_p = j.value("c_p", w.c_p);
    w.c_r = j.value("c_r", w.c_r);
    w.c_v = j.value("c_v", w.c_v);
    w.c_w = j.value("c_w", w.c_w);
    w.goal = j.value("goal", w.goal);
    w.style = j.value("style", w.style);
    w.energy = j.value("energy", w.energy);
    w.residual = j.value("residual", w.residual);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("reward weights: ") + e.what());
  }
  w.validate();
  return w;
}

namespace {

void check_shapes(const BodyState& a, const BodyState& b) {
  const std::size_t J = a.pos.size();
  if (J == 0 || b.pos.size() != J || a.rot.size() != J || b.rot.size() != J || a.lin.size() != J ||
      b.lin.size() != J || a.ang.size() != J || b.ang.size() != J) {
    throw ShapeError("body states differ in joint count");
  }
}

Vec3 rela(const Vec3& p, const Vec3& root) { return Vec3(p.x() - root.x(), p.y() - root.y(), p.z()); }

double mean_relative_distance(const BodyState& hum, const BodyState& ref, bool relative) {
  double e = 0;
  const std::size_t J = hum.pos.size();
  for (std::size_t j = 0; j < J; ++j) {
    const Vec3 a = relative ? rela(hum.pos[j], hum.pos[0]) : hum.pos[j];
    const Vec3 b = relative ? rela(ref.pos[j], ref.pos[0]) : ref.pos[j];
    e += (a - b).norm();
  }
  return e / double(J);
}

}  // namespace

TrackingError tracking_error(const BodyState& hum, const BodyState& ref, bool relative) {
  check_shapes(hum, ref);
  const std::size_t J = hum.pos.size();
  TrackingError e;
  e.pos = mean_relative_distance(hum, ref, relative);
  for (std::size_t j = 0; j < J; ++j) {
    e.rot += motion::geodesic_angle(hum.rot[j], ref.rot[j]);
    e.vel += (hum.lin[j] - ref.lin[j]).norm();
    e.ang += (hum.ang[j] - ref.ang[j]).norm();
  }
  e.rot /= double(J);
  e.vel /= double(J);
  e.ang /= double(J);
  return e;
}

double relative_reward(const BodyState& hum, const BodyState& ref, const RewardWeights& w, bool relative) {
  const auto e = tracking_error(hum, ref, relative);
  return w.w_p * std::exp(-w.c_p * e.pos) + w.w_r * std::exp(-w.c_r * e.rot) + w.w_v * std::exp(-w.c_v * e.vel) +
         w.w_w * std::exp(-w.c_w * e.ang);
}

double style_reward(double d) { return std::max(0.0, 1.0 - 0.25 * (d - 1.0) * (d - 1.0)); }

double energy_penalty(std::span<const double> torques, std::span<const double> qd, const sim::ResidualForce& residual,
                      const RewardWeights& w, double force_cap, double torque_cap) {
  if (torques.size() != qd.size()) throw ShapeError("energy_penalty: torques and velocities differ in size");
  double p = 0;
  for (std::size_t i = 0; i < torques.size(); ++i) {
    const double power = torques[i] * qd[i];
    p += power * power;
  }
  if (!torques.empty()) p /= double(torques.size());
  double r = 0;
  if (force_cap > 0) r += residual.force.squaredNorm() / (force_cap * force_cap);
  if (torque_cap > 0) r += residual.torque.squaredNorm() / (torque_cap * torque_cap);
  return -w.energy * p - w.residual * r;
}

double total_reward(const RewardParts& parts, const RewardWeights& w) {
  return w.goal * parts.goal + w.style * parts.style + parts.energy;
}

// ---------------------------------------------------------------- termination

void TerminationConfig::validate() const {
  if (!(distance > 0.0)) throw ValidationError("termination distance must be positive");
  if (!std::isfinite(head_floor)) throw ValidationError("head floor must be finite");
  if (!(contact_tolerance >= 0.0)) throw ValidationError("contact tolerance must be non-negative");
}

nlohmann::json TerminationConfig::to_json() const {
  return {{"distance", distance},
          {"head_floor", head_floor},
          {"contact_tolerance", contact_tolerance},
          {"ground_height", ground_height}};
}

TerminationConfig TerminationConfig::from_json(const nlohmann::json& j) {
  TerminationConfig c;
  try {
    c.distance = j.value("distance", c.distance);
    c.head_floor = j.value("head_floor", c.head_floor);
    c.contact_tolerance = j.value("contact_tolerance", c.contact_tolerance);
    c.ground_height = j.value("ground_height", c.ground_height);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("termination config: ") + e.what());
  }
  c.validate();
  return c;
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::None: return "none";
    case Termination::Distance: return "distance";
    case Termination::Head: return "head";
    case Termination::Contact: return "contact";
    case Termination::Diverged: return "diverged";
  }
  return "?";
}

std::vector<bool> reference_contacts(const Skeleton& skel, const BodyState& ref, const TerminationConfig& cfg) {
  const auto& cj = skel.contact_joints();
  std::vector<bool> out(cj.size());
  for (std::size_t k = 0; k < cj.size(); ++k) {
    const int j = cj[k];
    out[k] = ref.pos.at(j).z() - skel.contact_radius(j) <= cfg.ground_height + cfg.contact_tolerance;
  }
  return out;
}

Termination check_termination(const Skeleton& skel, const BodyState& hum, const BodyState& ref,
                              const std::vector<bool>& hum_contact, const TerminationConfig& cfg) {
  if (hum.pos.size() != skel.joint_count() || ref.pos.size() != skel.joint_count()) {
    throw ShapeError("check_termination: joint count mismatch");
  }
  const auto& cj = skel.contact_joints();
  if (hum_contact.size() != cj.size()) throw ShapeError("check_termination: one contact flag per contact joint");
  if (mean_relative_distance(hum, ref, true) > cfg.distance) return Termination::Distance;
  const int h = skel.head();
  const double floor = cfg.ground_height + cfg.head_floor;
  if (hum.pos[h].z() < floor && ref.pos[h].z() >= floor) return Termination::Head;
  const auto ref_contact = reference_contacts(skel, ref, cfg);
  for (std::size_t k = 0; k < cj.size(); ++k) {
    if (skel.is_foot(cj[k])) continue;
    if (hum_contact[k] && !ref_contact[k]) return Termination::Contact;
  }
  return Termination::None;
}

// ---------------------------------------------------------------- observation

double heading(const Mat3& root) { return std::atan2(root(1, 0), root(0, 0)); }

namespace {

Mat3 yaw_inverse(const Mat3& root) { return Eigen::AngleAxisd(-heading(root), Vec3::UnitZ()).toRotationMatrix(); }

void push(std::vector<double>& v, const Vec3& x) {
  v.push_back(x.x());
  v.push_back(x.y());
  v.push_back(x.z());
}

}  // namespace

ObservationLayout observation_layout(const Skeleton& skel) {
  const std::size_t J = skel.joint_count();
  const std::size_t ndof = sim::dof_count(J);
  ObservationLayout l;
  l.state = 0;
  l.goal_pos = 1 + 6 + 3 * (J - 1) + ndof + 3 * (J - 1);
  l.goal_rot = l.goal_pos + 3 * J;
  l.goal_vel = l.goal_rot + 3 * J;
  l.goal_ang = l.goal_vel + 3 * J;
  l.size = l.goal_ang + 3 * J;
  return l;
}

std::size_t observation_size(const Skeleton& skel) { return observation_layout(skel).size; }

std::vector<double> observe(const sim::Simulator& sim, const sim::SimState& s, const BodyState& hum,
                            const std::vector<BodyState>& ref, std::size_t t) {
  const auto& skel = sim.skeleton();
  const std::size_t J = skel.joint_count();
  if (ref.empty()) throw ShapeError("observe: empty reference");
  if (s.q.size() != sim.dofs() || s.qd.size() != sim.dofs()) throw ShapeError("observe: state size mismatch");
  if (hum.pos.size() != J) throw ShapeError("observe: body state joint count mismatch");
  const BodyState& goal = ref[std::min(t + 1, ref.size() - 1)];
  if (goal.pos.size() != J) throw ShapeError("observe: reference joint count mismatch");

  const Mat3 H = yaw_inverse(hum.rot[0]);
  std::vector<double> o;
  o.reserve(observation_size(skel));
  o.push_back(hum.pos[0].z());
  const Mat3 tilt = H * hum.rot[0];
  push(o, tilt.col(0));
  push(o, tilt.col(1));
  for (std::size_t i = 6; i < sim.dofs(); ++i) o.push_back(s.q[i]);
  push(o, H * Vec3(s.qd[0], s.qd[1], s.qd[2]));
  for (std::size_t i = 3; i < sim.dofs(); ++i) o.push_back(s.qd[i]);
  for (std::size_t j = 1; j < J; ++j) push(o, H * (hum.pos[j] - hum.pos[0]));

  for (std::size_t j = 0; j < J; ++j) push(o, H * (goal.pos[j] - hum.pos[j]));
  for (std::size_t j = 0; j < J; ++j) push(o, H * motion::log_so3(goal.rot[j] * hum.rot[j].transpose()));
  for (std::size_t j = 0; j < J; ++j) push(o, H * (goal.lin[j] - hum.lin[j]));
  for (std::size_t j = 0; j < J; ++j) push(o, H * (goal.ang[j] - hum.ang[j]));
  return o;
}

std::size_t style_feature_size(const Skeleton& skel) { return 1 + 6 + 3 * (skel.joint_count() - 1) + 6; }

std::vector<double> style_features(const BodyState& b) {
  const std::size_t J = b.pos.size();
  if (J == 0) throw ShapeError("style_features: empty body state");
  const Mat3 H = yaw_inverse(b.rot[0]);
  std::vector<double> f;
  f.reserve(1 + 6 + 3 * (J - 1) + 6);
  f.push_back(b.pos[0].z());
  const Mat3 tilt = H * b.rot[0];
  push(f, tilt.col(0));
  push(f, tilt.col(1));
  for (std::size_t j = 1; j < J; ++j) push(f, H * (b.pos[j] - b.pos[0]));
  push(f, H * b.lin[0]);
  push(f, H * b.ang[0]);
  return f;
}

}  // namespace pmr::ptm
