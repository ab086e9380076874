#include <doctest.h>

#include <cmath>
#include <random>

#include "pmr/error.hpp"
#include "pmr/sim/sim.hpp"

using namespace pmr;
using namespace pmr::sim;
using motion::MotionFrame;
using motion::Skeleton;

namespace {

// root -> pivot (coincident) -> bob; with a pinned root only the pivot moves.
Skeleton pendulum() {
  return Skeleton("pendulum",
                  {{"root", -1, {0, 0, 0}, 0.02}, {"pivot", 0, {0, 0, 0}, 0.02}, {"bob", 1, {0.5, 0, 0}, 0.05}},
                  {2}, 2);
}

Skeleton plank() {
  return Skeleton("plank", {{"root", -1, {0, 0, 0}, 0.05}, {"toe", 0, {0.2, 0, 0}, 0.05}}, {1}, 1);
}

SimState rest_state(const Simulator& sim) {
  SimState s;
  s.q.assign(sim.dofs(), 0.0);
  s.qd.assign(sim.dofs(), 0.0);
  return s;
}

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

}  // namespace

TEST_CASE("pd_torque") {
  const std::vector<double> q = {0, 0, 0, 0, 0, 0, 0.1}, qd = {0, 0, 0, 0, 0, 0, 0.2};
  std::vector<double> kp(7, 10.0), kd(7, 1.0), a = q;
  a[6] = 0.6;
  auto tau = pd_torque(a, q, qd, kp, kd);
  CHECK(tau[6] == doctest::Approx(4.8));
  for (int i = 0; i < 3; ++i) CHECK(tau[i] == 0.0);

  // a = x, qd = 0
  auto zero = pd_torque(q, q, zeros(7), kp, kd);
  for (double t : zero) CHECK(t == 0.0);

  std::vector<double> kp2(7, 20.0);
  auto pos1 = pd_torque(a, q, zeros(7), kp, kd);
  auto pos2 = pd_torque(a, q, zeros(7), kp2, kd);
  CHECK(pos2[6] == 2.0 * pos1[6]);

  CHECK_THROWS_AS(pd_torque(a, q, qd, std::vector<double>(6, 1.0), kd), ShapeError);
}

TEST_CASE("config validation and json") {
  SimConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.dt = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.contact_stiffness = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.kp = {1.0, -1.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(c.physics_steps_per_control() == 4);

  c.friction = 0.3;
  c.kp = {1, 2, 3};
  const auto back = SimConfig::from_json(c.to_json());
  CHECK(back.friction == 0.3);
  CHECK(back.kp == c.kp);
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("residual clamping") {
  ResidualForce r{Vec3(600, 0, 0), Vec3(0, 0, 10)};
  auto c = r.clamped(300, 150);
  CHECK(c.force.norm() == doctest::Approx(300));
  CHECK(c.torque.z() == 10);
}

TEST_CASE("no forces leaves the state unchanged") {
  SimConfig cfg;
  cfg.gravity = 0;
  cfg.ground_height = -10;
  Simulator sim(motion::desk_humanoid(), cfg);
  CHECK(sim.dofs() == 69);
  SimState s = rest_state(sim);
  s.q[2] = 1.0;
  s.q[10] = 0.3;
  const SimState n = sim.step(s, zeros(sim.dofs()), {});
  CHECK(n.q == s.q);
  CHECK(n.qd == s.qd);
  CHECK(n.time == doctest::Approx(cfg.dt));
}

TEST_CASE("ballistic root matches the closed form") {
  SimConfig cfg;
  cfg.ground_height = -10;
  Simulator sim(motion::desk_humanoid(), cfg);
  SimState s = rest_state(sim);
  s.q[2] = 1.0;
  const int steps = 30;  // 0.25 s
  for (int k = 1; k <= steps; ++k) {
    s = sim.step(s, zeros(sim.dofs()), {});
    const double t = k * cfg.dt;
    const double z = 1.0 - 0.5 * cfg.gravity * t * t;
    CHECK(std::abs(s.q[2] - z) <= 0.01 * z);
  }
}

TEST_CASE("pendulum conserves energy") {
  SimConfig cfg;
  cfg.fixed_root = true;
  cfg.joint_damping = 0;
  cfg.ground_height = -10;
  Simulator sim(pendulum(), cfg);
  SimState s = rest_state(sim);
  s.q[7] = 1.0;  // pivot about y
  const double e0 = sim.energy(s);
  const double swing = sim.body_mass()[2] * cfg.gravity * 0.25 * std::sin(1.0);
  double worst = 0;
  for (int k = 0; k < 600; ++k) {
    s = sim.step(s, zeros(sim.dofs()), {});
    worst = std::max(worst, std::abs(sim.energy(s) - e0));
  }
  // relative to the energy exchanged over a swing
  CHECK(worst < 0.02 * swing);
  CHECK(s.q[6] == doctest::Approx(0.0));
  CHECK(s.q[8] == doctest::Approx(0.0));
}

TEST_CASE("critically damped joint settles") {
  SimConfig cfg;
  cfg.fixed_root = true;
  cfg.gravity = 0;
  cfg.joint_damping = 0;
  cfg.ground_height = -10;
  Simulator base(pendulum(), cfg);
  const double m = base.mass()[7];
  const double kp = 100.0 * m;
  cfg.kp.assign(base.dofs(), 0.0);
  cfg.kd.assign(base.dofs(), 0.0);
  cfg.kp[7] = kp;
  cfg.kd[7] = 2.0 * std::sqrt(kp * m);
  Simulator sim(pendulum(), cfg);
  SimState s = rest_state(sim);
  auto action = zeros(sim.dofs());
  action[7] = 0.5;
  for (int k = 0; k < 30; ++k) s = sim.control_step(s, action, {});
  CHECK(std::abs(s.q[7] - 0.5) < 1e-3);
}

TEST_CASE("contact forces") {
  SimConfig cfg;
  cfg.contact_stiffness = 1e4;
  Simulator sim(plank(), cfg);
  SimState s = rest_state(sim);
  const double r = plank().contact_radius(1);

  s.q[2] = r + 0.01;  // 1 cm above
  auto c = sim.contact_forces(s);
  REQUIRE(c.forces.size() == sim.contact_joints().size());
  for (std::size_t i = 0; i < c.forces.size(); ++i) {
    CHECK(c.forces[i].norm() == 0.0);
    CHECK_FALSE(c.flags[i]);
  }

  s.q[2] = r - 0.001;
  c = sim.contact_forces(s);
  CHECK(c.forces[0].z() == doctest::Approx(10.0));
  CHECK(c.flags[0]);

  // Moving up fast: damping would pull, the clamp keeps it at zero.
  s.qd[2] = 5.0;
  c = sim.contact_forces(s);
  CHECK(c.forces[0].z() == 0.0);
}

TEST_CASE("friction is bounded by the cone") {
  SimConfig cfg;
  Simulator sim(plank(), cfg);
  SimState s = rest_state(sim);
  s.q[2] = plank().contact_radius(1) - 0.002;
  s.qd[0] = 3.0;
  const auto c = sim.contact_forces(s);
  const Vec3 f = c.forces[0];
  CHECK(f.x() < 0);
  CHECK(std::hypot(f.x(), f.y()) <= cfg.friction * f.z() + 1e-9);
}

TEST_CASE("stick friction holds planted feet") {
  auto slide = [](double stiffness) {
    SimConfig cfg;
    cfg.tangential_stiffness = stiffness;
    Simulator sim(motion::desk_humanoid(), cfg);
    MotionFrame f = MotionFrame::identity(motion::kSmplJoints);
    f.translation = Vec3(0, 0, 0.91);
    SimState s = sim.reset_to_frame(f);
    const auto target = sim.coordinates(f);
    const int foot = motion::desk_humanoid().feet()[0];
    const Vec3 start = sim.pose(s).positions[foot];
    ResidualForce push{Vec3(0, 40, 0), Vec3::Zero()};
    for (int k = 0; k < 60; ++k) s = sim.step_pd(s, target, {}, push);
    REQUIRE(s.anchors.size() == sim.contact_joints().size());
    const Vec3 d = sim.pose(s).positions[foot] - start;
    return std::hypot(d.x(), d.y());
  };
  const double stuck = slide(2e4), viscous = slide(0.0);
  CHECK(stuck < 0.002);
  CHECK(stuck < 0.25 * viscous);
}

TEST_CASE("anchors release on lift-off") {
  Simulator sim(plank(), SimConfig{});
  SimState s = rest_state(sim);
  s.q[2] = plank().contact_radius(1) - 0.001;
  s = sim.step(s, zeros(sim.dofs()), {});
  REQUIRE(s.anchors.size() == 1);
  CHECK(std::isfinite(s.anchors[0].x()));
  s.q[2] = 1.0;
  s.qd.assign(sim.dofs(), 0.0);
  s = sim.step(s, zeros(sim.dofs()), {});
  CHECK_FALSE(std::isfinite(s.anchors[0].x()));
}

TEST_CASE("stable PD keeps stiff legs stable") {
  SimConfig cfg;
  cfg.ground_height = -10;
  Simulator sim(motion::desk_humanoid(), cfg);
  SimState s = rest_state(sim);
  s.q[2] = 2.0;
  auto target = zeros(sim.dofs());
  target[6 + 3 * 3 + 1] = 0.8;  // left knee
  std::vector<double> applied;
  for (int k = 0; k < 60; ++k) s = sim.step_pd(s, target, {}, {}, &applied);
  CHECK(std::abs(s.q[6 + 3 * 3 + 1] - 0.8) < 0.02);
  CHECK(applied.size() == sim.dofs());
  CHECK_THROWS_AS(sim.step_pd(s, zeros(3), {}, {}), ShapeError);
}

TEST_CASE("reset: lift, spike and determinism") {
  SimConfig cfg;
  Simulator sim(motion::desk_humanoid(), cfg);
  MotionFrame f = MotionFrame::identity(motion::kSmplJoints);
  f.translation = Vec3(0, 0, 0.86);  // 5 cm too low
  SimState s = sim.reset_to_frame(f);
  CHECK(sim.lowest_contact_point(s) >= -0.001 - 1e-12);
  CHECK(sim.lowest_contact_point(s) == doctest::Approx(-0.001));

  const SimState again = sim.reset_to_frame(f);
  CHECK(again.q == s.q);
  CHECK(again.qd == s.qd);
  CHECK(again.contact == s.contact);

  const double weight = sim.total_mass() * cfg.gravity;
  const auto action = sim.coordinates(f);
  SimState cur = s;
  for (int k = 0; k < sim.config().physics_steps_per_control(); ++k) {
    cur = sim.step_pd(cur, action, {}, {});
    double fz = 0;
    for (const auto& fc : sim.contact_forces(cur).forces) fz += fc.z();
    CHECK(fz < 2.0 * weight);
  }
  // flags follow geometry
  const auto c = sim.contact_forces(cur);
  CHECK(c.flags == cur.contact);

  // A frame well above the ground is not moved.
  f.translation.z() = 1.5;
  CHECK(sim.reset_to_frame(f).q[2] == 1.5);
}

TEST_CASE("reset carries reference velocities") {
  Simulator sim(motion::desk_humanoid(), SimConfig{});
  motion::MotionSequence seq;
  for (int t = 0; t < 2; ++t) {
    MotionFrame f = MotionFrame::identity(motion::kSmplJoints);
    f.translation = Vec3(0.01 * t, 0, 1.2);
    f.rotations[4] = motion::matrix_to_rot6d(motion::exp_so3(Vec3(0, 0.02 * t, 0)));
    seq.frames.push_back(f);
  }
  const auto vel = motion::finite_velocities(motion::desk_humanoid(), seq);
  const SimState s = sim.reset_to_frame(seq.frames[0], &vel[0]);
  CHECK(s.qd[0] == doctest::Approx(0.3));
  const std::size_t knee = 6 + 3 * 3;  // joint 4
  CHECK(s.qd[knee + 1] == doctest::Approx(0.6));
}

TEST_CASE("export round trip") {
  Simulator sim(motion::desk_humanoid(), SimConfig{});
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    MotionFrame f = MotionFrame::identity(motion::kSmplJoints);
    f.translation = Vec3(u(rng), u(rng), 2.0 + u(rng));
    for (auto& r : f.rotations) {
      Vec3 w(u(rng), u(rng), u(rng));
      w *= 2.5 * std::abs(u(rng)) / w.norm();
      r = motion::matrix_to_rot6d(motion::exp_so3(w));
    }
    const SimState s = sim.reset_to_frame(f);
    const SimState copy = s;
    const MotionFrame back = sim.to_frame(s);
    CHECK(copy.q == s.q);
    worst = std::max(worst, (back.translation - f.translation).norm());
    for (std::size_t j = 0; j < f.rotations.size(); ++j) {
      worst = std::max(worst, (back.rotations[j] - f.rotations[j]).cwiseAbs().maxCoeff());
    }
  }
  CHECK(worst < 1e-9);

  const MotionFrame id = sim.to_frame(rest_state(sim));
  for (const auto& r : id.rotations) CHECK((r - motion::identity_rot6d()).norm() == 0.0);
}

TEST_CASE("stepping is deterministic") {
  Simulator sim(motion::desk_humanoid(), SimConfig{});
  MotionFrame f = MotionFrame::identity(motion::kSmplJoints);
  f.translation = Vec3(0, 0, 0.95);
  f.rotations[16] = motion::matrix_to_rot6d(motion::exp_so3(Vec3(0.4, 0.1, 0.2)));
  const SimState s0 = sim.reset_to_frame(f);
  std::vector<double> action = sim.coordinates(f);
  action[20] += 0.3;
  ResidualForce res{Vec3(10, 0, 50), Vec3(0, 2, 0)};
  SimState a = s0, b = s0;
  for (int k = 0; k < 20; ++k) {
    a = sim.control_step(a, action, res);
    b = sim.control_step(b, action, res);
  }
  CHECK(a.q == b.q);
  CHECK(a.qd == b.qd);
}

TEST_CASE("PD standing holds posture for a while") {
  Simulator sim(motion::desk_humanoid(), SimConfig{});
  MotionFrame f = MotionFrame::identity(motion::kSmplJoints);
  f.translation = Vec3(0, 0, 0.91);
  SimState s = sim.reset_to_frame(f);
  const auto action = sim.coordinates(f);
  for (int k = 0; k < 15; ++k) s = sim.control_step(s, action, {});
  const auto pose = sim.pose(s);
  CHECK(pose.positions[motion::desk_humanoid().head()].z() > 1.3);
}

TEST_CASE("divergence names the DoF") {
  SimConfig cfg;
  cfg.ground_height = -10;
  Simulator sim(motion::desk_humanoid(), cfg);
  SimState s = rest_state(sim);
  auto tau = zeros(sim.dofs());
  tau[12] = std::numeric_limits<double>::quiet_NaN();
  try {
    sim.step(s, tau, {});
    FAIL("expected divergence");
  } catch (const SimulationDiverged& e) {
    CHECK(e.dof() == 12);
  }
  CHECK_THROWS_AS(sim.step(s, zeros(5), {}), ShapeError);
}

TEST_CASE("trajectory json") {
  const auto& sk = motion::desk_humanoid();
  TrajectoryFrame t{MotionFrame::identity(sk.joint_count()), std::vector<bool>(sk.contact_joints().size(), true),
                    {Vec3(1, 2, 3), Vec3(4, 5, 6)}};
  const auto j = trajectory_to_json(sk, 30.0, {t, t});
  CHECK(j["contacts"].size() == 2);
  CHECK(j["residual"][1][5] == 6.0);
  CHECK(j["contact_joints"].size() == sk.contact_joints().size());
}
