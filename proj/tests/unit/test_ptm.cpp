#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "pmr/error.hpp"
#include "pmr/motion/io.hpp"
#include "pmr/nn/checkpoint.hpp"
#include "pmr/ptm/ptm.hpp"
#include "pmr/synth/synth.hpp"
#include "pmr/util/hash.hpp"

using namespace pmr;
using namespace pmr::ptm;

namespace {

BodyState toy_state(const std::vector<Vec3>& pos) {
  BodyState b;
  b.pos = pos;
  b.rot.assign(pos.size(), Mat3::Identity());
  b.lin.assign(pos.size(), Vec3::Zero());
  b.ang.assign(pos.size(), Vec3::Zero());
  return b;
}

// Rest pose of the humanoid, held for a few frames.
motion::MotionSequence static_reference(double root_x = 0.0, std::size_t frames = 3) {
  const auto& skel = motion::desk_humanoid();
  motion::MotionSequence seq;
  seq.skeleton_id = skel.id();
  auto f = motion::MotionFrame::identity(skel.joint_count());
  f.translation = Vec3(root_x, 0.0, 1.2);
  seq.frames.assign(frames, f);
  return seq;
}

BodyState humanoid_state(const motion::MotionSequence& seq, std::size_t t) {
  return reference_states(motion::desk_humanoid(), seq)[t];
}

std::uint64_t test_seed() { return 17; }

PpoConfig hold_config() {
  PpoConfig c;
  c.policy_hidden = {32, 32};
  c.value_hidden = {32, 32};
  c.steps_per_update = 512;
  c.minibatch = 128;
  c.output_scale = 0.1;
  c.init_log_std = -0.5;
  c.policy_lr = 1e-3;
  c.seed = 5;
  return c;
}

std::vector<motion::MotionSequence> clips(std::size_t n, std::uint64_t seed) {
  std::vector<motion::MotionSequence> out;
  for (auto& c : synth::corpus(n, seed, {synth::ClipKind::Walk, synth::ClipKind::Jump, synth::ClipKind::Squat,
                                         synth::ClipKind::Kick})) {
    out.push_back(c.seq);
  }
  return out;
}

ControllerConfig small_config() {
  ControllerConfig c;
  c.pretrain_steps_per_update = 1024;
  c.adapt_steps_per_update = 128;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pmr_test_ptm_" + name);
}

}  // namespace

TEST_CASE("observation goal block") {
  const auto& skel = motion::desk_humanoid();
  const sim::Simulator sim(skel, {});
  const auto lay = observation_layout(skel);
  const auto ref = static_reference();
  const auto ref_states = reference_states(skel, ref);
  const auto s = sim.reset_to_frame(ref.frames[0]);
  const auto pose = sim.pose(s);
  const BodyState hum = body_state(pose, pose, ref.fps);

  const auto o = observe(sim, s, hum, ref_states, 0);
  REQUIRE(o.size() == observation_size(skel));
  REQUIRE(lay.size == o.size());
  for (std::size_t i = lay.goal_pos; i < lay.size; ++i) CHECK(std::abs(o[i]) < 1e-12);
  CHECK(observe(sim, s, hum, ref_states, 0) == o);

  SUBCASE("reference offset along x") {
    const auto shifted = reference_states(skel, static_reference(0.1));
    const auto g = observe(sim, s, hum, shifted, 0);
    for (std::size_t j = 0; j < skel.joint_count(); ++j) {
      CHECK(g[lay.goal_pos + 3 * j] == doctest::Approx(0.1).epsilon(1e-12));
      CHECK(std::abs(g[lay.goal_pos + 3 * j + 1]) < 1e-12);
      CHECK(std::abs(g[lay.goal_pos + 3 * j + 2]) < 1e-12);
    }
    for (std::size_t i = lay.goal_rot; i < lay.size; ++i) CHECK(std::abs(g[i]) < 1e-12);
  }
  SUBCASE("last frame is its own successor") {
    CHECK(observe(sim, s, hum, ref_states, 2) == observe(sim, s, hum, ref_states, 5));
  }
}

TEST_CASE("relative reward") {
  RewardWeights w;
  const auto a = toy_state({{0.3, -0.2, 0.9}, {0.5, 0.1, 0.4}});
  CHECK(relative_reward(a, a, w) == doctest::Approx(w.w_p + w.w_r + w.w_v + w.w_w).epsilon(1e-15));

  std::mt19937_64 rng(test_seed());
  std::normal_distribution<double> g(0.0, 1.0);
  auto random_state = [&](std::size_t J) {
    BodyState b;
    for (std::size_t j = 0; j < J; ++j) {
      b.pos.emplace_back(g(rng), g(rng), std::abs(g(rng)));
      b.rot.push_back(motion::exp_so3(Vec3(g(rng), g(rng), g(rng))));
      b.lin.emplace_back(g(rng), g(rng), g(rng));
      b.ang.emplace_back(g(rng), g(rng), g(rng));
    }
    return b;
  };
  int vertical_checked = 0;
  for (int k = 0; k < 1000; ++k) {
    // Nearby states keep every exponential term well above rounding.
    auto ref = random_state(6);
    auto hum = ref;
    for (std::size_t j = 0; j < 6; ++j) {
      hum.pos[j] += 0.02 * Vec3(g(rng), g(rng), g(rng));
      hum.rot[j] = motion::exp_so3(0.1 * Vec3(g(rng), g(rng), g(rng))) * hum.rot[j];
      hum.lin[j] += Vec3(g(rng), g(rng), g(rng));
      hum.ang[j] += Vec3(g(rng), g(rng), g(rng));
    }
    // Positions on a 2^-20 grid so that adding the offsets below is exact.
    for (auto* b : {&ref, &hum}) {
      for (auto& p : b->pos) p = p.unaryExpr([](double x) { return std::ldexp(std::round(std::ldexp(x, 20)), -20); });
    }
    const double base = relative_reward(hum, ref, w);
    CHECK(base > 0.0);
    CHECK(base <= w.w_p + w.w_r + w.w_v + w.w_w);
    // Offsets that are exact in binary keep the invariance exact.
    const Vec3 d(std::ldexp(double(k % 7) - 3.0, -2), std::ldexp(double(k % 5) - 2.0, -3), 0.0);
    auto hs = hum, rs = ref;
    for (auto& p : hs.pos) p += d;
    for (auto& p : rs.pos) p += d;
    CHECK(relative_reward(hs, rs, w) == base);

    // Raising or lowering the humanoid alone changes the position term.
    const double dz = (k % 2 ? 0.1 : -0.1);
    auto hz = hum;
    for (auto& p : hz.pos) p.z() += dz;
    const double before = tracking_error(hum, ref).pos, after = tracking_error(hz, ref).pos;
    if (std::abs(before - after) > 1e-9) {
      CHECK(relative_reward(hz, ref, w) != base);
      ++vertical_checked;
    }
  }
  CHECK(vertical_checked > 900);

  SUBCASE("vertical offset of a two-joint toy") {
    const auto ref = toy_state({{0.0, 0.0, 0.9}, {0.2, 0.0, 0.5}});
    auto hum = ref;
    hum.pos[0].z() += 0.1;
    // Root height error 0.1, child unchanged: mean position error 0.05.
    CHECK(relative_reward(hum, ref, w) == doctest::Approx(0.25 * std::exp(-100.0 * 0.05) + 0.75).epsilon(1e-14));
    auto both = ref;
    for (auto& p : both.pos) p.z() -= 0.1;
    CHECK(relative_reward(both, ref, w) == doctest::Approx(0.25 * std::exp(-10.0) + 0.75).epsilon(1e-14));
  }
  CHECK_THROWS_AS(relative_reward(toy_state({{0, 0, 0}}), a, w), ShapeError);
}

TEST_CASE("style, energy and total reward") {
  CHECK(style_reward(1.0) == 1.0);
  CHECK(style_reward(-1.0) == 0.0);
  CHECK(style_reward(-5.0) == 0.0);
  CHECK(style_reward(0.0) == doctest::Approx(0.75).epsilon(1e-15));

  RewardWeights w;
  w.energy = 0.01;
  const sim::ResidualForce none;
  const std::vector<double> zero(4, 0.0), qd{1.0, -2.0, 0.5, 3.0};
  CHECK(energy_penalty(zero, qd, none, w, 300, 150) == 0.0);
  CHECK(energy_penalty(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 1.0}, none, w, 300, 150) ==
        doctest::Approx(-0.01).epsilon(1e-15));
  const std::vector<double> tau{0.3, -1.2, 2.0, 0.7}, tau2{0.6, -2.4, 4.0, 1.4};
  CHECK(energy_penalty(tau2, qd, none, w, 300, 150) ==
        doctest::Approx(4.0 * energy_penalty(tau, qd, none, w, 300, 150)).epsilon(1e-14));
  sim::ResidualForce r;
  r.force = Vec3(300, 0, 0);
  r.torque = Vec3(0, 75, 0);
  CHECK(energy_penalty(zero, qd, r, w, 300, 150) == doctest::Approx(-w.residual * 1.25).epsilon(1e-15));
  CHECK_THROWS_AS(energy_penalty(tau, std::vector<double>{1.0}, none, w, 300, 150), ShapeError);

  CHECK(total_reward({1.0, 1.0, 0.0}, w) == doctest::Approx(1.0).epsilon(1e-15));
  auto nostyle = w;
  nostyle.style = 0.0;
  CHECK(total_reward({0.4, 0.9, -0.1}, nostyle) == doctest::Approx(0.5 * 0.4 - 0.1).epsilon(1e-15));
  CHECK(total_reward({0.4, 0.9, -0.1}, w) < total_reward({0.4, 1.0, -0.1}, w));
}

TEST_CASE("termination rules") {
  const auto& skel = motion::desk_humanoid();
  const auto ref = humanoid_state(static_reference(), 0);
  const std::vector<bool> no_contact(skel.contact_joints().size(), false);
  TerminationConfig cfg;
  CHECK(check_termination(skel, ref, ref, no_contact, cfg) == Termination::None);

  auto high = ref;
  for (auto& p : high.pos) p.z() += cfg.distance + 1e-9;
  CHECK(check_termination(skel, high, ref, no_contact, cfg) == Termination::Distance);
  auto under = ref;
  for (auto& p : under.pos) p.z() += cfg.distance - 1e-9;
  CHECK(check_termination(skel, under, ref, no_contact, cfg) == Termination::None);

  auto head = ref;
  auto ref_head = ref;
  ref_head.pos[skel.head()].z() = 1.5;
  head.pos[skel.head()].z() = 0.1;
  CHECK(check_termination(skel, head, ref_head, no_contact, cfg) == Termination::Head);

  // A hand on the ground while the reference hand is in the air.
  const auto& cj = skel.contact_joints();
  std::size_t hand = cj.size();
  for (std::size_t k = 0; k < cj.size(); ++k) {
    if (!skel.is_foot(cj[k]) && cj[k] != skel.head()) hand = k;
  }
  REQUIRE(hand < cj.size());
  auto touching = no_contact;
  touching[hand] = true;
  CHECK(check_termination(skel, ref, ref, touching, cfg) == Termination::Contact);
  CHECK_THROWS_AS(check_termination(skel, ref, ref, {true}, cfg), ShapeError);
}

TEST_CASE("termination is monotone in joint distance") {
  const auto& skel = motion::desk_humanoid();
  const auto ref = humanoid_state(static_reference(), 0);
  const std::size_t J = skel.joint_count();
  std::mt19937_64 rng(test_seed());
  std::normal_distribution<double> g(0.0, 0.15);
  std::uniform_real_distribution<double> grow(0.0, 2.0);
  std::uniform_int_distribution<std::size_t> pick(1, J - 1);
  std::bernoulli_distribution coin(0.2);
  TerminationConfig cfg;
  cfg.distance = 0.2;
  int flips = 0, positives = 0;
  for (int k = 0; k < 2000; ++k) {
    auto hum = ref;
    for (std::size_t j = 0; j < J; ++j) hum.pos[j] += Vec3(g(rng), g(rng), g(rng));
    std::vector<bool> contact(skel.contact_joints().size());
    for (std::size_t c = 0; c < contact.size(); ++c) contact[c] = coin(rng);
    const auto before = check_termination(skel, hum, ref, contact, cfg);
    // Push one non-root joint further from its reference position.
    const std::size_t j = pick(rng);
    const Vec3 err = hum.pos[j] - ref.pos[j];
    auto far = hum;
    far.pos[j] = ref.pos[j] + (1.0 + grow(rng)) * err;
    const auto after = check_termination(skel, far, ref, contact, cfg);
    positives += before != Termination::None;
    if (before != Termination::None && after == Termination::None) ++flips;
  }
  CHECK(flips == 0);
  CHECK(positives > 100);
}

TEST_CASE("PPO learns the hold task within 200 updates") {
  const auto cfg = hold_config();
  nn::Rng rng(cfg.seed);
  HoldTask env;
  auto ac = ActorCritic::create(3, 1, cfg, rng);
  auto opt = PpoOptimizer::create(ac, cfg);
  double best = 0.0;
  int reached = -1;
  for (int u = 0; u < 200; ++u) {
    auto batch = collect(env, ac, static_cast<std::size_t>(cfg.steps_per_update), rng, true);
    compute_gae(batch, cfg.gamma, cfg.lambda);
    const auto st = ppo_update(batch, ac, opt, cfg, rng);
    // Every update keeps the batch ratios inside the trust band.
    CHECK(st.ratio_min >= 1.0 - cfg.clip - cfg.ratio_slack);
    CHECK(st.ratio_max <= 1.0 + cfg.clip + cfg.ratio_slack);
    if ((u + 1) % 10 == 0) {
      best = std::max(best, evaluate_hold(ac, 50, 1234));
      if (best >= 0.9 && reached < 0) reached = u + 1;
    }
  }
  MESSAGE("hold task: best normalized return " << best << ", first >= 0.9 at update " << reached);
  CHECK(best >= 0.9);
}

TEST_CASE("PPO update edge cases") {
  auto cfg = hold_config();
  cfg.entropy_coef = 0.0;
  nn::Rng rng(3);
  HoldTask env;
  auto ac = ActorCritic::create(3, 1, cfg, rng);
  auto opt = PpoOptimizer::create(ac, cfg);
  auto batch = collect(env, ac, 256, rng, true);
  compute_gae(batch, cfg.gamma, cfg.lambda);
  std::fill(batch.advantages.begin(), batch.advantages.end(), 0.0);
  const std::vector<double> policy(ac.policy.parameters().begin(), ac.policy.parameters().end());
  const auto log_std = ac.log_std;
  const std::vector<double> value(ac.value.parameters().begin(), ac.value.parameters().end());
  ppo_update(batch, ac, opt, cfg, rng);
  CHECK(std::vector<double>(ac.policy.parameters().begin(), ac.policy.parameters().end()) == policy);
  CHECK(ac.log_std == log_std);
  CHECK(std::vector<double>(ac.value.parameters().begin(), ac.value.parameters().end()) != value);

  RolloutBatch empty;
  empty.obs_dim = 3;
  empty.act_dim = 1;
  CHECK_THROWS_AS(ppo_update(empty, ac, opt, cfg, rng), ValidationError);
}

TEST_CASE("rollout replay and determinism") {
  const auto& skel = motion::desk_humanoid();
  synth::WalkParams p;
  p.duration = 2.0;
  const auto ref = synth::walk(p);
  const auto ctrl = make_controller(skel, small_config(), {ref});
  const auto a = rollout(ctrl, ref);
  const auto b = rollout(ctrl, ref);
  REQUIRE(a.success);
  CHECK(a.progress == 1.0);
  REQUIRE(a.motion.size() == ref.size());
  REQUIRE(a.steps.size() == ref.size() - 1);
  for (std::size_t t = 0; t < a.motion.size(); ++t) {
    CHECK(a.motion.frames[t].translation == b.motion.frames[t].translation);
    CHECK(a.motion.frames[t].rotations == b.motion.frames[t].rotations);
  }

  // Offline recomputation of every step's reward from the exported frames.
  const auto ref_states = reference_states(skel, ref);
  const auto& w = ctrl.cfg.reward;
  double total = 0.0;
  for (std::size_t t = 0; t < a.steps.size(); ++t) {
    const auto& s = a.steps[t];
    CHECK(s.reward == total_reward(s.parts, w));
    const auto prev = motion::forward_kinematics(skel, a.motion.frames[t]);
    const auto now = motion::forward_kinematics(skel, a.motion.frames[t + 1]);
    const auto hum = body_state(now, prev, ref.fps);
    CHECK(relative_reward(hum, ref_states[t + 1], w) == doctest::Approx(s.parts.goal).epsilon(1e-6));
    CHECK(s.parts.energy <= 0.0);
    CHECK(s.parts.style >= 0.0);
    CHECK(s.parts.style <= 1.0);
    total += s.reward;
  }
  CHECK(a.total_reward == doctest::Approx(total).epsilon(1e-12));

  auto bad = ref;
  bad.fps = 60.0;
  CHECK_THROWS_AS(rollout(ctrl, bad), ValidationError);
}

namespace {

struct Pretrained {
  ControllerConfig cfg;
  PretrainReport rep;
  Controller ctrl;
};

// Shared by the subcases below (doctest re-runs the enclosing case per subcase).
const Pretrained& pretrained() {
  static const Pretrained p = [] {
    Pretrained out;
    out.cfg = small_config();
    out.cfg.pretrain_updates = 24;
    out.ctrl = pretrain(clips(8, 21), out.cfg, &out.rep);
    return out;
  }();
  return p;
}

}  // namespace

TEST_CASE("pretraining, checkpoint and adaptation") {
  CHECK_THROWS_AS(pretrain({}, small_config()), ValidationError);
  const auto& cfg = pretrained().cfg;
  const auto& rep = pretrained().rep;
  const auto& ctrl = pretrained().ctrl;
  REQUIRE(rep.mean_reward.size() == 24);
  for (std::size_t u = 0; u < rep.stats.size(); ++u) {
    CHECK(std::isfinite(rep.mean_reward[u]));
    CHECK(rep.stats[u].ratio_min >= 1.0 - cfg.ppo.clip - cfg.ppo.ratio_slack);
    CHECK(rep.stats[u].ratio_max <= 1.0 + cfg.ppo.clip + cfg.ppo.ratio_slack);
  }
  // Reward curve under a 20-update moving average (recorded; see notes).
  std::vector<double> ma;
  for (std::size_t u = 20; u <= rep.mean_reward.size(); ++u) {
    double s = 0;
    for (std::size_t k = u - 20; k < u; ++k) s += rep.mean_reward[k];
    ma.push_back(s / 20.0);
  }
  bool non_decreasing = true;
  for (std::size_t i = 1; i < ma.size(); ++i) non_decreasing = non_decreasing && ma[i] >= ma[i - 1];
  MESSAGE("pretrain reward first " << rep.mean_reward.front() << " last " << rep.mean_reward.back()
                                   << ", moving average " << ma.front() << " -> " << ma.back());
  WARN(non_decreasing);

  const auto path = temp_file("ctrl.ckpt");
  ctrl.save(path);
  const auto hash = util::sha256_file(path);
  const auto loaded = Controller::load(path);
  synth::WalkParams p;
  p.duration = 2.5;
  p.heading = 0.4;
  const auto walk = synth::walk(p);
  const auto r1 = rollout(ctrl, walk), r2 = rollout(loaded, walk);
  REQUIRE(r1.motion.size() == r2.motion.size());
  for (std::size_t t = 0; t < r1.motion.size(); ++t) {
    CHECK(r1.motion.frames[t].translation == r2.motion.frames[t].translation);
    CHECK(r1.motion.frames[t].rotations == r2.motion.frames[t].rotations);
  }

  SUBCASE("a tracked reference short-circuits") {
    REQUIRE(r1.success);
    const auto res = tta_adapt(loaded, walk, {});
    CHECK(res.report.success);
    CHECK(res.report.steps_used == 0);
    CHECK(res.report.progress == std::vector<double>{1.0});
    CHECK(res.restored.size() == walk.size());
  }
  SUBCASE("an impossible reference exhausts the budget") {
    auto teleport = walk;
    for (std::size_t t = 20; t < teleport.size(); ++t) teleport.frames[t].translation.z() += 1.5;
    const auto res = tta_adapt(loaded, teleport, {1});
    CHECK_FALSE(res.report.success);
    CHECK(res.report.steps_used == 1);
    CHECK(res.rollout.progress < 1.0);
    CHECK(res.report.progress.size() == 2);
    CHECK(res.report.reward_trace.size() == 1);
    CHECK(res.report.to_json().at("success") == false);
    // The stored checkpoint and the in-memory controller are untouched.
    CHECK(util::sha256_file(path) == hash);
    const auto again = rollout(loaded, walk);
    CHECK(again.motion.frames.back().translation == r2.motion.frames.back().translation);
  }
  CHECK_THROWS_AS(tta_adapt(loaded, walk, {0}), ValidationError);

  auto tampered = nn::Archive::load(path);
  tampered.meta["reward_hash"] = "0";
  tampered.save(path);
  CHECK_THROWS_AS(Controller::load(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("controller config round trip") {
  auto c = small_config();
  c.reward.style = 0.25;
  c.termination.distance = 0.4;
  const auto back = ControllerConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.reward_hash() == c.reward_hash());
  auto d = c;
  d.reward.energy *= 2;
  CHECK(d.reward_hash() != c.reward_hash());
  auto j = c.to_json();
  j["segment_frames"] = 1;
  CHECK_THROWS_AS(ControllerConfig::from_json(j), ValidationError);
}
