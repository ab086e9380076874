#include "pmr/ptm/ptm.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pmr/error.hpp"
#include "pmr/motion/io.hpp"
#include "pmr/nn/checkpoint.hpp"
#include "pmr/util/hash.hpp"

namespace pmr::ptm {

using motion::MotionSequence;

void ControllerConfig::validate() const {
  sim.validate();
  reward.validate();
  termination.validate();
  ppo.validate();
  if (!(pretrain_distance > 0)) throw ValidationError("pretrain distance must be positive");
  for (double v : {joint_action_scale, force_action_scale, torque_action_scale, root_kp, root_kd}) {
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError("action scales and root gains must be non-negative");
  }
  if (disc_hidden.empty()) throw ValidationError("discriminator needs hidden layers");
  if (!(disc_lr > 0) || !(disc_gradient_penalty >= 0)) throw ValidationError("discriminator settings out of range");
  if (disc_batch < 1 || disc_steps < 0) throw ValidationError("discriminator batch sizes out of range");
  if (segment_frames < 2 || pretrain_updates < 0 || pretrain_steps_per_update < 1 || adapt_steps_per_update < 1) {
    throw ValidationError("controller schedule sizes out of range");
  }
}

nlohmann::json ControllerConfig::to_json() const {
  return {{"sim", sim.to_json()},
          {"reward", reward.to_json()},
          {"termination", termination.to_json()},
          {"pretrain_distance", pretrain_distance},
          {"ppo", ppo.to_json()},
          {"joint_action_scale", joint_action_scale},
          {"force_action_scale", force_action_scale},
          {"torque_action_scale", torque_action_scale},
          {"root_kp", root_kp},
          {"root_kd", root_kd},
          {"disc_hidden", disc_hidden},
          {"disc_lr", disc_lr},
          {"disc_gradient_penalty", disc_gradient_penalty},
          {"disc_batch", disc_batch},
          {"disc_steps", disc_steps},
          {"segment_frames", segment_frames},
          {"pretrain_updates", pretrain_updates},
          {"pretrain_steps_per_update", pretrain_steps_per_update},
          {"adapt_steps_per_update", adapt_steps_per_update}};
}

ControllerConfig ControllerConfig::from_json(const nlohmann::json& j) {
  ControllerConfig c;
  try {
    if (j.contains("sim")) c.sim = sim::SimConfig::from_json(j.at("sim"));
    if (j.contains("reward")) c.reward = RewardWeights::from_json(j.at("reward"));
    if (j.contains("termination")) c.termination = TerminationConfig::from_json(j.at("termination"));
    if (j.contains("ppo")) c.ppo = PpoConfig::from_json(j.at("ppo"));
    c.pretrain_distance = j.value("pretrain_distance", c.pretrain_distance);
    c.joint_action_scale = j.value("joint_action_scale", c.joint_action_scale);
    c.force_action_scale = j.value("force_action_scale", c.force_action_scale);
    c.torque_action_scale = j.value("torque_action_scale", c.torque_action_scale);
    c.root_kp = j.value("root_kp", c.root_kp);
    c.root_kd = j.value("root_kd", c.root_kd);
    c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
    c.disc_lr = j.value("disc_lr", c.disc_lr);
    c.disc_gradient_penalty = j.value("disc_gradient_penalty", c.disc_gradient_penalty);
    c.disc_batch = j.value("disc_batch", c.disc_batch);
    c.disc_steps = j.value("disc_steps", c.disc_steps);
    c.segment_frames = j.value("segment_frames", c.segment_frames);
    c.pretrain_updates = j.value("pretrain_updates", c.pretrain_updates);
    c.pretrain_steps_per_update = j.value("pretrain_steps_per_update", c.pretrain_steps_per_update);
    c.adapt_steps_per_update = j.value("adapt_steps_per_update", c.adapt_steps_per_update);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("controller config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ControllerConfig::reward_hash() const {
  const nlohmann::json j = {{"reward", reward.to_json()},
                            {"termination", termination.to_json()},
                            {"pretrain_distance", pretrain_distance}};
  return util::sha256_hex(j.dump());
}

double Discriminator::score(std::span<const double> pair) const {
  if (pair.size() != mean.size()) throw ShapeError("discriminator input size mismatch");
  std::vector<double> x(pair.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (pair[i] - mean[i]) / scale[i];
  return net.forward(x)[0];
}

namespace {

std::vector<double> concat(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Consecutive-frame style pairs of a reference.
void demo_pairs(const std::vector<BodyState>& states, std::vector<std::vector<double>>& out) {
  for (std::size_t t = 1; t < states.size(); ++t) {
    out.push_back(concat(style_features(states[t - 1]), style_features(states[t])));
  }
}

motion::Skeleton skeleton_of(const std::vector<MotionSequence>& refs) {
  if (refs.empty()) throw ValidationError("no reference motions");
  return motion::resolve_skeleton(refs.front().skeleton_id);
}

}  // namespace

Controller make_controller(const motion::Skeleton& skel, const ControllerConfig& cfg,
                           const std::vector<MotionSequence>& demos) {
  cfg.validate();
  nn::Rng rng(cfg.ppo.seed);
  Controller c;
  c.cfg = cfg;
  c.ac = ActorCritic::create(observation_size(skel), sim::dof_count(skel.joint_count()), cfg.ppo, rng);

  const std::size_t F = 2 * style_feature_size(skel);
  std::vector<std::size_t> ds{F};
  ds.insert(ds.end(), cfg.disc_hidden.begin(), cfg.disc_hidden.end());
  ds.push_back(1);
  c.disc.net = nn::Network::mlp(ds, nn::Activation::Relu, nn::Activation::Identity, rng);
  c.disc.mean.assign(F, 0.0);
  c.disc.scale.assign(F, 1.0);

  std::vector<std::vector<double>> pairs;
  for (const auto& d : demos) demo_pairs(reference_states(skel, d), pairs);
  if (!pairs.empty()) {
    const double n = static_cast<double>(pairs.size());
    for (const auto& p : pairs)
      for (std::size_t i = 0; i < F; ++i) c.disc.mean[i] += p[i] / n;
    std::vector<double> var(F, 0.0);
    for (const auto& p : pairs)
      for (std::size_t i = 0; i < F; ++i) var[i] += (p[i] - c.disc.mean[i]) * (p[i] - c.disc.mean[i]) / n;
    for (std::size_t i = 0; i < F; ++i) c.disc.scale[i] = std::max(std::sqrt(var[i]), 1e-2);
  }
  return c;
}

void Controller::save(const std::filesystem::path& path) const {
  nn::Archive a;
  a.meta = {{"kind", "ptm-controller"}, {"config", cfg.to_json()}, {"reward_hash", cfg.reward_hash()}};
  a.put_network("policy", ac.policy);
  a.put_network("value", ac.value);
  a.put_network("disc", disc.net);
  a.arrays["log_std"] = ac.log_std;
  a.arrays["obs_mean"] = ac.obs_norm.mean;
  a.arrays["obs_var"] = ac.obs_norm.var;
  a.arrays["obs_count"] = {ac.obs_norm.count, ac.obs_norm.clip};
  a.arrays["disc_mean"] = disc.mean;
  a.arrays["disc_scale"] = disc.scale;
  a.save(path);
}

Controller Controller::load(const std::filesystem::path& path) {
  const auto a = nn::Archive::load(path);
  if (a.meta.value("kind", std::string()) != "ptm-controller") throw IoError(path.string() + ": not a controller checkpoint");
  Controller c;
  c.cfg = ControllerConfig::from_json(a.meta.at("config"));
  if (a.meta.value("reward_hash", std::string()) != c.cfg.reward_hash()) {
    throw IoError(path.string() + ": reward hash does not match the stored configuration");
  }
  c.ac.policy = a.get_network("policy");
  c.ac.value = a.get_network("value");
  c.ac.log_std = a.array("log_std");
  c.ac.obs_norm.mean = a.array("obs_mean");
  c.ac.obs_norm.var = a.array("obs_var");
  const auto& cnt = a.array("obs_count");
  if (cnt.size() != 2) throw IoError(path.string() + ": malformed normalizer");
  c.ac.obs_norm.count = cnt[0];
  c.ac.obs_norm.clip = cnt[1];
  c.disc.net = a.get_network("disc");
  c.disc.mean = a.array("disc_mean");
  c.disc.scale = a.array("disc_scale");
  const std::size_t O = c.ac.policy.input_size(), A = c.ac.policy.output_size();
  if (c.ac.value.input_size() != O || c.ac.log_std.size() != A || c.ac.obs_norm.mean.size() != O ||
      c.ac.obs_norm.var.size() != O || c.disc.mean.size() != c.disc.net.input_size() ||
      c.disc.scale.size() != c.disc.mean.size()) {
    throw IoError(path.string() + ": checkpoint shapes are inconsistent");
  }
  return c;
}

// ---------------------------------------------------------------- environment

TrackingEnv::TrackingEnv(const Controller& ctrl, std::vector<MotionSequence> refs, TrackMode mode)
    : ctrl_(&ctrl), refs_(std::move(refs)), mode_(mode), sim_(skeleton_of(refs_), ctrl.cfg.sim),
      term_(ctrl.cfg.termination) {
  if (mode_ == TrackMode::Pretrain) term_.distance = ctrl.cfg.pretrain_distance;
  const double fps = 1.0 / ctrl.cfg.sim.control_dt;
  for (const auto& r : refs_) {
    if (r.size() < 2) throw InsufficientFrames("reference needs at least 2 frames");
    if (std::abs(r.fps - fps) > 1e-6 * fps) throw ValidationError("reference fps must match the control rate");
    ref_states_.push_back(ptm::reference_states(sim_.skeleton(), r));
  }
  if (ctrl.ac.observation_size() != observation_size() || ctrl.ac.action_size() != action_size()) {
    throw ShapeError("controller does not match the skeleton");
  }
}

std::size_t TrackingEnv::observation_size() const { return ptm::observation_size(sim_.skeleton()); }
std::size_t TrackingEnv::action_size() const { return sim_.dofs(); }

std::vector<double> TrackingEnv::reset(nn::Rng& rng) {
  if (mode_ == TrackMode::Pretrain) {
    const std::size_t clip = std::uniform_int_distribution<std::size_t>(0, refs_.size() - 1)(rng);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, refs_[clip].size() - 2)(rng);
    return reset_at(clip, start, static_cast<std::size_t>(ctrl_->cfg.segment_frames));
  }
  const std::size_t hi = std::min(start_limit_, refs_[0].size() - 2);
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, hi)(rng);
  return reset_at(0, start, refs_[0].size());
}

std::vector<double> TrackingEnv::reset_at(std::size_t clip, std::size_t frame, std::size_t max_frames) {
  if (clip >= refs_.size() || frame + 1 >= refs_[clip].size()) throw ValidationError("reset_at: frame out of range");
  const auto& ref = refs_[clip];
  const auto vel = motion::finite_velocities(sim_.skeleton(), ref);
  state_ = sim_.reset_to_frame(ref.frames[frame], &vel[frame]);
  body_ = ref_states_[clip][frame];
  const auto pose = sim_.pose(state_);
  body_.pos = pose.positions;
  body_.rot = pose.rotations;
  clip_ = clip;
  t_ = frame;
  end_ = std::min(ref.size() - 1, frame + std::max<std::size_t>(max_frames, 1));
  records_.clear();
  return observe(sim_, state_, body_, ref_states_[clip_], t_);
}

sim::ResidualForce TrackingEnv::residual_for(std::span<const double> a) const {
  const auto& c = ctrl_->cfg;
  const Mat3& R = body_.rot[0];
  const BodyState& ref = ref_states_[clip_][t_ + 1];
  const Vec3 e = motion::log_so3(ref.rot[0] * R.transpose());
  const Vec3 w = R * Vec3(state_.qd[3], state_.qd[4], state_.qd[5]);
  sim::ResidualForce r;
  r.force = c.force_action_scale * Vec3(a[0], a[1], a[2]);
  r.torque = c.root_kp * e - c.root_kd * w + c.torque_action_scale * Vec3(a[3], a[4], a[5]);
  return r.clamped(c.sim.residual_force_cap, c.sim.residual_torque_cap);
}

StepResult TrackingEnv::step(std::span<const double> a) {
  if (a.size() != action_size()) throw ShapeError("TrackingEnv::step: action size mismatch");
  if (t_ >= end_) throw ValidationError("TrackingEnv::step: episode already finished");
  const auto& c = ctrl_->cfg;
  const auto& refs = ref_states_[clip_];
  const auto& ref_next = refs[t_ + 1];

  auto target = sim_.coordinates(refs_[clip_].frames[t_ + 1]);
  for (std::size_t i = 6; i < target.size(); ++i) target[i] += c.joint_action_scale * a[i];
  const auto residual = residual_for(a);

  StepResult out;
  StepRecord rec;
  rec.residual = residual;
  const auto prev_style = style_features(body_);
  std::vector<double> applied;
  sim::SimState next;
  try {
    next = sim_.control_step(state_, target, residual, &applied);
  } catch (const SimulationDiverged&) {
    rec.cause = Termination::Diverged;
    records_.push_back(rec);
    out.obs = observe(sim_, state_, body_, refs, t_);
    out.terminated = true;
    out.style = concat(prev_style, prev_style);
    end_ = t_;
    return out;
  }

  const motion::JointPose prev_pose{body_.pos, body_.rot};
  const BodyState hum = body_state(sim_.pose(next), prev_pose, refs_[clip_].fps);
  out.style = concat(prev_style, style_features(hum));

  rec.parts.goal = relative_reward(hum, ref_next, c.reward, mode_ == TrackMode::Adapt);
  rec.parts.style = style_reward(ctrl_->disc.score(out.style));
  rec.parts.energy =
      energy_penalty(applied, next.qd, residual, c.reward, c.sim.residual_force_cap, c.sim.residual_torque_cap);
  rec.reward = total_reward(rec.parts, c.reward);
  rec.cause = check_termination(sim_.skeleton(), hum, ref_next, next.contact, term_);

  state_ = std::move(next);
  body_ = hum;
  ++t_;
  out.reward = rec.reward;
  out.terminated = rec.cause != Termination::None;
  out.truncated = !out.terminated && t_ >= end_;
  if (out.terminated) end_ = t_;
  out.obs = observe(sim_, state_, body_, refs, std::min(t_, refs.size() - 1));
  parts_sum_.goal += rec.parts.goal;
  parts_sum_.style += rec.parts.style;
  parts_sum_.energy += rec.parts.energy;
  ++parts_count_;
  records_.push_back(rec);
  return out;
}

RewardParts TrackingEnv::take_mean_parts() {
  RewardParts m;
  if (parts_count_ > 0) {
    const double n = static_cast<double>(parts_count_);
    m = {parts_sum_.goal / n, parts_sum_.style / n, parts_sum_.energy / n};
  }
  parts_sum_ = {};
  parts_count_ = 0;
  return m;
}

// ---------------------------------------------------------------- rollout

RolloutResult rollout(const Controller& ctrl, const MotionSequence& ref, TrackMode mode, nn::Rng* rng) {
  TrackingEnv env(ctrl, {ref}, mode);
  RolloutResult r;
  r.motion.fps = ref.fps;
  r.motion.skeleton_id = ref.skeleton_id;
  auto obs = env.reset_at(0, 0, ref.size());
  const auto& sim = env.simulator();
  auto push_frame = [&](const sim::ResidualForce& residual) {
    sim::TrajectoryFrame f;
    f.frame = sim.to_frame(env.state());
    f.contact = env.state().contact;
    f.residual = residual;
    r.motion.frames.push_back(f.frame);
    r.trajectory.push_back(std::move(f));
  };
  push_frame({});
  const std::size_t transitions = ref.size() - 1;
  for (;;) {
    const auto a = ctrl.ac.act(obs, rng);
    StepResult s = env.step(a);
    const auto& rec = env.records().back();
    r.total_reward += s.reward;
    if (rec.cause == Termination::Diverged) {
      r.cause = rec.cause;
      break;
    }
    push_frame(rec.residual);
    if (s.terminated) {
      r.cause = rec.cause;
      break;
    }
    if (s.truncated) break;
    obs = std::move(s.obs);
  }
  r.steps = env.records();
  r.progress = static_cast<double>(r.motion.size() - 1) / static_cast<double>(transitions);
  r.success = r.cause == Termination::None && r.motion.size() == ref.size();
  return r;
}

// ---------------------------------------------------------------- pretraining

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Least-squares discriminator step: demonstrations towards +1, policy
// transitions towards -1, gradient penalty on the demonstrations.
void train_discriminator(Discriminator& d, nn::Adam& opt, const std::vector<std::vector<double>>& demos,
                         const std::vector<std::vector<double>>& policy, const ControllerConfig& cfg, nn::Rng& rng) {
  if (demos.empty() || policy.empty()) return;
  const std::size_t F = d.mean.size();
  const std::size_t B = static_cast<std::size_t>(cfg.disc_batch);
  std::uniform_int_distribution<std::size_t> pick_d(0, demos.size() - 1), pick_p(0, policy.size() - 1);
  std::vector<double> x(2 * B * F), grad_out(2 * B), grad(d.net.parameter_count());
  nn::ForwardCache cache;
  for (int s = 0; s < cfg.disc_steps; ++s) {
    for (std::size_t b = 0; b < 2 * B; ++b) {
      const auto& src = b < B ? demos[pick_d(rng)] : policy[pick_p(rng)];
      for (std::size_t i = 0; i < F; ++i) x[b * F + i] = (src[i] - d.mean[i]) / d.scale[i];
    }
    d.net.forward(x, 2 * B, cache);
    const auto out = cache.output();
    for (std::size_t b = 0; b < 2 * B; ++b) {
      const double target = b < B ? 1.0 : -1.0;
      grad_out[b] = (out[b] - target) / static_cast<double>(B);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    d.net.backward(cache, grad_out, grad);
    if (cfg.disc_gradient_penalty > 0) {
      for (std::size_t b = 0; b < B; ++b) {
        d.net.input_gradient_penalty(std::span<const double>(x).subspan(b * F, F),
                                     cfg.disc_gradient_penalty / static_cast<double>(B), grad);
      }
    }
    opt.step(d.net.parameters(), grad);
  }
}

}  // namespace

Controller pretrain(const std::vector<MotionSequence>& corpus, const ControllerConfig& cfg, PretrainReport* report) {
  if (corpus.empty()) throw ValidationError("pretraining needs a non-empty corpus");
  const auto skel = skeleton_of(corpus);
  Controller ctrl = make_controller(skel, cfg, corpus);
  TrackingEnv env(ctrl, corpus, TrackMode::Pretrain);

  std::vector<std::vector<double>> demos;
  for (std::size_t i = 0; i < corpus.size(); ++i) demo_pairs(env.reference_states(i), demos);

  nn::Rng rng(cfg.ppo.seed ^ 0x9e3779b97f4a7c15ULL);
  auto opt = PpoOptimizer::create(ctrl.ac, cfg.ppo);
  nn::Adam disc_opt(ctrl.disc.net.parameter_count(), nn::AdamConfig{cfg.disc_lr});

  for (int u = 0; u < cfg.pretrain_updates; ++u) {
    auto batch = collect(env, ctrl.ac, static_cast<std::size_t>(cfg.pretrain_steps_per_update), rng, true);
    compute_gae(batch, cfg.ppo.gamma, cfg.ppo.lambda);
    const auto parts = env.take_mean_parts();
    const auto stats = ppo_update(batch, ctrl.ac, opt, cfg.ppo, rng);
    train_discriminator(ctrl.disc, disc_opt, demos, batch.style, cfg, rng);
    if (report) {
      report->mean_reward.push_back(mean_of(batch.reward));
      std::vector<double> len(batch.episode_lengths.begin(), batch.episode_lengths.end());
      report->mean_episode_length.push_back(mean_of(len));
      report->mean_parts.push_back(parts);
      report->stats.push_back(stats);
    }
  }
  return ctrl;
}

// ---------------------------------------------------------------- adaptation

void AdaptationBudget::validate() const {
  if (max_steps < 1) throw ValidationError("adaptation budget must allow at least one step");
}

nlohmann::json AdaptReport::to_json() const {
  return {{"steps_used", steps_used},
          {"success", success},
          {"progress", progress},
          {"reward_trace", reward_trace},
          {"cause", cause}};
}

AdaptResult tta_adapt(const Controller& pretrained, const MotionSequence& ref, const AdaptationBudget& budget) {
  budget.validate();
  AdaptResult res{pretrained, {}, rollout(pretrained, ref), {}};
  res.report.progress.push_back(res.rollout.progress);
  if (!res.rollout.success) {
    Controller work = pretrained;
    TrackingEnv env(work, {ref}, TrackMode::Adapt);
    auto opt = PpoOptimizer::create(work.ac, work.cfg.ppo);
    nn::Rng rng(work.cfg.ppo.seed + 0x51ed2701ULL);
    const std::size_t steps = static_cast<std::size_t>(work.cfg.adapt_steps_per_update);
    for (int u = 0; u < budget.max_steps; ++u) {
      // Practise up to where the best rollout so far broke down.
      const double reached = res.rollout.progress * static_cast<double>(ref.size() - 1);
      env.set_start_limit(static_cast<std::size_t>(reached));
      auto batch = collect(env, work.ac, steps, rng, false);
      compute_gae(batch, work.cfg.ppo.gamma, work.cfg.ppo.lambda);
      ppo_update(batch, work.ac, opt, work.cfg.ppo, rng);
      res.report.steps_used = u + 1;
      res.report.reward_trace.push_back(mean_of(batch.reward));
      auto r = rollout(work, ref);
      res.report.progress.push_back(r.progress);
      if (r.progress > res.rollout.progress || r.success) {
        res.rollout = std::move(r);
        res.controller = work;
      }
      if (res.rollout.success) break;
    }
  }
  res.report.success = res.rollout.success;
  res.report.cause = termination_name(res.rollout.cause);
  res.restored = res.rollout.motion;
  return res;
}

}  // namespace pmr::ptm
