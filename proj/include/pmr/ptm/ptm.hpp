#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmr/motion/motion.hpp"
#include "pmr/nn/adam.hpp"
#include "pmr/nn/network.hpp"
#include "pmr/ptm/ppo.hpp"
#include "pmr/ptm/reward.hpp"
#include "pmr/sim/sim.hpp"

namespace pmr::ptm {

// The controller is a residual policy over a fixed tracking prior: joint
// targets are the next reference frame, and a capped root-orientation servo
// supplies the residual torque. The policy adds joint-target offsets and a
// residual wrench on top.

struct ControllerConfig {
  sim::SimConfig sim;
  RewardWeights reward;
  TerminationConfig termination;  // adaptation
  double pretrain_distance = 0.3;  // stricter d_term while pretraining
  PpoConfig ppo;

  double joint_action_scale = 0.2;     // rad per unit action
  double force_action_scale = 100.0;   // N
  double torque_action_scale = 30.0;   // N m
  double root_kp = 1000.0;             // N m / rad, prior orientation servo
  double root_kd = 200.0;              // N m s / rad

  std::vector<std::size_t> disc_hidden = {128, 128};
  double disc_lr = 1e-4;
  double disc_gradient_penalty = 5.0;
  int disc_batch = 256;
  int disc_steps = 4;  // discriminator minibatches per PPO update

  int segment_frames = 60;     // pretraining episode length
  int pretrain_updates = 60;
  int pretrain_steps_per_update = 2048;
  int adapt_steps_per_update = 512;

  void validate() const;
  nlohmann::json to_json() const;
  static ControllerConfig from_json(const nlohmann::json& j);
  /// Digest of the reward and termination settings.
  std::string reward_hash() const;
};

/// Least-squares discriminator over consecutive-frame style features.
struct Discriminator {
  nn::Network net;
  std::vector<double> mean, scale;  // input standardization from the demonstrations

  double score(std::span<const double> pair) const;
};

struct Controller {
  ControllerConfig cfg;
  ActorCritic ac;
  Discriminator disc;

  std::size_t action_size() const { return ac.action_size(); }
  void save(const std::filesystem::path& path) const;
  static Controller load(const std::filesystem::path& path);
};

/// Fresh controller for a skeleton (random networks, untrained).
Controller make_controller(const motion::Skeleton& skel, const ControllerConfig& cfg,
                           const std::vector<motion::MotionSequence>& demos);

enum class TrackMode { Pretrain, Adapt };

struct StepRecord {
  RewardParts parts;
  double reward = 0.0;
  Termination cause = Termination::None;
  sim::ResidualForce residual;
};

/// Tracking task over one or more references.
class TrackingEnv : public Environment {
 public:
  TrackingEnv(const Controller& ctrl, std::vector<motion::MotionSequence> refs, TrackMode mode);

  std::size_t observation_size() const override;
  std::size_t action_size() const override;
  std::vector<double> reset(nn::Rng& rng) override;
  StepResult step(std::span<const double> action) override;

  /// Episode starting at `frame` of reference `clip`, running to its end.
  std::vector<double> reset_at(std::size_t clip, std::size_t frame, std::size_t max_frames);

  /// Adaptation episodes start uniformly in [0, start_limit].
  void set_start_limit(std::size_t frames) { start_limit_ = frames; }

  const sim::Simulator& simulator() const { return sim_; }
  const sim::SimState& state() const { return state_; }
  std::size_t frame() const { return t_; }
  const std::vector<StepRecord>& records() const { return records_; }
  const std::vector<BodyState>& reference_states(std::size_t clip) const { return ref_states_[clip]; }
  /// Mean reward components since the last call.
  RewardParts take_mean_parts();

 private:
  sim::ResidualForce residual_for(std::span<const double> action) const;

  const Controller* ctrl_;
  std::vector<motion::MotionSequence> refs_;
  std::vector<std::vector<BodyState>> ref_states_;
  TrackMode mode_;
  sim::Simulator sim_;
  TerminationConfig term_;
  sim::SimState state_;
  BodyState body_;
  std::size_t clip_ = 0, t_ = 0, end_ = 0, start_limit_ = 0;
  std::vector<StepRecord> records_;
  RewardParts parts_sum_;
  std::size_t parts_count_ = 0;
};

struct RolloutResult {
  motion::MotionSequence motion;  // simulated frames from the start frame
  std::vector<sim::TrajectoryFrame> trajectory;
  std::vector<StepRecord> steps;
  double progress = 0.0;  // fraction of reference transitions completed
  bool success = false;
  Termination cause = Termination::None;
  double total_reward = 0.0;
};

/// Deterministic rollout (mean actions) over the whole reference unless an
/// rng is given.
RolloutResult rollout(const Controller& ctrl, const motion::MotionSequence& ref, TrackMode mode = TrackMode::Adapt,
                      nn::Rng* rng = nullptr);

struct PretrainReport {
  std::vector<double> mean_reward;  // per update, mean per-step reward
  std::vector<double> mean_episode_length;
  std::vector<RewardParts> mean_parts;
  std::vector<PpoStats> stats;
};

Controller pretrain(const std::vector<motion::MotionSequence>& corpus, const ControllerConfig& cfg,
                    PretrainReport* report = nullptr);

struct AdaptationBudget {
  int max_steps = 4000;  // PPO updates on the instance

  void validate() const;
};

struct AdaptReport {
  int steps_used = 0;
  bool success = false;
  std::vector<double> progress;      // per evaluation rollout, first entry before any update
  std::vector<double> reward_trace;  // mean per-step reward of each update's batch
  std::string cause;                 // termination cause of the returned rollout

  nlohmann::json to_json() const;
};

struct AdaptResult {
  Controller controller;
  motion::MotionSequence restored;
  RolloutResult rollout;
  AdaptReport report;
};

/// Per-instance adaptation on a copy of `pretrained`. Stops at the first
/// full-length deterministic rollout or when the budget runs out; on failure
/// the best-progress rollout and its parameters are returned.
AdaptResult tta_adapt(const Controller& pretrained, const motion::MotionSequence& ref,
                      const AdaptationBudget& budget);

}  // namespace pmr::ptm
