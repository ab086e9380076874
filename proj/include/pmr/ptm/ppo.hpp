#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "pmr/nn/adam.hpp"
#include "pmr/nn/network.hpp"

namespace pmr::ptm {

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool terminated = false;  // failure: no bootstrap
  bool truncated = false;   // end of reference or segment: bootstrap from V(obs)
  std::vector<double> style;  // discriminator input of this transition; may be empty
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t observation_size() const = 0;
  virtual std::size_t action_size() const = 0;
  virtual std::vector<double> reset(nn::Rng& rng) = 0;
  virtual StepResult step(std::span<const double> action) = 0;
};

struct PpoConfig {
  double gamma = 0.99, lambda = 0.95, clip = 0.2;
  int epochs = 4;
  int minibatch = 256;
  int steps_per_update = 2048;
  double policy_lr = 3e-4, value_lr = 1e-3;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 1.0;
  double target_kl = 0.02;  // epochs stop once the batch KL passes 1.5x this
  // An epoch that moves any batch ratio outside 1 +- (clip + slack) is
  // shortened by step halving (or undone) and ends the update.
  double ratio_slack = 0.05;
  double init_log_std = -2.0;
  double output_scale = 0.01;  // initial scale of the policy's last layer
  std::vector<std::size_t> policy_hidden = {128, 128, 128, 128, 128, 128};
  std::vector<std::size_t> value_hidden = {128, 128, 128};
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static PpoConfig from_json(const nlohmann::json& j);
};

/// Running per-dimension mean and variance; normalized values are clipped
/// to +-clip.
struct RunningNorm {
  std::vector<double> mean, var;
  double count = 0.0;
  double clip = 5.0;

  explicit RunningNorm(std::size_t dim = 0) : mean(dim, 0.0), var(dim, 1.0) {}
  void update(std::span<const double> rows);  // rows of dim values
  std::vector<double> apply(std::span<const double> x) const;
};

/// Diagonal Gaussian policy with state-independent log standard deviation
/// plus a value network.
struct ActorCritic {
  nn::Network policy, value;
  std::vector<double> log_std;
  RunningNorm obs_norm;

  static ActorCritic create(std::size_t obs_dim, std::size_t act_dim, const PpoConfig& cfg, nn::Rng& rng);
  std::size_t observation_size() const { return policy.input_size(); }
  std::size_t action_size() const { return policy.output_size(); }

  /// Samples an action for a raw observation (mean action when rng is null).
  std::vector<double> act(std::span<const double> raw_obs, nn::Rng* rng, double* logp = nullptr) const;
  double value_of(std::span<const double> normalized_obs) const;
};

double gaussian_log_prob(std::span<const double> action, std::span<const double> mean,
                         std::span<const double> log_std);

struct RolloutBatch {
  std::size_t obs_dim = 0, act_dim = 0;
  std::vector<double> obs;  // normalized with the statistics used for acting
  std::vector<double> act, logp, value, reward, next_value;
  std::vector<std::uint8_t> terminated, truncated;
  std::vector<double> advantages, returns;
  std::vector<std::vector<double>> style;
  std::vector<double> episode_returns;  // completed episodes only
  std::vector<int> episode_lengths;

  std::size_t size() const { return reward.size(); }
};

/// Runs the stochastic policy for `steps` transitions. Observation statistics
/// are updated from the collected raw observations when `update_norm`.
RolloutBatch collect(Environment& env, ActorCritic& ac, std::size_t steps, nn::Rng& rng, bool update_norm);

/// Generalized advantage estimates and returns.
void compute_gae(RolloutBatch& batch, double gamma, double lambda);

struct PpoOptimizer {
  nn::Adam policy, log_std, value;
  static PpoOptimizer create(const ActorCritic& ac, const PpoConfig& cfg);
};

struct PpoStats {
  double policy_loss = 0, value_loss = 0, entropy = 0, approx_kl = 0, clip_fraction = 0;
  double ratio_min = 1, ratio_max = 1;  // over the whole batch after the update
  int epochs_run = 0;
  int epochs_backtracked = 0;
  double step_fraction = 1.0;  // fraction of the last epoch's step kept
};

/// Clipped-surrogate update from a batch with advantages (compute_gae).
/// Advantages are normalized per batch.
PpoStats ppo_update(const RolloutBatch& batch, ActorCritic& ac, PpoOptimizer& opt, const PpoConfig& cfg,
                    nn::Rng& rng);

// ---------------------------------------------------------------- 1-DoF task

/// Keep a joint angle at a target. theta += 0.1 clamp(a, -1, 1) per step;
/// reward exp(-((theta - target) / 0.1)^2) after the move.
class HoldTask : public Environment {
 public:
  static constexpr int kHorizon = 40;
  static constexpr double kMaxStep = 0.1;

  std::size_t observation_size() const override { return 3; }
  std::size_t action_size() const override { return 1; }
  std::vector<double> reset(nn::Rng& rng) override;
  StepResult step(std::span<const double> action) override;

  /// Return of the optimal policy from the current episode's start.
  double analytic_max() const;

 private:
  std::vector<double> obs() const;
  double theta_ = 0, target_ = 0, start_ = 0;
  int t_ = 0;
};

/// Mean over episodes of (deterministic return / analytic max).
double evaluate_hold(const ActorCritic& ac, int episodes, std::uint64_t seed);

}  // namespace pmr::ptm
