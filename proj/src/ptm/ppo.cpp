#include "pmr/ptm/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "pmr/error.hpp"

namespace pmr::ptm {

void PpoConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1) || !(lambda >= 0 && lambda <= 1)) throw ValidationError("gamma/lambda out of range");
  if (!(clip > 0 && clip < 1)) throw ValidationError("clip ratio must lie in (0, 1)");
  if (epochs < 1 || minibatch < 1 || steps_per_update < 1) throw ValidationError("PPO sizes must be positive");
  if (!(policy_lr > 0) || !(value_lr > 0)) throw ValidationError("learning rates must be positive");
  if (!(entropy_coef >= 0) || !(value_coef >= 0) || !(max_grad_norm > 0) || !(target_kl > 0) || !(ratio_slack >= 0)) {
    throw ValidationError("PPO coefficients out of range");
  }
  if (policy_hidden.empty() || value_hidden.empty()) throw ValidationError("networks need hidden layers");
}

nlohmann::json PpoConfig::to_json() const {
  return {{"gamma", gamma},
          {"lambda", lambda},
          {"clip", clip},
          {"epochs", epochs},
          {"minibatch", minibatch},
          {"steps_per_update", steps_per_update},
          {"policy_lr", policy_lr},
          {"value_lr", value_lr},
          {"entropy_coef", entropy_coef},
          {"value_coef", value_coef},
          {"max_grad_norm", max_grad_norm},
          {"target_kl", target_kl},
          {"ratio_slack", ratio_slack},
          {"init_log_std", init_log_std},
          {"output_scale", output_scale},
          {"policy_hidden", policy_hidden},
          {"value_hidden", value_hidden},
          {"seed", seed}};
}

PpoConfig PpoConfig::from_json(const nlohmann::json& j) {
  PpoConfig c;
  try {
    c.gamma = j.value("gamma", c.gamma);
    c.lambda = j.value("lambda", c.lambda);
    c.clip = j.value("clip", c.clip);
    c.epochs = j.value("epochs", c.epochs);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.steps_per_update = j.value("steps_per_update", c.steps_per_update);
    c.policy_lr = j.value("policy_lr", c.policy_lr);
    c.value_lr = j.value("value_lr", c.value_lr);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.value_coef = j.value("value_coef", c.value_coef);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.target_kl = j.value("target_kl", c.target_kl);
    c.ratio_slack = j.value("ratio_slack", c.ratio_slack);
    c.init_log_std = j.value("init_log_std", c.init_log_std);
    c.output_scale = j.value("output_scale", c.output_scale);
    c.policy_hidden = j.value("policy_hidden", c.policy_hidden);
    c.value_hidden = j.value("value_hidden", c.value_hidden);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("ppo config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- normalization

void RunningNorm::update(std::span<const double> rows) {
  const std::size_t D = mean.size();
  if (D == 0 || rows.size() % D != 0) throw ShapeError("RunningNorm::update: size mismatch");
  const std::size_t n = rows.size() / D;
  if (n == 0) return;
  // Chan et al. parallel merge of (count, mean, M2).
  for (std::size_t d = 0; d < D; ++d) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += rows[i * D + d];
    m /= double(n);
    double m2 = 0;
    for (std::size_t i = 0; i < n; ++i) m2 += (rows[i * D + d] - m) * (rows[i * D + d] - m);
    const double total = count + double(n);
    const double delta = m - mean[d];
    const double M2 = var[d] * count + m2 + delta * delta * count * double(n) / total;
    mean[d] += delta * double(n) / total;
    var[d] = M2 / total;
  }
  count += double(n);
}

std::vector<double> RunningNorm::apply(std::span<const double> x) const {
  if (x.size() != mean.size()) throw ShapeError("RunningNorm::apply: size mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::clamp((x[i] - mean[i]) / std::sqrt(var[i] + 1e-8), -clip, clip);
  }
  return out;
}

// ---------------------------------------------------------------- actor-critic

ActorCritic ActorCritic::create(std::size_t obs_dim, std::size_t act_dim, const PpoConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  ActorCritic ac;
  std::vector<std::size_t> ps{obs_dim};
  ps.insert(ps.end(), cfg.policy_hidden.begin(), cfg.policy_hidden.end());
  ps.push_back(act_dim);
  ac.policy = nn::Network::mlp(ps, nn::Activation::Relu, nn::Activation::Identity, rng);
  ac.policy.scale_output_layer(cfg.output_scale);
  std::vector<std::size_t> vs{obs_dim};
  vs.insert(vs.end(), cfg.value_hidden.begin(), cfg.value_hidden.end());
  vs.push_back(1);
  ac.value = nn::Network::mlp(vs, nn::Activation::Relu, nn::Activation::Identity, rng);
  ac.log_std.assign(act_dim, cfg.init_log_std);
  ac.obs_norm = RunningNorm(obs_dim);
  return ac;
}

double gaussian_log_prob(std::span<const double> a, std::span<const double> mu, std::span<const double> log_std) {
  double lp = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double z = (a[i] - mu[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

std::vector<double> ActorCritic::act(std::span<const double> raw_obs, nn::Rng* rng, double* logp) const {
  const auto x = obs_norm.apply(raw_obs);
  auto mu = policy.forward(x);
  if (!rng) {
    if (logp) *logp = gaussian_log_prob(mu, mu, log_std);
    return mu;
  }
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(mu.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = mu[i] + std::exp(log_std[i]) * g(*rng);
  if (logp) *logp = gaussian_log_prob(a, mu, log_std);
  return a;
}

double ActorCritic::value_of(std::span<const double> normalized_obs) const { return value.forward(normalized_obs)[0]; }

// ---------------------------------------------------------------- rollouts

RolloutBatch collect(Environment& env, ActorCritic& ac, std::size_t steps, nn::Rng& rng, bool update_norm) {
  if (steps == 0) throw ValidationError("collect: zero steps");
  RolloutBatch b;
  b.obs_dim = env.observation_size();
  b.act_dim = env.action_size();
  if (b.obs_dim != ac.observation_size() || b.act_dim != ac.action_size()) {
    throw ShapeError("collect: environment and policy sizes differ");
  }
  std::vector<double> raw;
  raw.reserve(steps * b.obs_dim);
  auto obs = env.reset(rng);
  double ep_return = 0;
  int ep_len = 0;
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t t = 0; t < steps; ++t) {
    raw.insert(raw.end(), obs.begin(), obs.end());
    const auto x = ac.obs_norm.apply(obs);
    const auto mu = ac.policy.forward(x);
    std::vector<double> a(mu.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = mu[i] + std::exp(ac.log_std[i]) * g(rng);
    const double lp = gaussian_log_prob(a, mu, ac.log_std);
    const double v = ac.value_of(x);
    StepResult r = env.step(a);

    b.obs.insert(b.obs.end(), x.begin(), x.end());
    b.act.insert(b.act.end(), a.begin(), a.end());
    b.logp.push_back(lp);
    b.value.push_back(v);
    b.reward.push_back(r.reward);
    b.terminated.push_back(r.terminated);
    const bool last = t + 1 == steps;
    const bool cut = r.truncated || (last && !r.terminated);
    b.truncated.push_back(cut);
    b.next_value.push_back(cut ? ac.value_of(ac.obs_norm.apply(r.obs)) : 0.0);
    if (!r.style.empty()) b.style.push_back(std::move(r.style));

    ep_return += r.reward;
    ++ep_len;
    if (r.terminated || r.truncated) {
      b.episode_returns.push_back(ep_return);
      b.episode_lengths.push_back(ep_len);
      ep_return = 0;
      ep_len = 0;
      if (!last) obs = env.reset(rng);
    } else {
      obs = std::move(r.obs);
    }
  }
  if (update_norm) ac.obs_norm.update(raw);
  return b;
}

void compute_gae(RolloutBatch& b, double gamma, double lambda) {
  const std::size_t n = b.size();
  if (n == 0) throw ValidationError("compute_gae: empty batch");
  b.advantages.assign(n, 0.0);
  b.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const bool end = b.terminated[k] || b.truncated[k];
    // Within an episode the successor's value is the next entry's value.
    const double v_next = b.terminated[k] ? 0.0 : (b.truncated[k] ? b.next_value[k] : b.value[k + 1]);
    const double delta = b.reward[k] + gamma * v_next - b.value[k];
    next_adv = delta + (end ? 0.0 : gamma * lambda * next_adv);
    b.advantages[k] = next_adv;
    b.returns[k] = next_adv + b.value[k];
  }
}

PpoOptimizer PpoOptimizer::create(const ActorCritic& ac, const PpoConfig& cfg) {
  return {nn::Adam(ac.policy.parameter_count(), nn::AdamConfig{cfg.policy_lr}),
          nn::Adam(ac.log_std.size(), nn::AdamConfig{cfg.policy_lr}),
          nn::Adam(ac.value.parameter_count(), nn::AdamConfig{cfg.value_lr})};
}

namespace {

void clip_norm(std::span<double> a, std::span<double> b, double max_norm) {
  double s = 0;
  for (double v : a) s += v * v;
  for (double v : b) s += v * v;
  const double n = std::sqrt(s);
  if (n <= max_norm || n == 0.0) return;
  const double k = max_norm / n;
  for (double& v : a) v *= k;
  for (double& v : b) v *= k;
}

std::vector<double> batch_log_probs(const ActorCritic& ac, const RolloutBatch& b);

bool ratios_inside(const ActorCritic& ac, const RolloutBatch& b, double band) {
  const auto lp = batch_log_probs(ac, b);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double r = std::exp(lp[i] - b.logp[i]);
    if (r < 1 - band || r > 1 + band) return false;
  }
  return true;
}

std::vector<double> batch_log_probs(const ActorCritic& ac, const RolloutBatch& b) {
  nn::ForwardCache cache;
  ac.policy.forward(b.obs, b.size(), cache);
  const auto mu = cache.output();
  std::vector<double> lp(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    lp[i] = gaussian_log_prob({b.act.data() + i * b.act_dim, b.act_dim}, mu.subspan(i * b.act_dim, b.act_dim),
                              ac.log_std);
  }
  return lp;
}

}  // namespace

PpoStats ppo_update(const RolloutBatch& b, ActorCritic& ac, PpoOptimizer& opt, const PpoConfig& cfg, nn::Rng& rng) {
  const std::size_t n = b.size();
  if (n == 0) throw ValidationError("ppo_update: empty batch");
  if (b.advantages.size() != n || b.returns.size() != n) throw ValidationError("ppo_update: advantages not computed");
  const std::size_t A = b.act_dim, O = b.obs_dim;

  std::vector<double> adv = b.advantages;
  double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / double(n);
  double var = 0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / double(n));
  for (double& a : adv) a = sd > 1e-8 ? (a - mean) / sd : 0.0;

  PpoStats st;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t mb = std::min<std::size_t>(cfg.minibatch, n);
  std::vector<double> pgrad(ac.policy.parameter_count()), sgrad(A), vgrad(ac.value.parameter_count());
  nn::ForwardCache pc, vc;
  const double band = cfg.clip + cfg.ratio_slack;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Snapshot for backtracking when the epoch leaves the trust band.
    const ActorCritic saved_ac = ac;
    const PpoOptimizer saved_opt = opt;
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_kl = 0;
    std::size_t epoch_n = 0;
    for (std::size_t s0 = 0; s0 < n; s0 += mb) {
      const std::size_t m = std::min(mb, n - s0);
      std::vector<double> obs(m * O);
      for (std::size_t k = 0; k < m; ++k) std::copy_n(b.obs.begin() + idx[s0 + k] * O, O, obs.begin() + k * O);

      ac.policy.forward(obs, m, pc);
      const auto mu = pc.output();
      std::vector<double> gmu(m * A, 0.0);
      std::fill(sgrad.begin(), sgrad.end(), 0.0);
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = idx[s0 + k];
        const double* a = b.act.data() + i * A;
        const double lp = gaussian_log_prob({a, A}, mu.subspan(k * A, A), ac.log_std);
        const double ratio = std::exp(lp - b.logp[i]);
        const double surr = std::min(ratio * adv[i], std::clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv[i]);
        st.policy_loss += -surr;
        const bool clipped = (adv[i] > 0 && ratio > 1 + cfg.clip) || (adv[i] < 0 && ratio < 1 - cfg.clip);
        st.clip_fraction += clipped;
        epoch_kl += (ratio - 1) - (lp - b.logp[i]);
        ++epoch_n;
        if (clipped) continue;
        // d(-ratio * A)/d mu = -A ratio (a - mu) / sigma^2, same for log sigma
        for (std::size_t d = 0; d < A; ++d) {
          const double inv = std::exp(-2 * ac.log_std[d]);
          const double diff = a[d] - mu[k * A + d];
          gmu[k * A + d] = -adv[i] * ratio * diff * inv / double(m);
          sgrad[d] += -adv[i] * ratio * (diff * diff * inv - 1.0) / double(m);
        }
      }
      for (std::size_t d = 0; d < A; ++d) sgrad[d] -= cfg.entropy_coef;
      std::fill(pgrad.begin(), pgrad.end(), 0.0);
      ac.policy.backward(pc, gmu, pgrad);
      clip_norm(pgrad, sgrad, cfg.max_grad_norm);
      opt.policy.step(ac.policy.parameters(), pgrad);
      opt.log_std.step(ac.log_std, sgrad);

      ac.value.forward(obs, m, vc);
      const auto v = vc.output();
      std::vector<double> gv(m);
      for (std::size_t k = 0; k < m; ++k) {
        const double e = v[k] - b.returns[idx[s0 + k]];
        st.value_loss += 0.5 * e * e;
        gv[k] = cfg.value_coef * e / double(m);
      }
      std::fill(vgrad.begin(), vgrad.end(), 0.0);
      ac.value.backward(vc, gv, vgrad);
      std::span<double> none;
      clip_norm(vgrad, none, cfg.max_grad_norm);
      opt.value.step(ac.value.parameters(), vgrad);
    }
    if (!ratios_inside(ac, b, band)) {
      // Backtrack along the epoch's step until every ratio is back inside.
      const auto p_new = std::vector<double>(ac.policy.parameters().begin(), ac.policy.parameters().end());
      const auto s_new = ac.log_std;
      const auto p_old = saved_ac.policy.parameters();
      bool found = false;
      double alpha = 1.0;
      for (int k = 0; k < 10 && !found; ++k) {
        alpha *= 0.5;
        auto p = ac.policy.parameters();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = p_old[i] + alpha * (p_new[i] - p_old[i]);
        for (std::size_t d = 0; d < A; ++d) ac.log_std[d] = saved_ac.log_std[d] + alpha * (s_new[d] - saved_ac.log_std[d]);
        found = ratios_inside(ac, b, band);
      }
      if (!found) {
        ac.policy = saved_ac.policy;
        ac.log_std = saved_ac.log_std;
        opt.policy = saved_opt.policy;
        opt.log_std = saved_opt.log_std;
      }
      st.step_fraction = found ? alpha : 0.0;
      ++st.epochs_backtracked;
      st.approx_kl = epoch_kl / double(std::max<std::size_t>(1, epoch_n));
      ++st.epochs_run;
      break;
    }
    st.approx_kl = epoch_kl / double(std::max<std::size_t>(1, epoch_n));
    ++st.epochs_run;
    if (st.approx_kl > 1.5 * cfg.target_kl) break;
  }
  const double samples = double(std::max(1, st.epochs_run)) * double(n);
  st.policy_loss /= samples;
  st.value_loss /= samples;
  st.clip_fraction /= samples;
  for (double s : ac.log_std) st.entropy += s + 0.5 * std::log(2 * std::numbers::pi * std::numbers::e);

  const auto lp = batch_log_probs(ac, b);
  st.ratio_min = st.ratio_max = std::exp(lp[0] - b.logp[0]);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::exp(lp[i] - b.logp[i]);
    st.ratio_min = std::min(st.ratio_min, r);
    st.ratio_max = std::max(st.ratio_max, r);
  }
  return st;
}

// ---------------------------------------------------------------- 1-DoF task

std::vector<double> HoldTask::obs() const { return {theta_, target_, target_ - theta_}; }

std::vector<double> HoldTask::reset(nn::Rng& rng) {
  std::uniform_real_distribution<double> start(-1.0, 1.0), target(-0.5, 0.5);
  theta_ = start_ = start(rng);
  target_ = target(rng);
  t_ = 0;
  return obs();
}

StepResult HoldTask::step(std::span<const double> action) {
  if (action.size() != 1) throw ShapeError("HoldTask: one action expected");
  theta_ += kMaxStep * std::clamp(action[0], -1.0, 1.0);
  ++t_;
  const double e = (theta_ - target_) / 0.1;
  StepResult r;
  r.obs = obs();
  r.reward = std::exp(-e * e);
  r.truncated = t_ >= kHorizon;
  return r;
}

double HoldTask::analytic_max() const {
  double theta = start_, total = 0;
  for (int t = 0; t < kHorizon; ++t) {
    const double d = target_ - theta;
    theta += std::clamp(d, -kMaxStep, kMaxStep);
    const double e = (theta - target_) / 0.1;
    total += std::exp(-e * e);
  }
  return total;
}

double evaluate_hold(const ActorCritic& ac, int episodes, std::uint64_t seed) {
  nn::Rng rng(seed);
  double sum = 0;
  for (int e = 0; e < episodes; ++e) {
    HoldTask task;
    auto obs = task.reset(rng);
    double ret = 0;
    for (int t = 0; t < HoldTask::kHorizon; ++t) {
      const auto r = task.step(ac.act(obs, nullptr));
      ret += r.reward;
      obs = r.obs;
    }
    sum += ret / task.analytic_max();
  }
  return sum / episodes;
}

}  // namespace pmr::ptm
