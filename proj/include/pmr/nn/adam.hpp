#pragma once

#include <span>
#include <vector>

namespace pmr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer state for one flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  /// Throws ValidationError on a non-finite gradient; parameters and moments
  /// are left untouched in that case.
  void step(std::span<double> params, std::span<const double> grads);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

  // Restores a saved state.
  void restore(std::size_t steps, std::vector<double> m, std::vector<double> v);

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace pmr::nn
