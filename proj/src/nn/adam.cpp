#include "pmr/nn/adam.hpp"

#include <cmath>

#include "pmr/error.hpp"
#include "pmr/nn/kernels.hpp"

namespace pmr::nn {

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("Adam::step: parameter and gradient sizes must match the optimizer state");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw ValidationError("Adam::step: non-finite gradient");
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  kernels::active().adam(params.data(), grads.data(), m_.data(), v_.data(), m_.size(), cfg_.lr, cfg_.beta1,
                         cfg_.beta2, cfg_.eps, bc1, bc2);
}

void Adam::restore(std::size_t steps, std::vector<double> m, std::vector<double> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("Adam::restore: size mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace pmr::nn
