#include "pmr/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pmr/error.hpp"
#include "pmr/nn/kernels.hpp"

namespace pmr::nn {

namespace {

void apply_activation(Activation act, std::span<double> v) {
  if (act == Activation::Relu) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
  }
}

// Zeroes gradient entries where the rectifier was inactive.
void mask_gradient(Activation act, std::span<const double> post, std::span<double> grad) {
  if (act != Activation::Relu) return;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(post[i] > 0.0)) grad[i] = 0.0;
  }
}

}  // namespace

Network::Network(std::vector<LayerShape> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("network needs at least one layer");
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].in == 0 || layers_[l].out == 0) throw ShapeError("layer sizes must be positive");
    if (l > 0 && layers_[l].in != layers_[l - 1].out) {
      throw ShapeError("layer " + std::to_string(l) + " input does not match previous output");
    }
    offsets_.push_back(total);
    total += layers_[l].in * layers_[l].out + layers_[l].out;
  }
  params_.assign(total, 0.0);
}

Network Network::mlp(const std::vector<std::size_t>& sizes, Activation hidden, Activation output, Rng& rng) {
  if (sizes.size() < 2) throw ShapeError("mlp needs at least input and output sizes");
  std::vector<LayerShape> shapes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    shapes.push_back({sizes[l], sizes[l + 1], l + 2 == sizes.size() ? output : hidden});
  }
  Network net(std::move(shapes));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(net.layers_[l].in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : net.weights(l)) w = dist(rng);
  }
  return net;
}

std::span<double> Network::weights(std::size_t l) {
  return {params_.data() + offsets_[l], layers_[l].in * layers_[l].out};
}
std::span<const double> Network::weights(std::size_t l) const {
  return {params_.data() + offsets_[l], layers_[l].in * layers_[l].out};
}
std::span<double> Network::bias(std::size_t l) {
  return {params_.data() + offsets_[l] + layers_[l].in * layers_[l].out, layers_[l].out};
}
std::span<const double> Network::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + layers_[l].in * layers_[l].out, layers_[l].out};
}

void Network::scale_output_layer(double factor) {
  for (double& w : weights(layers_.size() - 1)) w *= factor;
}

void Network::forward(std::span<const double> input, std::size_t batch, ForwardCache& cache) const {
  if (input.size() != batch * input_size()) {
    throw ShapeError("forward: expected " + std::to_string(batch * input_size()) + " inputs, got " +
                     std::to_string(input.size()));
  }
  for (double x : input) {
    if (!std::isfinite(x)) throw ValidationError("forward: non-finite input");
  }
  const auto& k = kernels::active();
  cache.batch = batch;
  cache.acts.resize(layers_.size() + 1);
  cache.acts[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    auto& out = cache.acts[l + 1];
    out.resize(batch * L.out);
    k.affine(weights(l).data(), bias(l).data(), cache.acts[l].data(), out.data(), batch, L.in, L.out);
    apply_activation(L.act, out);
  }
}

std::vector<double> Network::forward(std::span<const double> input) const {
  ForwardCache cache;
  forward(input, 1, cache);
  return std::move(cache.acts.back());
}

void Network::backward(const ForwardCache& cache, std::span<const double> output_grad,
                       std::span<double> param_grad, std::span<double> input_grad) const {
  const std::size_t B = cache.batch;
  if (cache.acts.size() != layers_.size() + 1 || cache.acts[0].size() != B * input_size() ||
      cache.acts.back().size() != B * output_size()) {
    throw ShapeError("backward: cache does not match this network");
  }
  if (output_grad.size() != B * output_size()) throw ShapeError("backward: output gradient size mismatch");
  if (param_grad.size() != params_.size()) throw ShapeError("backward: parameter gradient size mismatch");
  if (!input_grad.empty() && input_grad.size() != B * input_size()) {
    throw ShapeError("backward: input gradient size mismatch");
  }
  const auto& k = kernels::active();
  std::vector<double> grad(output_grad.begin(), output_grad.end());
  std::vector<double> next;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    mask_gradient(L.act, cache.acts[l + 1], grad);
    double* dW = param_grad.data() + offsets_[l];
    double* db = dW + L.in * L.out;
    k.affine_backward_params(cache.acts[l].data(), grad.data(), dW, db, B, L.in, L.out);
    if (l > 0 || !input_grad.empty()) {
      next.resize(B * L.in);
      k.affine_backward_input(weights(l).data(), grad.data(), next.data(), B, L.in, L.out);
      grad.swap(next);
    }
  }
  if (!input_grad.empty()) std::copy(grad.begin(), grad.end(), input_grad.begin());
}

std::vector<double> Network::input_gradient(std::span<const double> input) const {
  if (output_size() != 1) throw ShapeError("input_gradient needs a scalar-output network");
  ForwardCache cache;
  forward(input, 1, cache);
  std::vector<double> scratch(params_.size(), 0.0);
  std::vector<double> gx(input_size());
  const double one = 1.0;
  backward(cache, std::span<const double>(&one, 1), scratch, gx);
  return gx;
}

double Network::input_gradient_penalty(std::span<const double> input, double scale,
                                       std::span<double> param_grad) const {
  if (output_size() != 1) throw ShapeError("input_gradient_penalty needs a scalar-output network");
  if (param_grad.size() != params_.size()) throw ShapeError("penalty: parameter gradient size mismatch");
  ForwardCache cache;
  forward(input, 1, cache);
  const std::size_t L = layers_.size();
  const auto& k = kernels::active();

  // Input-gradient chain a_{l-1} = W_l^T c_l with c_l = mask_l * a_l, a_L = 1.
  std::vector<std::vector<double>> c(L);
  std::vector<double> a(1, 1.0);
  for (std::size_t l = L; l-- > 0;) {
    c[l] = a;
    mask_gradient(layers_[l].act, cache.acts[l + 1], c[l]);
    a.assign(layers_[l].in, 0.0);
    k.affine_backward_input(weights(l).data(), c[l].data(), a.data(), 1, layers_[l].in, layers_[l].out);
  }
  const std::vector<double>& gx = a;
  const double penalty = 0.5 * k.dot(gx.data(), gx.data(), gx.size());

  // Reverse through the chain: dP/dW_l = c_l abar_{l-1}^T, abar_l = mask_l * (W_l abar_{l-1}).
  std::vector<double> abar = gx;
  std::vector<double> zero_bias;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& S = layers_[l];
    double* dW = param_grad.data() + offsets_[l];
    for (std::size_t o = 0; o < S.out; ++o) {
      const double co = scale * c[l][o];
      if (co != 0.0) k.axpy(co, abar.data(), dW + o * S.in, S.in);
    }
    if (l + 1 == L) break;
    std::vector<double> next(S.out);
    zero_bias.assign(S.out, 0.0);
    k.affine(weights(l).data(), zero_bias.data(), abar.data(), next.data(), 1, S.in, S.out);
    mask_gradient(S.act, cache.acts[l + 1], next);
    abar.swap(next);
  }
  return penalty;
}

bool Network::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace pmr::nn
