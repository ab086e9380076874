#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pmr::nn {

using Rng = std::mt19937_64;

enum class Activation : std::uint8_t { Identity = 0, Relu = 1 };

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::Identity;
};

/// Activations kept from a forward pass: acts[0] is the input batch,
/// acts[l + 1] the output of layer l.
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<std::vector<double>> acts;

  std::span<const double> output() const { return acts.back(); }
};

/// Feed-forward stack of affine layers. All parameters live in one flat
/// vector (per layer: W out x in row-major, then b) so gradients and optimizer
/// moments share its layout.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerShape> layers);

  /// Hidden layers use `hidden`, the last layer `output`. Weights are
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
  static Network mlp(const std::vector<std::size_t>& sizes, Activation hidden, Activation output, Rng& rng);

  std::size_t input_size() const { return layers_.front().in; }
  std::size_t output_size() const { return layers_.back().out; }
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<LayerShape>& layers() const { return layers_; }

  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;
  /// Offset of a layer's weights inside the flat parameter vector.
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  /// Scales the last layer's weights (small initial outputs).
  void scale_output_layer(double factor);

  /// Batched forward; `input` holds batch x input_size values.
  void forward(std::span<const double> input, std::size_t batch, ForwardCache& cache) const;
  std::vector<double> forward(std::span<const double> input) const;

  /// Accumulates parameter gradients of the loss whose output gradient is
  /// `output_grad` (batch x output_size) into `param_grad`. Writes the input
  /// gradient when `input_grad` is non-empty. The cache is read-only.
  void backward(const ForwardCache& cache, std::span<const double> output_grad, std::span<double> param_grad,
                std::span<double> input_grad = {}) const;

  /// Gradient of a scalar-output network with respect to one input.
  std::vector<double> input_gradient(std::span<const double> input) const;

  /// Accumulates scale * d/dtheta (1/2 |d out / d x|^2) for one input of a
  /// scalar-output network into `param_grad`, and returns 1/2 |d out/d x|^2.
  /// Exact for identity/rectifier layers (activation masks are locally constant).
  double input_gradient_penalty(std::span<const double> input, double scale, std::span<double> param_grad) const;

  bool all_finite() const;

 private:
  std::vector<LayerShape> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

}  // namespace pmr::nn
