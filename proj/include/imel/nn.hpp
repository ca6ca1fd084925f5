#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imel/rng.hpp"

namespace imel::nn {

enum class Activation { linear, tanh, relu, softplus };

Activation activation_from_string(std::string_view s);
std::string_view to_string(Activation a);

double apply_activation(Activation a, double x);
double activation_derivative(Activation a, double pre);

// One fully connected layer: y = act(W x + b). W is out_dim x in_dim,
// stored row-major in the flat parameter vector, followed by the bias.
struct LayerSpec {
  int out_dim = 0;
  int in_dim = 0;
  bool has_bias = true;
  Activation act = Activation::linear;

  std::size_t param_count() const {
    return static_cast<std::size_t>(out_dim) * in_dim +
           (has_bias ? static_cast<std::size_t>(out_dim) : 0);
  }
  bool operator==(const LayerSpec&) const = default;
};

// A fully connected network as a flat parameter vector plus layer shapes.
struct Network {
  std::vector<LayerSpec> layers;
  std::vector<double> values;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
  std::size_t param_count() const;
};

std::vector<LayerSpec> mlp_shapes(int in_dim, const std::vector<int>& hidden,
                                  int out_dim,
                                  Activation hidden_act = Activation::tanh,
                                  Activation out_act = Activation::linear);

// Fan-in scaled normal weights (std = 1/sqrt(in_dim)), zero biases.
Network init_params(std::vector<LayerSpec> shapes, std::uint64_t seed);

// Per-layer intermediate values kept for the reverse pass.
// act[0] is the input, act[l+1] the output of layer l.
struct ForwardTrace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> act;
};

std::vector<double> forward(const Network& net, std::span<const double> input);
const std::vector<double>& forward(const Network& net,
                                   std::span<const double> input,
                                   ForwardTrace& trace);

struct Gradients {
  std::vector<double> params;
  std::vector<double> input;
};

// Reverse-mode pass: given dL/dy, returns dL/dparams and dL/dx.
Gradients backward(const Network& net, std::span<const double> input,
                   std::span<const double> upstream);

// Accumulating variant over a precomputed trace. param_grad must have
// net.param_count() entries; input_grad may be empty to skip it.
void backward_accumulate(const Network& net, const ForwardTrace& trace,
                         std::span<const double> upstream,
                         std::span<double> param_grad,
                         std::span<double> input_grad);

enum class OptimizerMode { sgd, adam };

// Adaptive-moment state; in sgd mode the moment vectors stay unused.
struct OptimizerState {
  OptimizerMode mode = OptimizerMode::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

OptimizerState make_optimizer(std::size_t n_params, OptimizerMode mode,
                              double learning_rate);

// In-place update of params from a gradient. Throws on non-finite gradients.
void optimizer_step(std::span<double> params, std::span<const double> grad,
                    OptimizerState& state);

// Text snapshot format, see docs/file_formats.md. Round-trips doubles exactly.
void save_network(const Network& net, std::ostream& os);
Network load_network(std::istream& is);
void save_network_file(const Network& net, const std::string& path);
Network load_network_file(const std::string& path);

// FNV-1a over the parameter bytes; used to audit which model produced a rollout.
std::uint64_t param_hash(const Network& net);
std::uint64_t hash_doubles(std::span<const double> values,
                           std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace imel::nn
