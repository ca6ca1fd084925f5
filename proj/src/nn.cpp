#include "imel/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace imel::nn {

Activation activation_from_string(std::string_view s) {
  if (s == "linear") return Activation::linear;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  throw std::invalid_argument("nn: unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
  }
  throw std::logic_error("nn: bad activation enum");
}

double apply_activation(Activation a, double x) {
  switch (a) {
    case Activation::linear: return x;
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::softplus:
      return x > 30.0 ? x : std::log1p(std::exp(x));
  }
  throw std::logic_error("nn: bad activation enum");
}

double activation_derivative(Activation a, double pre) {
  switch (a) {
    case Activation::linear: return 1.0;
    case Activation::tanh: {
      double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::softplus:
      return 1.0 / (1.0 + std::exp(-pre));
  }
  throw std::logic_error("nn: bad activation enum");
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

std::vector<LayerSpec> mlp_shapes(int in_dim, const std::vector<int>& hidden,
                                  int out_dim, Activation hidden_act,
                                  Activation out_act) {
  if (in_dim < 1 || out_dim < 1)
    throw std::invalid_argument("nn: mlp dims must be positive");
  std::vector<LayerSpec> shapes;
  int prev = in_dim;
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("nn: hidden size must be positive");
    shapes.push_back({h, prev, true, hidden_act});
    prev = h;
  }
  shapes.push_back({out_dim, prev, true, out_act});
  return shapes;
}

Network init_params(std::vector<LayerSpec> shapes, std::uint64_t seed) {
  Network net;
  net.layers = std::move(shapes);
  net.values.resize(net.param_count());
  rng::Stream stream(seed, "nn.init");
  std::size_t off = 0;
  for (const auto& l : net.layers) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
    const std::size_t nw = static_cast<std::size_t>(l.out_dim) * l.in_dim;
    for (std::size_t i = 0; i < nw; ++i) net.values[off + i] = scale * stream.normal();
    off += nw;
    if (l.has_bias) {
      for (int i = 0; i < l.out_dim; ++i) net.values[off + i] = 0.0;
      off += l.out_dim;
    }
  }
  return net;
}

namespace {

void check_input(const Network& net, std::span<const double> input) {
  if (net.layers.empty()) throw std::invalid_argument("nn: empty network");
  if (static_cast<int>(input.size()) != net.input_dim())
    throw std::invalid_argument("nn: input length " +
                                std::to_string(input.size()) +
                                " does not match first layer in_dim " +
                                std::to_string(net.input_dim()));
  if (net.values.size() != net.param_count())
    throw std::invalid_argument("nn: parameter vector length mismatch");
}

}  // namespace

const std::vector<double>& forward(const Network& net,
                                   std::span<const double> input,
                                   ForwardTrace& trace) {
  check_input(net, input);
  const std::size_t L = net.layers.size();
  trace.pre.resize(L);
  trace.act.resize(L + 1);
  trace.act[0].assign(input.begin(), input.end());

  std::size_t off = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const LayerSpec& spec = net.layers[l];
    const double* W = net.values.data() + off;
    const std::size_t nw = static_cast<std::size_t>(spec.out_dim) * spec.in_dim;
    const double* b = spec.has_bias ? net.values.data() + off + nw : nullptr;
    off += spec.param_count();

    const std::vector<double>& a_in = trace.act[l];
    std::vector<double>& pre = trace.pre[l];
    std::vector<double>& a_out = trace.act[l + 1];
    pre.resize(spec.out_dim);
    a_out.resize(spec.out_dim);
    for (int i = 0; i < spec.out_dim; ++i) {
      const double* row = W + static_cast<std::size_t>(i) * spec.in_dim;
      double acc = b ? b[i] : 0.0;
      for (int j = 0; j < spec.in_dim; ++j) acc += row[j] * a_in[j];
      pre[i] = acc;
      a_out[i] = apply_activation(spec.act, acc);
    }
  }
  return trace.act.back();
}

std::vector<double> forward(const Network& net, std::span<const double> input) {
  ForwardTrace trace;
  return forward(net, input, trace);
}

void backward_accumulate(const Network& net, const ForwardTrace& trace,
                         std::span<const double> upstream,
                         std::span<double> param_grad,
                         std::span<double> input_grad) {
  const std::size_t L = net.layers.size();
  if (static_cast<int>(upstream.size()) != net.output_dim())
    throw std::invalid_argument("nn: upstream length does not match output dim");
  if (param_grad.size() != net.param_count())
    throw std::invalid_argument("nn: param_grad length mismatch");
  if (!input_grad.empty() &&
      static_cast<int>(input_grad.size()) != net.input_dim())
    throw std::invalid_argument("nn: input_grad length mismatch");

  // Offsets of each layer's parameter block.
  std::vector<std::size_t> offs(L);
  std::size_t off = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offs[l] = off;
    off += net.layers[l].param_count();
  }

  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> next;
  for (std::size_t li = L; li-- > 0;) {
    const LayerSpec& spec = net.layers[li];
    const std::vector<double>& pre = trace.pre[li];
    const std::vector<double>& a_in = trace.act[li];
    const double* W = net.values.data() + offs[li];
    double* gW = param_grad.data() + offs[li];
    const std::size_t nw = static_cast<std::size_t>(spec.out_dim) * spec.in_dim;
    double* gb = spec.has_bias ? gW + nw : nullptr;

    // delta through the activation.
    for (int i = 0; i < spec.out_dim; ++i)
      delta[i] *= activation_derivative(spec.act, pre[i]);

    const bool need_down = li > 0 || !input_grad.empty();
    if (need_down) next.assign(spec.in_dim, 0.0);
    for (int i = 0; i < spec.out_dim; ++i) {
      const double d = delta[i];
      const double* row = W + static_cast<std::size_t>(i) * spec.in_dim;
      double* grow = gW + static_cast<std::size_t>(i) * spec.in_dim;
      for (int j = 0; j < spec.in_dim; ++j) grow[j] += d * a_in[j];
      if (gb) gb[i] += d;
      if (need_down)
        for (int j = 0; j < spec.in_dim; ++j) next[j] += d * row[j];
    }
    if (li == 0) {
      if (!input_grad.empty())
        for (int j = 0; j < spec.in_dim; ++j) input_grad[j] += next[j];
    } else {
      delta = next;
    }
  }
}

Gradients backward(const Network& net, std::span<const double> input,
                   std::span<const double> upstream) {
  ForwardTrace trace;
  forward(net, input, trace);
  Gradients g;
  g.params.assign(net.param_count(), 0.0);
  g.input.assign(input.size(), 0.0);
  backward_accumulate(net, trace, upstream, g.params, g.input);
  return g;
}

OptimizerState make_optimizer(std::size_t n_params, OptimizerMode mode,
                              double learning_rate) {
  OptimizerState st;
  st.mode = mode;
  st.learning_rate = learning_rate;
  st.first_moment.assign(n_params, 0.0);
  st.second_moment.assign(n_params, 0.0);
  return st;
}

void optimizer_step(std::span<double> params, std::span<const double> grad,
                    OptimizerState& state) {
  if (params.size() != grad.size())
    throw std::invalid_argument("nn: param/gradient length mismatch");
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw std::invalid_argument("nn: optimizer state length mismatch");
  for (double g : grad)
    if (!std::isfinite(g))
      throw std::runtime_error("nn: non-finite gradient, training diverged");

  state.step_count += 1;
  const double a = state.learning_rate;
  if (state.mode == OptimizerMode::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= a * grad[i];
    return;
  }
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = b1 * m + (1.0 - b1) * grad[i];
    v = b2 * v + (1.0 - b2) * grad[i] * grad[i];
    const double mhat = m / c1;
    const double vhat = v / c2;
    params[i] -= a * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

void save_network(const Network& net, std::ostream& os) {
  os << "imel-net v1\n";
  os << "layers " << net.layers.size() << "\n";
  for (const auto& l : net.layers)
    os << "layer " << l.out_dim << " " << l.in_dim << " " << (l.has_bias ? 1 : 0)
       << " " << to_string(l.act) << "\n";
  os << "values " << net.values.size() << "\n";
  char buf[40];
  for (double v : net.values) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << "\n";
  }
}

Network load_network(std::istream& is) {
  std::string magic, version;
  is >> magic >> version;
  if (magic != "imel-net" || version != "v1")
    throw std::runtime_error("nn: bad network snapshot header");
  std::string tok;
  std::size_t n_layers = 0;
  is >> tok >> n_layers;
  if (tok != "layers") throw std::runtime_error("nn: bad snapshot layer count");
  Network net;
  net.layers.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    LayerSpec l;
    int bias = 0;
    std::string act;
    is >> tok >> l.out_dim >> l.in_dim >> bias >> act;
    if (tok != "layer" || !is)
      throw std::runtime_error("nn: bad snapshot layer line");
    l.has_bias = bias != 0;
    l.act = activation_from_string(act);
    net.layers.push_back(l);
  }
  std::size_t n_values = 0;
  is >> tok >> n_values;
  if (tok != "values") throw std::runtime_error("nn: bad snapshot value count");
  if (n_values != net.param_count())
    throw std::runtime_error("nn: snapshot value count does not match shapes");
  net.values.resize(n_values);
  for (auto& v : net.values) {
    if (!(is >> v)) throw std::runtime_error("nn: truncated snapshot values");
  }
  return net;
}

void save_network_file(const Network& net, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("nn: cannot open " + path + " for writing");
  save_network(net, os);
  if (!os) throw std::runtime_error("nn: write failed for " + path);
}

Network load_network_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("nn: cannot open " + path);
  return load_network(is);
}

std::uint64_t hash_doubles(std::span<const double> values, std::uint64_t h) {
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::uint64_t param_hash(const Network& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : net.layers) {
    h ^= static_cast<std::uint64_t>(l.out_dim) * 31 +
         static_cast<std::uint64_t>(l.in_dim) * 7 + (l.has_bias ? 3 : 0) +
         static_cast<std::uint64_t>(l.act);
    h *= 0x100000001b3ULL;
  }
  return hash_doubles(net.values, h);
}

}  // namespace imel::nn
