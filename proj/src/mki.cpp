#include "imel/mki.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "imel/rng.hpp"

namespace imel::mki {

namespace {

void check_context(const MkiModel& model, const ContextView& view,
                   const char* what) {
  if (view.empty())
    throw std::invalid_argument(std::string("mki: empty ") + what);
  for (const auto& p : view)
    if (static_cast<int>(p.x.size()) != model.d_x ||
        static_cast<int>(p.y.size()) != model.d_y)
      throw std::invalid_argument(std::string("mki: ") + what +
                                  " dimension mismatch");
}

// v = L^T d. L is d_z x d_z row-major.
void lt_times(std::span<const double> L, std::span<const double> d, int d_z,
              std::span<double> v) {
  for (int b = 0; b < d_z; ++b) {
    double acc = 0.0;
    for (int a = 0; a < d_z; ++a) acc += L[a * d_z + b] * d[a];
    v[b] = acc;
  }
}

// out = L v.
void l_times(std::span<const double> L, std::span<const double> v, int d_z,
             std::span<double> out) {
  for (int a = 0; a < d_z; ++a) {
    double acc = 0.0;
    for (int b = 0; b < d_z; ++b) acc += L[a * d_z + b] * v[b];
    out[a] = acc;
  }
}

struct KernelEval {
  double weight = 0.0;          // exp(-|v|^2)
  double sq_dist = 0.0;         // |v|^2, used for the nearest-point fallback
  std::vector<double> delta;    // z_n - z_i
  std::vector<double> v;        // L^T delta
};

KernelEval eval_kernel(const MkiModel& model, std::span<const double> z_n,
                       std::span<const double> z_i) {
  const int d_z = model.d_z;
  KernelEval k;
  k.delta.resize(d_z);
  k.v.resize(d_z);
  for (int a = 0; a < d_z; ++a) k.delta[a] = z_n[a] - z_i[a];
  lt_times(model.kernel_factor, k.delta, d_z, k.v);
  for (int b = 0; b < d_z; ++b) k.sq_dist += k.v[b] * k.v[b];
  k.weight = std::exp(-k.sq_dist);
  return k;
}

}  // namespace

int default_feature_dim(int d_x) {
  if (d_x <= 2) return d_x;
  return std::min(d_x - 1, 8);
}

std::size_t MkiModel::param_count() const {
  return feature_net.param_count() + kernel_factor.size();
}

std::uint64_t MkiModel::params_hash() const {
  return nn::hash_doubles(kernel_factor, nn::param_hash(feature_net));
}

MkiModel make_mki_model(int d_x, int d_y, const MkiConfig& config,
                        std::uint64_t seed) {
  if (d_x < 1 || d_y < 1)
    throw std::invalid_argument("mki: dims must be positive");
  MkiModel model;
  model.d_x = d_x;
  model.d_y = d_y;
  model.d_z = config.d_z > 0 ? config.d_z : default_feature_dim(d_x);
  if (d_x > 2 && model.d_z >= d_x)
    throw std::invalid_argument(
        "mki: feature dim must be below the input dim for d_x > 2");
  model.normalize = config.normalize;
  model.fallback_threshold = config.fallback_threshold;
  model.feature_net =
      nn::init_params(nn::mlp_shapes(d_x, config.feature_hidden, model.d_z),
                      rng::derive_seed(seed, "mki.features"));
  model.kernel_factor.assign(
      static_cast<std::size_t>(model.d_z) * model.d_z, 0.0);
  for (int a = 0; a < model.d_z; ++a)
    model.kernel_factor[a * model.d_z + a] = 1.0;
  return model;
}

std::vector<double> features(const MkiModel& model,
                             std::span<const double> x) {
  return nn::forward(model.feature_net, x);
}

double kernel_weight(const MkiModel& model, std::span<const double> z_n,
                     std::span<const double> z_i) {
  if (static_cast<int>(z_n.size()) != model.d_z ||
      static_cast<int>(z_i.size()) != model.d_z)
    throw std::invalid_argument("mki: kernel feature dimension mismatch");
  return eval_kernel(model, z_n, z_i).weight;
}

namespace {

// Core prediction over precomputed context features. Normalized mode divides
// the weights first so a single context point reproduces its output exactly.
std::vector<double> predict_impl(const MkiModel& model,
                                 std::span<const double> z_n,
                                 const std::vector<std::vector<double>>& z_ctx,
                                 const ContextView& context,
                                 PredictStats* stats) {
  const std::size_t m = context.size();
  std::vector<double> weights(m);
  double sum = 0.0;
  double best_dist = std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  for (std::size_t i = 0; i < m; ++i) {
    KernelEval k = eval_kernel(model, z_n, z_ctx[i]);
    weights[i] = k.weight;
    sum += k.weight;
    if (k.sq_dist < best_dist) {
      best_dist = k.sq_dist;
      best = i;
    }
  }

  std::vector<double> y(model.d_y, 0.0);
  if (model.normalize) {
    if (sum < model.fallback_threshold) {
      if (stats) stats->fallback_used = true;
      return {context[best].y.begin(), context[best].y.end()};
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double w = weights[i] / sum;
      for (int d = 0; d < model.d_y; ++d) y[d] += w * context[i].y[d];
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (int d = 0; d < model.d_y; ++d) y[d] += weights[i] * context[i].y[d];
  }
  return y;
}

}  // namespace

std::vector<double> mki_predict(const MkiModel& model,
                                std::span<const double> x_n,
                                const ContextView& context,
                                PredictStats* stats) {
  check_context(model, context, "context");
  if (static_cast<int>(x_n.size()) != model.d_x)
    throw std::invalid_argument("mki: query dimension mismatch");
  std::vector<std::vector<double>> z_ctx(context.size());
  for (std::size_t i = 0; i < context.size(); ++i)
    z_ctx[i] = features(model, context[i].x);
  return predict_impl(model, features(model, x_n), z_ctx, context, stats);
}

MkiLossResult mki_loss(const MkiModel& model, const ContextView& context,
                       const ContextView& targets) {
  check_context(model, context, "context");
  check_context(model, targets, "target set");
  const std::size_t m = context.size();
  const std::size_t nt = targets.size();
  const int d_z = model.d_z, d_y = model.d_y;

  // Context features once, traces kept for the reverse pass.
  std::vector<nn::ForwardTrace> ctx_trace(m);
  std::vector<std::vector<double>> z_ctx(m);
  for (std::size_t i = 0; i < m; ++i)
    z_ctx[i] = nn::forward(model.feature_net, context[i].x, ctx_trace[i]);

  MkiLossResult result;
  result.feature_grad.assign(model.feature_net.param_count(), 0.0);
  result.kernel_factor_grad.assign(model.kernel_factor.size(), 0.0);

  std::vector<std::vector<double>> dz_ctx(m, std::vector<double>(d_z, 0.0));
  const double scale = 1.0 / (static_cast<double>(nt) * d_y);

  nn::ForwardTrace tgt_trace;
  std::vector<double> dz_n(d_z);
  std::vector<double> lv(d_z);
  std::vector<KernelEval> kernels(m);
  for (std::size_t j = 0; j < nt; ++j) {
    const std::vector<double>& z_n =
        nn::forward(model.feature_net, targets[j].x, tgt_trace);

    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      kernels[i] = eval_kernel(model, z_n, z_ctx[i]);
      sum += kernels[i].weight;
    }

    std::vector<double> pred(d_y, 0.0);
    const bool degenerate =
        model.normalize && sum < model.fallback_threshold;
    if (model.normalize && !degenerate) {
      for (std::size_t i = 0; i < m; ++i) {
        const double w = kernels[i].weight / sum;
        for (int d = 0; d < d_y; ++d) pred[d] += w * context[i].y[d];
      }
    } else if (!model.normalize) {
      for (std::size_t i = 0; i < m; ++i)
        for (int d = 0; d < d_y; ++d)
          pred[d] += kernels[i].weight * context[i].y[d];
    } else {
      std::size_t best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i)
        if (kernels[i].sq_dist < best_dist) {
          best_dist = kernels[i].sq_dist;
          best = i;
        }
      for (int d = 0; d < d_y; ++d) pred[d] = context[best].y[d];
    }

    std::vector<double> dpred(d_y);
    for (int d = 0; d < d_y; ++d) {
      const double err = pred[d] - targets[j].y[d];
      result.loss += scale * err * err;
      dpred[d] = 2.0 * scale * err;
    }
    if (degenerate) continue;  // all weights underflowed; gradient is flat

    std::fill(dz_n.begin(), dz_n.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const KernelEval& k = kernels[i];
      double dk = 0.0;
      if (model.normalize) {
        for (int d = 0; d < d_y; ++d)
          dk += dpred[d] * (context[i].y[d] - pred[d]) / sum;
      } else {
        for (int d = 0; d < d_y; ++d) dk += dpred[d] * context[i].y[d];
      }
      if (dk == 0.0) continue;
      const double c = -2.0 * dk * k.weight;
      // d(loss)/d(delta) = c * L v; accumulate into both feature gradients.
      l_times(model.kernel_factor, k.v, d_z, lv);
      for (int a = 0; a < d_z; ++a) {
        const double g = c * lv[a];
        dz_n[a] += g;
        dz_ctx[i][a] -= g;
        // d(loss)/dL = c * delta v^T.
        for (int b = 0; b < d_z; ++b)
          result.kernel_factor_grad[a * d_z + b] += c * k.delta[a] * k.v[b];
      }
    }
    nn::backward_accumulate(model.feature_net, tgt_trace, dz_n,
                            result.feature_grad, {});
  }

  for (std::size_t i = 0; i < m; ++i)
    nn::backward_accumulate(model.feature_net, ctx_trace[i], dz_ctx[i],
                            result.feature_grad, {});
  return result;
}

void save_mki_model(const MkiModel& model, std::ostream& os) {
  os << "imel-mki v1 " << model.d_x << " " << model.d_y << " " << model.d_z
     << " " << (model.normalize ? 1 : 0) << "\n";
  os << "feature_net\n";
  nn::save_network(model.feature_net, os);
  os << "kernel_factor " << model.kernel_factor.size() << "\n";
  char buf[40];
  for (double v : model.kernel_factor) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << "\n";
  }
}

MkiModel load_mki_model(std::istream& is) {
  std::string magic, version;
  MkiModel model;
  int normalize = 1;
  is >> magic >> version >> model.d_x >> model.d_y >> model.d_z >> normalize;
  if (magic != "imel-mki" || version != "v1" || !is)
    throw std::runtime_error("mki: bad model snapshot header");
  model.normalize = normalize != 0;
  std::string section;
  is >> section;
  if (section != "feature_net")
    throw std::runtime_error("mki: bad snapshot layout");
  model.feature_net = nn::load_network(is);
  std::size_t n = 0;
  is >> section >> n;
  if (section != "kernel_factor" ||
      n != static_cast<std::size_t>(model.d_z) * model.d_z)
    throw std::runtime_error("mki: bad kernel factor block");
  model.kernel_factor.resize(n);
  for (auto& v : model.kernel_factor)
    if (!(is >> v)) throw std::runtime_error("mki: truncated kernel factor");
  return model;
}

}  // namespace imel::mki
