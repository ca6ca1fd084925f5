#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "imel/context.hpp"
#include "imel/nn.hpp"

namespace imel::mki {

struct MkiConfig {
  int d_z = 0;  // 0 picks the default: d_x for d_x <= 2, else min(d_x - 1, 8)
  std::vector<int> feature_hidden{32, 32};
  bool normalize = true;
  double fallback_threshold = 1e-300;
};

int default_feature_dim(int d_x);

// Mean Kernel Interpolation: a feature net z = f(x) and an exponential kernel
// exp(dz^T W dz) with W = -L L^T, so weights lie in (0, 1] and decay with
// feature distance. Prediction interpolates the context outputs; the
// normalized mode is a Nadaraya-Watson convex combination, the unnormalized
// mode is the plain weighted sum.
struct MkiModel {
  nn::Network feature_net;            // d_x -> d_z
  std::vector<double> kernel_factor;  // L, d_z x d_z row-major
  int d_x = 0, d_y = 0, d_z = 0;
  bool normalize = true;
  double fallback_threshold = 1e-300;

  std::size_t param_count() const;
  std::uint64_t params_hash() const;
};

MkiModel make_mki_model(int d_x, int d_y, const MkiConfig& config,
                        std::uint64_t seed);

std::vector<double> features(const MkiModel& model, std::span<const double> x);

// exp((z_n - z_i)^T W (z_n - z_i)) with W = -L L^T; always in (0, 1].
double kernel_weight(const MkiModel& model, std::span<const double> z_n,
                     std::span<const double> z_i);

struct PredictStats {
  bool fallback_used = false;  // normalized weights underflowed; nearest
                               // context point's output was returned
};

std::vector<double> mki_predict(const MkiModel& model,
                                std::span<const double> x_n,
                                const ContextView& context,
                                PredictStats* stats = nullptr);

struct MkiLossResult {
  double loss = 0.0;
  std::vector<double> feature_grad;
  std::vector<double> kernel_factor_grad;
};

// Mean squared error between predictions at the target inputs and the target
// outputs, with gradients for the feature net and L.
MkiLossResult mki_loss(const MkiModel& model, const ContextView& context,
                       const ContextView& targets);

void save_mki_model(const MkiModel& model, std::ostream& os);
MkiModel load_mki_model(std::istream& is);

}  // namespace imel::mki
