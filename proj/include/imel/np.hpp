#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "imel/context.hpp"
#include "imel/nn.hpp"
#include "imel/policy.hpp"
#include "imel/rng.hpp"

namespace imel::np {

struct NpConfig {
  int d_r = 16;
  int d_z = 8;
  std::vector<int> encoder_hidden{32, 32};
  std::vector<int> latent_hidden{};
  std::vector<int> decoder_hidden{32, 32};
  double sigma_floor = 1e-6;
};

// Neural Process: encoder h maps each (x, y) pair to a representation, the
// mean-aggregated representation feeds the latent head producing the Gaussian
// over z, and the decoder maps (z, x) to a predictive Gaussian over y.
struct NpModel {
  nn::Network encoder;      // (d_x + d_y) -> d_r
  nn::Network latent_head;  // d_r -> 2 d_z (mean, raw std)
  nn::Network decoder;      // (d_z + d_x) -> 2 d_y (mean, raw std)
  int d_x = 0, d_y = 0, d_r = 0, d_z = 0;
  double sigma_floor = 1e-6;

  std::size_t param_count() const;
  std::uint64_t params_hash() const;
};

NpModel make_np_model(int d_x, int d_y, const NpConfig& config,
                      std::uint64_t seed);

struct LatentPosterior {
  std::vector<double> mu;
  std::vector<double> sigma;
};

// Mean aggregation runs over a canonical ordering of the representations, so
// the posterior is bitwise invariant to context permutation and to uniform
// duplication of the context.
LatentPosterior encode(const NpModel& model, const ContextView& context);

policy::GaussianStats decode(const NpModel& model, std::span<const double> z,
                             std::span<const double> x);

struct ElboResult {
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  std::vector<double> encoder_grad;
  std::vector<double> latent_grad;
  std::vector<double> decoder_grad;
};

// One-sample reparameterized ELBO: z is drawn from the posterior over
// context + targets, the targets' negative log likelihood under the decoder
// is added to the closed-form Gaussian KL against the context-only posterior.
ElboResult elbo_loss(const NpModel& model, const ContextView& context,
                     const ContextView& targets, rng::Stream& z_stream);

// Same loss with the latent noise supplied explicitly (one entry per latent
// dimension); used by gradient checks.
ElboResult elbo_loss_with_noise(const NpModel& model,
                                const ContextView& context,
                                const ContextView& targets,
                                std::span<const double> xi);

enum class ZMode { mean, sample };

// Policy inference: condition on the context and decode at the query state.
// ZMode::mean uses z = mu_z (deterministic); ZMode::sample draws one z.
policy::GaussianStats np_predict(const NpModel& model,
                                 std::span<const double> state,
                                 const ContextView& context, ZMode z_mode,
                                 rng::Stream* z_stream = nullptr);

// Closed-form KL( N(mu_f, sigma_f) || N(mu_c, sigma_c) ) for diagonal
// Gaussians, summed over dimensions.
double gaussian_kl(const LatentPosterior& full, const LatentPosterior& ctx);

void save_np_model(const NpModel& model, std::ostream& os);
NpModel load_np_model(std::istream& is);

}  // namespace imel::np
