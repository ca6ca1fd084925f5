#include "imel/np.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace imel::np {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Mean of a set of vectors, invariant (bitwise) to input order and to
// duplicating every vector the same number of times: sort lexicographically,
// then sum adjacent pairs bottom-up so duplicate pairs combine exactly.
std::vector<double> canonical_mean(std::vector<std::vector<double>> rs) {
  const std::size_t n = rs.size();
  if (n == 0) throw std::invalid_argument("np: mean of empty set");
  std::sort(rs.begin(), rs.end());
  const std::size_t dim = rs.front().size();
  while (rs.size() > 1) {
    std::vector<std::vector<double>> next;
    next.reserve((rs.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < rs.size(); i += 2) {
      std::vector<double> s(dim);
      for (std::size_t d = 0; d < dim; ++d) s[d] = rs[i][d] + rs[i + 1][d];
      next.push_back(std::move(s));
    }
    if (rs.size() % 2 == 1) next.push_back(std::move(rs.back()));
    rs = std::move(next);
  }
  std::vector<double>& sum = rs.front();
  for (double& v : sum) v /= static_cast<double>(n);
  return sum;
}

std::vector<double> concat(std::span<const double> a,
                           std::span<const double> b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void check_context(const NpModel& model, const ContextView& context,
                   const char* what) {
  if (context.empty())
    throw std::invalid_argument(std::string("np: empty ") + what);
  for (const auto& p : context)
    if (static_cast<int>(p.x.size()) != model.d_x ||
        static_cast<int>(p.y.size()) != model.d_y)
      throw std::invalid_argument(std::string("np: ") + what +
                                  " dimension mismatch");
}

// Splits a raw head output into (mean, softplus std + floor).
LatentPosterior split_gaussian_head(std::span<const double> raw,
                                    double sigma_floor) {
  const std::size_t d = raw.size() / 2;
  LatentPosterior out;
  out.mu.assign(raw.begin(), raw.begin() + d);
  out.sigma.resize(d);
  for (std::size_t i = 0; i < d; ++i)
    out.sigma[i] = softplus(raw[d + i]) + sigma_floor;
  return out;
}

}  // namespace

std::size_t NpModel::param_count() const {
  return encoder.param_count() + latent_head.param_count() +
         decoder.param_count();
}

std::uint64_t NpModel::params_hash() const {
  std::uint64_t h = nn::param_hash(encoder);
  h = nn::hash_doubles(latent_head.values, h);
  h = nn::hash_doubles(decoder.values, h);
  return h;
}

NpModel make_np_model(int d_x, int d_y, const NpConfig& config,
                      std::uint64_t seed) {
  if (d_x < 1 || d_y < 1)
    throw std::invalid_argument("np: dims must be positive");
  if (config.d_r < 1 || config.d_z < 1)
    throw std::invalid_argument("np: d_r and d_z must be positive");
  NpModel model;
  model.d_x = d_x;
  model.d_y = d_y;
  model.d_r = config.d_r;
  model.d_z = config.d_z;
  model.sigma_floor = config.sigma_floor;
  model.encoder = nn::init_params(
      nn::mlp_shapes(d_x + d_y, config.encoder_hidden, config.d_r),
      rng::derive_seed(seed, "np.encoder"));
  model.latent_head = nn::init_params(
      nn::mlp_shapes(config.d_r, config.latent_hidden, 2 * config.d_z),
      rng::derive_seed(seed, "np.latent"));
  model.decoder = nn::init_params(
      nn::mlp_shapes(config.d_z + d_x, config.decoder_hidden, 2 * d_y),
      rng::derive_seed(seed, "np.decoder"));
  return model;
}

LatentPosterior encode(const NpModel& model, const ContextView& context) {
  check_context(model, context, "context");
  std::vector<std::vector<double>> rs;
  rs.reserve(context.size());
  for (const auto& p : context)
    rs.push_back(nn::forward(model.encoder, concat(p.x, p.y)));
  const std::vector<double> r_bar = canonical_mean(std::move(rs));
  const std::vector<double> raw = nn::forward(model.latent_head, r_bar);
  return split_gaussian_head(raw, model.sigma_floor);
}

policy::GaussianStats decode(const NpModel& model, std::span<const double> z,
                             std::span<const double> x) {
  if (static_cast<int>(z.size()) != model.d_z ||
      static_cast<int>(x.size()) != model.d_x)
    throw std::invalid_argument("np: decode dimension mismatch");
  const std::vector<double> raw = nn::forward(model.decoder, concat(z, x));
  LatentPosterior g = split_gaussian_head(raw, model.sigma_floor);
  return {std::move(g.mu), std::move(g.sigma)};
}

double gaussian_kl(const LatentPosterior& full, const LatentPosterior& ctx) {
  if (full.mu.size() != ctx.mu.size())
    throw std::invalid_argument("np: KL dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < full.mu.size(); ++i) {
    const double sf = full.sigma[i], sc = ctx.sigma[i];
    const double dm = full.mu[i] - ctx.mu[i];
    kl += std::log(sc / sf) + (sf * sf + dm * dm) / (2.0 * sc * sc) - 0.5;
  }
  return kl;
}

ElboResult elbo_loss_with_noise(const NpModel& model,
                                const ContextView& context,
                                const ContextView& targets,
                                std::span<const double> xi) {
  check_context(model, context, "context");
  check_context(model, targets, "target set");
  if (static_cast<int>(xi.size()) != model.d_z)
    throw std::invalid_argument("np: latent noise must have d_z entries");

  const std::size_t m = context.size();
  const std::size_t n = m + targets.size();
  const int d_z = model.d_z, d_y = model.d_y;

  // Encode every point once; the full and context posteriors reuse the
  // per-point representations.
  std::vector<std::vector<double>> enc_in(n);
  std::vector<nn::ForwardTrace> enc_trace(n);
  std::vector<std::vector<double>> rs(n);
  for (std::size_t p = 0; p < n; ++p) {
    const ContextPoint& pt = p < m ? context[p] : targets[p - m];
    enc_in[p] = concat(pt.x, pt.y);
    rs[p] = nn::forward(model.encoder, enc_in[p], enc_trace[p]);
  }

  std::vector<double> r_bar_full =
      canonical_mean(std::vector<std::vector<double>>(rs.begin(), rs.end()));
  std::vector<double> r_bar_ctx = canonical_mean(
      std::vector<std::vector<double>>(rs.begin(), rs.begin() + m));

  nn::ForwardTrace lat_full_trace, lat_ctx_trace;
  const std::vector<double> raw_full =
      nn::forward(model.latent_head, r_bar_full, lat_full_trace);
  const std::vector<double> raw_ctx =
      nn::forward(model.latent_head, r_bar_ctx, lat_ctx_trace);
  const LatentPosterior post_full =
      split_gaussian_head(raw_full, model.sigma_floor);
  const LatentPosterior post_ctx =
      split_gaussian_head(raw_ctx, model.sigma_floor);

  std::vector<double> z(d_z);
  for (int i = 0; i < d_z; ++i)
    z[i] = post_full.mu[i] + post_full.sigma[i] * xi[i];

  ElboResult result;
  result.encoder_grad.assign(model.encoder.param_count(), 0.0);
  result.latent_grad.assign(model.latent_head.param_count(), 0.0);
  result.decoder_grad.assign(model.decoder.param_count(), 0.0);

  // Likelihood term and its gradient into z.
  std::vector<double> dz(d_z, 0.0);
  std::vector<double> dec_in_grad(model.decoder.input_dim());
  std::vector<double> up_dec(2 * d_y);
  nn::ForwardTrace dec_trace;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const ContextPoint& pt = targets[j];
    const std::vector<double> dec_in = concat(z, pt.x);
    const std::vector<double>& raw = nn::forward(model.decoder, dec_in, dec_trace);
    for (int d = 0; d < d_y; ++d) {
      const double mu_y = raw[d];
      const double sig_raw = raw[d_y + d];
      const double sig = softplus(sig_raw) + model.sigma_floor;
      const double err = pt.y[d] - mu_y;
      result.nll +=
          0.5 * kLogTwoPi + std::log(sig) + err * err / (2.0 * sig * sig);
      up_dec[d] = -err / (sig * sig);
      up_dec[d_y + d] =
          (1.0 / sig - err * err / (sig * sig * sig)) * sigmoid(sig_raw);
    }
    std::fill(dec_in_grad.begin(), dec_in_grad.end(), 0.0);
    nn::backward_accumulate(model.decoder, dec_trace, up_dec,
                            result.decoder_grad, dec_in_grad);
    for (int i = 0; i < d_z; ++i) dz[i] += dec_in_grad[i];
  }

  result.kl = gaussian_kl(post_full, post_ctx);
  result.loss = result.nll + result.kl;

  // Gradients into the two posteriors: reparameterization plus KL.
  std::vector<double> up_full(2 * d_z), up_ctx(2 * d_z);
  for (int i = 0; i < d_z; ++i) {
    const double sf = post_full.sigma[i], sc = post_ctx.sigma[i];
    const double dm = post_full.mu[i] - post_ctx.mu[i];
    const double d_mu_f = dz[i] + dm / (sc * sc);
    const double d_sig_f = dz[i] * xi[i] + sf / (sc * sc) - 1.0 / sf;
    const double d_mu_c = -dm / (sc * sc);
    const double d_sig_c = 1.0 / sc - (sf * sf + dm * dm) / (sc * sc * sc);
    up_full[i] = d_mu_f;
    up_full[d_z + i] = d_sig_f * sigmoid(raw_full[d_z + i]);
    up_ctx[i] = d_mu_c;
    up_ctx[d_z + i] = d_sig_c * sigmoid(raw_ctx[d_z + i]);
  }

  std::vector<double> dr_full(model.d_r, 0.0), dr_ctx(model.d_r, 0.0);
  nn::backward_accumulate(model.latent_head, lat_full_trace, up_full,
                          result.latent_grad, dr_full);
  nn::backward_accumulate(model.latent_head, lat_ctx_trace, up_ctx,
                          result.latent_grad, dr_ctx);

  // Mean aggregation spreads the representation gradient uniformly.
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<double> up_r(model.d_r);
  for (std::size_t p = 0; p < n; ++p) {
    for (int i = 0; i < model.d_r; ++i) {
      up_r[i] = dr_full[i] * inv_n;
      if (p < m) up_r[i] += dr_ctx[i] * inv_m;
    }
    nn::backward_accumulate(model.encoder, enc_trace[p], up_r,
                            result.encoder_grad, {});
  }
  return result;
}

ElboResult elbo_loss(const NpModel& model, const ContextView& context,
                     const ContextView& targets, rng::Stream& z_stream) {
  std::vector<double> xi = z_stream.normal_vec(model.d_z);
  return elbo_loss_with_noise(model, context, targets, xi);
}

policy::GaussianStats np_predict(const NpModel& model,
                                 std::span<const double> state,
                                 const ContextView& context, ZMode z_mode,
                                 rng::Stream* z_stream) {
  LatentPosterior post = encode(model, context);
  std::vector<double> z = post.mu;
  if (z_mode == ZMode::sample) {
    if (!z_stream)
      throw std::invalid_argument("np: ZMode::sample needs a z stream");
    for (std::size_t i = 0; i < z.size(); ++i)
      z[i] += post.sigma[i] * z_stream->normal();
  }
  return decode(model, z, state);
}

void save_np_model(const NpModel& model, std::ostream& os) {
  os << "imel-np v1 " << model.d_x << " " << model.d_y << " " << model.d_r
     << " " << model.d_z << " ";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", model.sigma_floor);
  os << buf << "\n";
  os << "encoder\n";
  nn::save_network(model.encoder, os);
  os << "latent_head\n";
  nn::save_network(model.latent_head, os);
  os << "decoder\n";
  nn::save_network(model.decoder, os);
}

NpModel load_np_model(std::istream& is) {
  std::string magic, version;
  NpModel model;
  is >> magic >> version >> model.d_x >> model.d_y >> model.d_r >> model.d_z >>
      model.sigma_floor;
  if (magic != "imel-np" || version != "v1" || !is)
    throw std::runtime_error("np: bad model snapshot header");
  std::string section;
  is >> section;
  if (section != "encoder") throw std::runtime_error("np: bad snapshot layout");
  model.encoder = nn::load_network(is);
  is >> section;
  if (section != "latent_head")
    throw std::runtime_error("np: bad snapshot layout");
  model.latent_head = nn::load_network(is);
  is >> section;
  if (section != "decoder") throw std::runtime_error("np: bad snapshot layout");
  model.decoder = nn::load_network(is);
  return model;
}

}  // namespace imel::np
