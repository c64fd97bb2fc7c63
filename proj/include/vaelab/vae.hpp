#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vaelab/autodiff.hpp"
#include "vaelab/geco.hpp"
#include "vaelab/tiling.hpp"

namespace vaelab::vae {

/// Two tanh hidden layers on both sides; encoder emits (mu_z, log sigma_z),
/// decoder is linear in its last layer. One global trainable log sigma_x.
struct VaeArch {
  int d_x = 2;
  int d_z = 2;
  int hidden = 64;
};

struct ParamLayout {
  int enc_w1, enc_b1, enc_w2, enc_b2;
  int enc_wmu, enc_bmu, enc_wls, enc_bls;
  int dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3;
  int log_sigma_x;
  int total;

  static ParamLayout make(const VaeArch& arch);
};

struct GaussianVae {
  VaeArch arch;
  ParamLayout layout;
  Eigen::VectorXd params;

  static GaussianVae init(const VaeArch& arch, std::uint64_t seed);

  double log_sigma_x() const { return params[layout.log_sigma_x]; }
};

// ---- generic forward pass ----
// The same arithmetic runs on plain doubles (evaluation) and on tape
// variables (gradients); finite-difference tests hold the two together.

struct RawCtx {
  using Scalar = double;
  const double* p;
  double param(int i) const { return p[i]; }
  double constant(double v) const { return v; }
};

struct TapeCtx {
  using Scalar = ad::Var;
  ad::Tape* tape;
  const int* ids;
  ad::Var param(int i) const { return {tape, ids[i]}; }
  ad::Var constant(double v) const { return {tape, tape->constant(v)}; }
};

namespace detail {

/// Reusable per-thread gradient tape; callers clear() before building.
ad::Tape& tape_workspace();

template <class Ctx, class S>
void dense(const Ctx& cx, int w_off, int b_off, int in_n, int out_n,
           const std::vector<S>& in, std::vector<S>& out, bool apply_tanh) {
  using ad::tanh;
  using std::tanh;
  out.clear();
  out.reserve(static_cast<std::size_t>(out_n));
  for (int o = 0; o < out_n; ++o) {
    S acc = cx.param(b_off + o);
    for (int j = 0; j < in_n; ++j)
      acc = acc + cx.param(w_off + o * in_n + j) * in[static_cast<std::size_t>(j)];
    out.push_back(apply_tanh ? tanh(acc) : acc);
  }
}

}  // namespace detail

template <class Ctx, class S = typename Ctx::Scalar>
void encode_sample(const VaeArch& arch, const ParamLayout& lay, const Ctx& cx,
                   const double* x, std::vector<S>& mu, std::vector<S>& log_sigma) {
  std::vector<S> h0, h1, h2;
  h0.reserve(static_cast<std::size_t>(arch.d_x));
  for (int j = 0; j < arch.d_x; ++j) h0.push_back(cx.constant(x[j]));
  detail::dense(cx, lay.enc_w1, lay.enc_b1, arch.d_x, arch.hidden, h0, h1, true);
  detail::dense(cx, lay.enc_w2, lay.enc_b2, arch.hidden, arch.hidden, h1, h2, true);
  detail::dense(cx, lay.enc_wmu, lay.enc_bmu, arch.hidden, arch.d_z, h2, mu, false);
  detail::dense(cx, lay.enc_wls, lay.enc_bls, arch.hidden, arch.d_z, h2, log_sigma, false);
}

template <class Ctx, class S = typename Ctx::Scalar>
void decode_sample(const VaeArch& arch, const ParamLayout& lay, const Ctx& cx,
                   const std::vector<S>& z, std::vector<S>& g) {
  std::vector<S> h1, h2;
  detail::dense(cx, lay.dec_w1, lay.dec_b1, arch.d_z, arch.hidden, z, h1, true);
  detail::dense(cx, lay.dec_w2, lay.dec_b2, arch.hidden, arch.hidden, h1, h2, true);
  detail::dense(cx, lay.dec_w3, lay.dec_b3, arch.hidden, arch.d_x, h2, g, false);
}

/// Reparametrized latent: z = mu + exp(log_sigma) .* eps.
template <class S>
void reparam_sample(const std::vector<S>& mu, const std::vector<S>& log_sigma,
                    const double* eps, std::vector<S>& z) {
  using ad::exp;
  using std::exp;
  z.clear();
  z.reserve(mu.size());
  for (std::size_t d = 0; d < mu.size(); ++d)
    z.push_back(mu[d] + exp(log_sigma[d]) * eps[d]);
}

/// Diagonal-Gaussian KL against the unit prior:
/// 0.5 sum_d (mu^2 + sigma^2 - 1 - 2 log sigma).
template <class Ctx, class S = typename Ctx::Scalar>
S kl_closed_form(const Ctx& cx, const std::vector<S>& mu, const std::vector<S>& log_sigma) {
  using ad::exp;
  using ad::square;
  using std::exp;
  S acc = cx.constant(0.0);
  for (std::size_t d = 0; d < mu.size(); ++d) {
    S s2 = exp(log_sigma[d] * 2.0);
    acc = acc + square(mu[d]) + s2 - log_sigma[d] * 2.0 - 1.0;
  }
  return acc * 0.5;
}

struct ElboTerms {
  double value = 0.0;       // distortion - kl
  double distortion = 0.0;  // mean reconstruction log-likelihood
  double kl = 0.0;          // mean closed-form KL
};

template <class Ctx, class S = typename Ctx::Scalar>
struct ForwardBatch {
  std::vector<std::vector<S>> g;  // reconstructions per sample
  S kl_mean;
  S ll_mean;
};

template <class Ctx, class S = typename Ctx::Scalar>
ForwardBatch<Ctx> forward_batch(const VaeArch& arch, const ParamLayout& lay,
                                const Ctx& cx, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& eps) {
  using ad::exp;
  using ad::square;
  using std::exp;
  const int n = static_cast<int>(x.rows());
  ForwardBatch<Ctx> fb;
  fb.g.resize(static_cast<std::size_t>(n));
  S kl_sum = cx.constant(0.0);
  S se_sum = cx.constant(0.0);  // squared reconstruction error, all samples
  std::vector<S> mu, ls, z;
  std::vector<double> xi(static_cast<std::size_t>(arch.d_x));
  std::vector<double> ei(static_cast<std::size_t>(arch.d_z));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < arch.d_x; ++j) xi[static_cast<std::size_t>(j)] = x(i, j);
    for (int d = 0; d < arch.d_z; ++d) ei[static_cast<std::size_t>(d)] = eps(i, d);
    encode_sample(arch, lay, cx, xi.data(), mu, ls);
    kl_sum = kl_sum + kl_closed_form(cx, mu, ls);
    reparam_sample(mu, ls, ei.data(), z);
    decode_sample(arch, lay, cx, z, fb.g[static_cast<std::size_t>(i)]);
    for (int j = 0; j < arch.d_x; ++j)
      se_sum = se_sum + square(fb.g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - xi[static_cast<std::size_t>(j)]);
  }
  fb.kl_mean = kl_sum / static_cast<double>(n);
  const S lsx = cx.param(lay.log_sigma_x);
  const double log2pi = 1.8378770664093453;  // ln(2 pi)
  fb.ll_mean = (se_sum * exp(lsx * -2.0) * -0.5 - (lsx + log2pi * 0.5) * static_cast<double>(arch.d_x * n)) /
               static_cast<double>(n);
  return fb;
}

// ---- evaluation / training API ----

ElboTerms elbo(const GaussianVae& model, const Eigen::MatrixXd& batch,
               const Eigen::MatrixXd& eps);

/// Reconstructions for the batch at the reparametrized latent.
Eigen::MatrixXd reconstruct(const GaussianVae& model, const Eigen::MatrixXd& batch,
                            const Eigen::MatrixXd& eps);

/// Encoder outputs for the whole dataset, one row per point.
void encode_all(const GaussianVae& model, const Eigen::MatrixXd& points,
                Eigen::MatrixXd& mu, Eigen::MatrixXd& log_sigma);

struct Objective {
  enum class Kind { Elbo, Geco } kind = Kind::Elbo;
  // Geco parts: multipliers and the effective (moving-average) constraint
  // values used by the stop-gradient combine.
  Eigen::VectorXd b;
  Eigen::VectorXd c_ma;
  const std::vector<geco::ConstraintSpec>* specs = nullptr;
};

struct GradResult {
  Eigen::VectorXd grad;
  double loss = 0.0;
  double kl = 0.0;
  double distortion = 0.0;
  Eigen::VectorXd c_hat;
};

/// Exact reverse-accumulation gradient of the chosen scalar objective with
/// respect to every parameter. Elbo means the negative ELBO loss; Geco means
/// the Lagrangian mean KL + b^T C with the stop-gradient combine applied
/// against the supplied c_ma. Throws when the loss or gradient is not finite.
GradResult gradients(const GaussianVae& model, const Objective& objective,
                     const Eigen::MatrixXd& batch, const Eigen::MatrixXd& eps);

struct AdamState {
  Eigen::VectorXd m, v;
  int t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static AdamState init(int n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);
};

struct TrainConfig {
  int steps = 2000;
  int batch = 16;
  double lr = 1e-3;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  enum class Objective { Elbo, Geco } objective = Objective::Elbo;
  std::vector<geco::ConstraintSpec> constraints;  // Geco only
  double ma_alpha = 0.99;
  double lr_b = 0.01;
  int trace_every = 1;
};

struct TraceRow {
  int step = 0;
  double distortion = 0.0;
  double kl = 0.0;
  double elbo = 0.0;
  Eigen::VectorXd b, c_ma, c_hat;  // empty for pure-ELBO runs
};

struct TrainResult {
  std::vector<TraceRow> trace;
  geco::LagrangeState lagrange;  // final multiplier state (Geco runs)
  int sigma_floor_events = 0;
};

/// Deterministic training loop (ELBO ascent or the constrained scheme).
/// The global log sigma_x is floored at ln(1e-3) after each step.
TrainResult train(GaussianVae& model, const tiling::Dataset& data, const TrainConfig& cfg);

// ---- diagnostics ----

/// (1/n) sum_i KL(q(z|x_i) ; prior), closed form.
double average_kl(const GaussianVae& model, const tiling::Dataset& data);

struct MarginalKlEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  int samples = 0;
};

/// Monte Carlo estimate of KL between the aggregate posterior mixture and the
/// prior; the mixture is evaluated exactly (n capped at 1e4). Throws
/// "sample count too small" below 100 samples.
MarginalKlEstimate marginal_kl(const GaussianVae& model, const tiling::Dataset& data,
                               int samples, std::uint64_t seed);

/// Per-dimension RMS reconstruction error with posterior-sampled latents;
/// the sigma used downstream for beta-independent likelihood reporting.
double sigma_opt(const GaussianVae& model, const tiling::Dataset& data, std::uint64_t seed);

// ---- checkpoints: JSON header line + little-endian f64 parameter block ----

void save_checkpoint(const GaussianVae& model, const std::string& path);
GaussianVae load_checkpoint(const std::string& path);

}  // namespace vaelab::vae
