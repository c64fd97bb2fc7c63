#include "vaelab/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "vaelab/rng.hpp"

namespace vaelab::vae {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kLogSigmaFloor = -6.907755278982137;  // ln(1e-3)
}  // namespace

namespace detail {
// shared gradient-tape workspace; capacity persists across steps
ad::Tape& tape_workspace() {
  thread_local ad::Tape tape;
  return tape;
}
}  // namespace detail

ParamLayout ParamLayout::make(const VaeArch& arch) {
  ParamLayout lay{};
  int cursor = 0;
  auto block = [&cursor](int n) {
    const int off = cursor;
    cursor += n;
    return off;
  };
  lay.enc_w1 = block(arch.hidden * arch.d_x);
  lay.enc_b1 = block(arch.hidden);
  lay.enc_w2 = block(arch.hidden * arch.hidden);
  lay.enc_b2 = block(arch.hidden);
  lay.enc_wmu = block(arch.d_z * arch.hidden);
  lay.enc_bmu = block(arch.d_z);
  lay.enc_wls = block(arch.d_z * arch.hidden);
  lay.enc_bls = block(arch.d_z);
  lay.dec_w1 = block(arch.hidden * arch.d_z);
  lay.dec_b1 = block(arch.hidden);
  lay.dec_w2 = block(arch.hidden * arch.hidden);
  lay.dec_b2 = block(arch.hidden);
  lay.dec_w3 = block(arch.d_x * arch.hidden);
  lay.dec_b3 = block(arch.d_x);
  lay.log_sigma_x = block(1);
  lay.total = cursor;
  return lay;
}

GaussianVae GaussianVae::init(const VaeArch& arch, std::uint64_t seed) {
  if (arch.d_x < 1 || arch.d_z < 1 || arch.hidden < 1)
    throw std::invalid_argument("bad architecture");
  GaussianVae model;
  model.arch = arch;
  model.layout = ParamLayout::make(arch);
  model.params.resize(model.layout.total);
  Rng rng(seed);
  auto fill = [&](int off, int rows, int cols) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int k = 0; k < rows * cols; ++k) model.params[off + k] = scale * rng.normal();
  };
  auto zero = [&](int off, int n) {
    for (int k = 0; k < n; ++k) model.params[off + k] = 0.0;
  };
  const auto& lay = model.layout;
  fill(lay.enc_w1, arch.hidden, arch.d_x);
  zero(lay.enc_b1, arch.hidden);
  fill(lay.enc_w2, arch.hidden, arch.hidden);
  zero(lay.enc_b2, arch.hidden);
  fill(lay.enc_wmu, arch.d_z, arch.hidden);
  zero(lay.enc_bmu, arch.d_z);
  fill(lay.enc_wls, arch.d_z, arch.hidden);
  zero(lay.enc_bls, arch.d_z);
  fill(lay.dec_w1, arch.hidden, arch.d_z);
  zero(lay.dec_b1, arch.hidden);
  fill(lay.dec_w2, arch.hidden, arch.hidden);
  zero(lay.dec_b2, arch.hidden);
  fill(lay.dec_w3, arch.d_x, arch.hidden);
  zero(lay.dec_b3, arch.d_x);
  model.params[lay.log_sigma_x] = 0.0;
  return model;
}

ElboTerms elbo(const GaussianVae& model, const Eigen::MatrixXd& batch,
               const Eigen::MatrixXd& eps) {
  RawCtx cx{model.params.data()};
  const auto fb = forward_batch(model.arch, model.layout, cx, batch, eps);
  ElboTerms terms;
  terms.distortion = fb.ll_mean;
  terms.kl = fb.kl_mean;
  terms.value = fb.ll_mean - fb.kl_mean;
  return terms;
}

Eigen::MatrixXd reconstruct(const GaussianVae& model, const Eigen::MatrixXd& batch,
                            const Eigen::MatrixXd& eps) {
  RawCtx cx{model.params.data()};
  const auto fb = forward_batch(model.arch, model.layout, cx, batch, eps);
  Eigen::MatrixXd g(batch.rows(), model.arch.d_x);
  for (int i = 0; i < batch.rows(); ++i)
    for (int j = 0; j < model.arch.d_x; ++j)
      g(i, j) = fb.g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return g;
}

void encode_all(const GaussianVae& model, const Eigen::MatrixXd& points,
                Eigen::MatrixXd& mu, Eigen::MatrixXd& log_sigma) {
  RawCtx cx{model.params.data()};
  const int n = static_cast<int>(points.rows());
  mu.resize(n, model.arch.d_z);
  log_sigma.resize(n, model.arch.d_z);
  std::vector<double> xi(static_cast<std::size_t>(model.arch.d_x));
  std::vector<double> m, ls;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < model.arch.d_x; ++j) xi[static_cast<std::size_t>(j)] = points(i, j);
    encode_sample(model.arch, model.layout, cx, xi.data(), m, ls);
    for (int d = 0; d < model.arch.d_z; ++d) {
      mu(i, d) = m[static_cast<std::size_t>(d)];
      log_sigma(i, d) = ls[static_cast<std::size_t>(d)];
    }
  }
}

namespace {

const char* layer_name(const ParamLayout& lay, int index) {
  struct Entry {
    int off;
    const char* name;
  };
  const Entry entries[] = {
      {lay.enc_w1, "enc_w1"},   {lay.enc_b1, "enc_b1"}, {lay.enc_w2, "enc_w2"},
      {lay.enc_b2, "enc_b2"},   {lay.enc_wmu, "enc_wmu"}, {lay.enc_bmu, "enc_bmu"},
      {lay.enc_wls, "enc_wls"}, {lay.enc_bls, "enc_bls"}, {lay.dec_w1, "dec_w1"},
      {lay.dec_b1, "dec_b1"},   {lay.dec_w2, "dec_w2"}, {lay.dec_b2, "dec_b2"},
      {lay.dec_w3, "dec_w3"},   {lay.dec_b3, "dec_b3"}, {lay.log_sigma_x, "log_sigma_x"},
  };
  const char* best = "unknown";
  for (const auto& e : entries)
    if (index >= e.off) best = e.name;
  return best;
}

}  // namespace

GradResult gradients(const GaussianVae& model, const Objective& objective,
                     const Eigen::MatrixXd& batch, const Eigen::MatrixXd& eps) {
  ad::Tape& tape = detail::tape_workspace();
  tape.clear();
  std::vector<int> ids(static_cast<std::size_t>(model.layout.total));
  for (int k = 0; k < model.layout.total; ++k) ids[static_cast<std::size_t>(k)] = tape.leaf(model.params[k]);
  TapeCtx cx{&tape, ids.data()};

  const auto fb = forward_batch(model.arch, model.layout, cx, batch, eps);
  GradResult result;
  result.kl = fb.kl_mean.value();
  result.distortion = fb.ll_mean.value();
  if (!std::isfinite(result.kl)) throw std::runtime_error("non-finite loss: kl term");
  if (!std::isfinite(result.distortion))
    throw std::runtime_error("non-finite loss: distortion term");

  ad::Var loss{&tape, -1};
  if (objective.kind == Objective::Kind::Elbo) {
    loss = fb.kl_mean - fb.ll_mean;  // negative ELBO
  } else {
    if (objective.specs == nullptr) throw std::invalid_argument("geco objective needs specs");
    const auto& specs = *objective.specs;
    if (objective.b.size() != static_cast<int>(specs.size()) ||
        objective.c_ma.size() != static_cast<int>(specs.size()))
      throw std::invalid_argument("objective b/c_ma size mismatch");
    result.c_hat.resize(static_cast<int>(specs.size()));
    loss = fb.kl_mean;
    for (std::size_t l = 0; l < specs.size(); ++l) {
      ad::Var c_hat = geco::evaluate_constraint(specs[l], tape, batch, fb.g);
      result.c_hat[static_cast<int>(l)] = c_hat.value();
      if (!std::isfinite(c_hat.value()))
        throw std::runtime_error("non-finite loss: constraint term");
      ad::Var c_eff = geco::stop_gradient_combine(c_hat, objective.c_ma[static_cast<int>(l)]);
      loss = loss + c_eff * objective.b[static_cast<int>(l)];
    }
  }
  result.loss = loss.value();
  if (!std::isfinite(result.loss)) throw std::runtime_error("non-finite loss");

  tape.backward(loss.i);
  result.grad.resize(model.layout.total);
  for (int k = 0; k < model.layout.total; ++k) {
    const double g = tape.adjoint(ids[static_cast<std::size_t>(k)]);
    if (!std::isfinite(g))
      throw std::runtime_error(std::string("non-finite gradient in ") +
                               layer_name(model.layout, k));
    result.grad[k] = g;
  }
  return result;
}

AdamState AdamState::init(int n, double beta1, double beta2, double eps) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(n);
  s.v = Eigen::VectorXd::Zero(n);
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void AdamState::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  params.array() -=
      lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

TrainResult train(GaussianVae& model, const tiling::Dataset& data, const TrainConfig& cfg) {
  if (cfg.steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (cfg.lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (cfg.batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (data.dim() != model.arch.d_x) throw std::invalid_argument("data/model dim mismatch");

  TrainResult result;
  const int n = data.size();
  const int batch_size = std::min(cfg.batch, n);
  Rng batch_rng(derive_seed(cfg.seed, 1));
  Rng eps_rng(derive_seed(cfg.seed, 2));
  AdamState adam = AdamState::init(model.layout.total, cfg.adam_beta1, cfg.adam_beta2,
                                   cfg.adam_eps);
  const bool is_geco = cfg.objective == TrainConfig::Objective::Geco;
  if (is_geco) {
    if (cfg.constraints.empty()) throw std::invalid_argument("geco run needs constraints");
    for (const auto& spec : cfg.constraints) geco::validate(spec);
    result.lagrange = geco::LagrangeState::init(static_cast<int>(cfg.constraints.size()),
                                                cfg.ma_alpha, cfg.lr_b);
  }

  Eigen::MatrixXd batch(batch_size, model.arch.d_x);
  Eigen::MatrixXd eps(batch_size, model.arch.d_z);
  for (int step = 0; step < cfg.steps; ++step) {
    if (batch_size == n) {
      batch = data.points;
    } else {
      for (int i = 0; i < batch_size; ++i)
        batch.row(i) = data.points.row(batch_rng.uniform_int(n));
    }
    for (int i = 0; i < batch_size; ++i)
      for (int d = 0; d < model.arch.d_z; ++d) eps(i, d) = eps_rng.normal();

    TraceRow row;
    row.step = step;
    if (is_geco) {
      const auto report = geco::geco_step(model, batch, eps, result.lagrange,
                                          cfg.constraints, adam, cfg.lr);
      row.distortion = report.distortion;
      row.kl = report.kl;
      row.elbo = report.distortion - report.kl;
      row.b = report.b_after;
      row.c_ma = report.c_ma;
      row.c_hat = report.c_hat;
    } else {
      Objective objective;
      objective.kind = Objective::Kind::Elbo;
      const auto grads = gradients(model, objective, batch, eps);
      adam.step(model.params, grads.grad, cfg.lr);
      row.distortion = grads.distortion;
      row.kl = grads.kl;
      row.elbo = grads.distortion - grads.kl;
    }
    if (model.params[model.layout.log_sigma_x] < kLogSigmaFloor) {
      model.params[model.layout.log_sigma_x] = kLogSigmaFloor;
      ++result.sigma_floor_events;
    }
    if (cfg.trace_every > 0 && step % cfg.trace_every == 0) result.trace.push_back(row);
  }
  return result;
}

double average_kl(const GaussianVae& model, const tiling::Dataset& data) {
  Eigen::MatrixXd mu, ls;
  encode_all(model, data.points, mu, ls);
  double acc = 0.0;
  for (int i = 0; i < data.size(); ++i)
    for (int d = 0; d < model.arch.d_z; ++d) {
      const double s2 = std::exp(2.0 * ls(i, d));
      acc += 0.5 * (mu(i, d) * mu(i, d) + s2 - 1.0 - 2.0 * ls(i, d));
    }
  return acc / data.size();
}

MarginalKlEstimate marginal_kl(const GaussianVae& model, const tiling::Dataset& data,
                               int samples, std::uint64_t seed) {
  if (samples < 100) throw std::runtime_error("sample count too small");
  if (data.size() > 10000)
    throw std::invalid_argument("marginal_kl needs n <= 1e4 for the exact mixture");
  const int n = data.size();
  const int d_z = model.arch.d_z;
  Eigen::MatrixXd mu, ls;
  encode_all(model, data.points, mu, ls);
  const Eigen::MatrixXd sigma = ls.array().exp();

  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  Eigen::VectorXd z(d_z);
  Eigen::VectorXd logcomp(n);
  for (int s = 0; s < samples; ++s) {
    const int pick = rng.uniform_int(n);
    for (int d = 0; d < d_z; ++d) z[d] = mu(pick, d) + sigma(pick, d) * rng.normal();
    for (int j = 0; j < n; ++j) {
      double lp = 0.0;
      for (int d = 0; d < d_z; ++d) {
        const double t = (z[d] - mu(j, d)) / sigma(j, d);
        lp += -0.5 * kLog2Pi - ls(j, d) - 0.5 * t * t;
      }
      logcomp[j] = lp;
    }
    const double m = logcomp.maxCoeff();
    const double log_q = m + std::log((logcomp.array() - m).exp().sum()) - std::log(n);
    double log_pi = 0.0;
    for (int d = 0; d < d_z; ++d) log_pi += -0.5 * kLog2Pi - 0.5 * z[d] * z[d];
    const double v = log_q - log_pi;
    sum += v;
    sumsq += v * v;
  }
  MarginalKlEstimate est;
  est.samples = samples;
  est.value = sum / samples;
  const double var = (sumsq - sum * sum / samples) / (samples - 1);
  est.stderr_ = std::sqrt(std::max(var, 0.0) / samples);
  return est;
}

double sigma_opt(const GaussianVae& model, const tiling::Dataset& data, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd eps(data.size(), model.arch.d_z);
  for (int i = 0; i < data.size(); ++i)
    for (int d = 0; d < model.arch.d_z; ++d) eps(i, d) = rng.normal();
  const Eigen::MatrixXd g = reconstruct(model, data.points, eps);
  const double sse = (g - data.points).squaredNorm();
  return std::sqrt(sse / (static_cast<double>(data.size()) * model.arch.d_x));
}

void save_checkpoint(const GaussianVae& model, const std::string& path) {
  nlohmann::json header;
  header["format"] = "vaelab-ckpt-1";
  header["d_x"] = model.arch.d_x;
  header["d_z"] = model.arch.d_z;
  header["hidden"] = model.arch.hidden;
  header["params"] = model.layout.total;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(model.params.data()),
            static_cast<std::streamsize>(sizeof(double)) * model.layout.total);
}

GaussianVae load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint header");
  const nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("format", "") != std::string("vaelab-ckpt-1"))
    throw std::runtime_error("unknown checkpoint format");
  VaeArch arch;
  arch.d_x = header.at("d_x").get<int>();
  arch.d_z = header.at("d_z").get<int>();
  arch.hidden = header.at("hidden").get<int>();
  GaussianVae model;
  model.arch = arch;
  model.layout = ParamLayout::make(arch);
  model.params.resize(model.layout.total);
  if (header.at("params").get<int>() != model.layout.total)
    throw std::runtime_error("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(model.params.data()),
          static_cast<std::streamsize>(sizeof(double)) * model.layout.total);
  if (in.gcount() != static_cast<std::streamsize>(sizeof(double)) * model.layout.total)
    throw std::runtime_error("truncated checkpoint parameter block");
  return model;
}

}  // namespace vaelab::vae
