#include "vaelab/geco.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vaelab/vae.hpp"

namespace vaelab::geco {

void validate(const ConstraintSpec& spec) {
  if (spec.kind == ConstraintKind::PNCC) {
    if (!(spec.kappa > 0.0 && spec.kappa <= 1.0))
      throw std::invalid_argument("pNCC kappa must be in (0, 1]");
  } else if (spec.kappa <= 0.0) {
    throw std::invalid_argument("kappa must be positive");
  }
  if (spec.kind != ConstraintKind::RE) {
    if (spec.patch < 1 || spec.patch > spec.image_side)
      throw std::invalid_argument("patch size must be in [1, image side]");
    if (spec.stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (spec.image_side * spec.image_side <= 0)
      throw std::invalid_argument("bad image side");
  }
}

namespace {

// accessors let one expression serve the double path and the tape path
struct RawGetter {
  const Eigen::MatrixXd* g;
  double operator()(int i, int j) const { return (*g)(i, j); }
};

struct TapeGetter {
  const std::vector<std::vector<ad::Var>>* g;
  ad::Var operator()(int i, int j) const {
    return (*g)[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
};

template <class S>
struct ZeroOf;
template <>
struct ZeroOf<double> {
  static double make(ad::Tape*) { return 0.0; }
};
template <>
struct ZeroOf<ad::Var> {
  static ad::Var make(ad::Tape* t) { return {t, t->constant(0.0)}; }
};

std::vector<int> patch_origins(int side, int patch, int stride) {
  std::vector<int> out;
  for (int r = 0; r + patch <= side; r += stride) out.push_back(r);
  return out;
}

// squared-error mean over batch and dimensions, minus kappa^2
template <class S, class Getter>
S re_value(const ConstraintSpec& spec, ad::Tape* tape, const Eigen::MatrixXd& x,
           const Getter& g) {
  using ad::square;
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  S acc = ZeroOf<S>::make(tape);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) acc = acc + square(g(i, j) - x(i, j));
  return acc * (1.0 / (static_cast<double>(n) * d)) - spec.kappa * spec.kappa;
}

// per-patch mean and standard deviation of one image
template <class S, class Getter>
void patch_features(const ConstraintSpec& spec, ad::Tape* tape, const Getter& img,
                    int row0, int col0, S* mean_out, S* std_out) {
  using ad::sqrt;
  using ad::square;
  using std::sqrt;
  const int p = spec.patch;
  const double inv = 1.0 / (p * p);
  S mean = ZeroOf<S>::make(tape);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c) mean = mean + img(row0 + r, col0 + c);
  mean = mean * inv;
  S var = ZeroOf<S>::make(tape);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c) var = var + square(img(row0 + r, col0 + c) - mean);
  var = var * inv;
  *mean_out = mean;
  *std_out = sqrt(var + 1e-8);
}

template <class S, class Getter>
S fre_value(const ConstraintSpec& spec, ad::Tape* tape, const Eigen::MatrixXd& x,
            const Getter& g) {
  using ad::square;
  const int n = static_cast<int>(x.rows());
  const int side = spec.image_side;
  const auto origins = patch_origins(side, spec.patch, spec.stride);
  S acc = ZeroOf<S>::make(tape);
  int features = 0;
  for (int i = 0; i < n; ++i) {
    auto ximg = [&](int r, int c) { return x(i, r * side + c); };
    auto gimg = [&](int r, int c) { return g(i, r * side + c); };
    for (int r0 : origins)
      for (int c0 : origins) {
        double xmean, xstd;
        patch_features<double>(spec, tape, ximg, r0, c0, &xmean, &xstd);
        S gmean = ZeroOf<S>::make(tape), gstd = ZeroOf<S>::make(tape);
        patch_features<S>(spec, tape, gimg, r0, c0, &gmean, &gstd);
        acc = acc + square(gmean - xmean) + square(gstd - xstd);
        if (i == 0) features += 2;
      }
  }
  return acc * (1.0 / (static_cast<double>(n) * features)) - spec.kappa * spec.kappa;
}

template <class S, class Getter>
S pncc_value(const ConstraintSpec& spec, ad::Tape* tape, const Eigen::MatrixXd& x,
             const Getter& g) {
  using ad::sqrt;
  using ad::square;
  using std::sqrt;
  const int n = static_cast<int>(x.rows());
  const int side = spec.image_side;
  const int p = spec.patch;
  const auto origins = patch_origins(side, spec.patch, spec.stride);
  S acc = ZeroOf<S>::make(tape);
  std::vector<double> xdev(static_cast<std::size_t>(p * p));
  std::vector<S> gdev;
  for (int i = 0; i < n; ++i) {
    for (int r0 : origins)
      for (int c0 : origins) {
        // whiten the data patch in plain arithmetic
        double xmean = 0.0;
        for (int r = 0; r < p; ++r)
          for (int c = 0; c < p; ++c) xmean += x(i, (r0 + r) * side + (c0 + c));
        xmean /= p * p;
        double xnorm2 = 0.0;
        for (int r = 0; r < p; ++r)
          for (int c = 0; c < p; ++c) {
            const double d = x(i, (r0 + r) * side + (c0 + c)) - xmean;
            xdev[static_cast<std::size_t>(r * p + c)] = d;
            xnorm2 += d * d;
          }
        const double xden = std::sqrt(xnorm2) + 1e-8;

        S gmean = ZeroOf<S>::make(tape);
        for (int r = 0; r < p; ++r)
          for (int c = 0; c < p; ++c) gmean = gmean + g(i, (r0 + r) * side + (c0 + c));
        gmean = gmean * (1.0 / (p * p));
        gdev.clear();
        S gnorm2 = ZeroOf<S>::make(tape);
        for (int r = 0; r < p; ++r)
          for (int c = 0; c < p; ++c) {
            S d = g(i, (r0 + r) * side + (c0 + c)) - gmean;
            gnorm2 = gnorm2 + square(d);
            gdev.push_back(d);
          }
        // the tiny inner shift keeps the norm differentiable at zero variance
        S gden = sqrt(gnorm2 + 1e-16) + 1e-8;

        S dot = ZeroOf<S>::make(tape);
        for (int k = 0; k < p * p; ++k)
          dot = dot + gdev[static_cast<std::size_t>(k)] *
                          (xdev[static_cast<std::size_t>(k)] / xden);
        acc = acc + (spec.kappa - dot / gden);
      }
  }
  return acc * (1.0 / n);
}

template <class S, class Getter>
S constraint_generic(const ConstraintSpec& spec, ad::Tape* tape, const Eigen::MatrixXd& x,
                     const Getter& g) {
  validate(spec);
  switch (spec.kind) {
    case ConstraintKind::RE:
      return re_value<S>(spec, tape, x, g);
    case ConstraintKind::FRE:
      return fre_value<S>(spec, tape, x, g);
    case ConstraintKind::PNCC:
      return pncc_value<S>(spec, tape, x, g);
  }
  throw std::logic_error("unreachable");
}

}  // namespace

double evaluate_constraint(const ConstraintSpec& spec, const Eigen::MatrixXd& x,
                           const Eigen::MatrixXd& g) {
  if (x.rows() != g.rows() || x.cols() != g.cols())
    throw std::invalid_argument("batch/reconstruction shape mismatch");
  return constraint_generic<double>(spec, nullptr, x, RawGetter{&g});
}

ad::Var evaluate_constraint(const ConstraintSpec& spec, ad::Tape& tape,
                            const Eigen::MatrixXd& x,
                            const std::vector<std::vector<ad::Var>>& g) {
  if (static_cast<int>(g.size()) != x.rows())
    throw std::invalid_argument("batch/reconstruction shape mismatch");
  return constraint_generic<ad::Var>(spec, &tape, x, TapeGetter{&g});
}

LagrangeState LagrangeState::init(int n_constraints, double alpha, double lr_b) {
  if (n_constraints < 1) throw std::invalid_argument("need at least one constraint");
  if (alpha < 0.0 || alpha >= 1.0) throw std::invalid_argument("alpha must be in [0, 1)");
  LagrangeState s;
  s.log_b = Eigen::VectorXd::Zero(n_constraints);  // b = 1
  s.c_ma = Eigen::VectorXd::Zero(n_constraints);
  s.alpha = alpha;
  s.lr_b = lr_b;
  return s;
}

void moving_average_update(LagrangeState& state, const Eigen::VectorXd& c_hat) {
  if (c_hat.size() != state.c_ma.size()) throw std::invalid_argument("c_hat size mismatch");
  if (state.t == 0)
    state.c_ma = c_hat;
  else
    state.c_ma = state.alpha * state.c_ma + (1.0 - state.alpha) * c_hat;
}

double stop_gradient_combine(double /*c_hat*/, double c_ma) { return c_ma; }

ad::Var stop_gradient_combine(ad::Var c_hat, double c_ma) {
  return ad::stop_gradient_shift(c_hat, c_ma);
}

void multiplier_update(LagrangeState& state, const Eigen::VectorXd& c) {
  if (c.size() != state.log_b.size()) throw std::invalid_argument("c size mismatch");
  state.log_b += state.lr_b * c;
  if (state.clamp)
    for (int l = 0; l < state.log_b.size(); ++l)
      if (state.log_b[l] > 20.0 || state.log_b[l] < -20.0) {
        state.log_b[l] = std::clamp(state.log_b[l], -20.0, 20.0);
        ++state.clamp_events;
      }
}

GecoStepReport geco_step(vae::GaussianVae& model, const Eigen::MatrixXd& batch,
                         const Eigen::MatrixXd& eps, LagrangeState& state,
                         const std::vector<ConstraintSpec>& specs,
                         vae::AdamState& optimizer, double lr) {
  if (specs.empty()) throw std::invalid_argument("geco_step needs constraints");
  if (static_cast<int>(specs.size()) != state.log_b.size())
    throw std::invalid_argument("state/spec count mismatch");

  GecoStepReport report;
  report.b_before = state.b();

  ad::Tape& tape = vae::detail::tape_workspace();
  tape.clear();
  std::vector<int> ids(static_cast<std::size_t>(model.layout.total));
  for (int k = 0; k < model.layout.total; ++k)
    ids[static_cast<std::size_t>(k)] = tape.leaf(model.params[k]);
  vae::TapeCtx cx{&tape, ids.data()};
  const auto fb = vae::forward_batch(model.arch, model.layout, cx, batch, eps);
  report.kl = fb.kl_mean.value();
  report.distortion = fb.ll_mean.value();
  if (!std::isfinite(report.kl)) throw std::runtime_error("non-finite loss: kl term");
  if (!std::isfinite(report.distortion))
    throw std::runtime_error("non-finite loss: distortion term");

  const int n_constraints = static_cast<int>(specs.size());
  std::vector<ad::Var> c_hat_vars;
  c_hat_vars.reserve(static_cast<std::size_t>(n_constraints));
  report.c_hat.resize(n_constraints);
  for (int l = 0; l < n_constraints; ++l) {
    c_hat_vars.push_back(
        evaluate_constraint(specs[static_cast<std::size_t>(l)], tape, batch, fb.g));
    report.c_hat[l] = c_hat_vars.back().value();
    if (!std::isfinite(report.c_hat[l]))
      throw std::runtime_error("non-finite loss: constraint term");
  }

  moving_average_update(state, report.c_hat);
  report.c_ma = state.c_ma;

  ad::Var loss = fb.kl_mean;
  const Eigen::VectorXd b = state.b();
  for (int l = 0; l < n_constraints; ++l) {
    ad::Var c_eff =
        stop_gradient_combine(c_hat_vars[static_cast<std::size_t>(l)], state.c_ma[l]);
    loss = loss + c_eff * b[l];
  }
  report.lagrangian = loss.value();
  if (!std::isfinite(report.lagrangian)) throw std::runtime_error("non-finite loss");

  // descend theta/eta first, then ascend the multipliers
  if (lr != 0.0) {
    tape.backward(loss.i);
    Eigen::VectorXd grad(model.layout.total);
    for (int k = 0; k < model.layout.total; ++k)
      grad[k] = tape.adjoint(ids[static_cast<std::size_t>(k)]);
    if (!grad.allFinite()) throw std::runtime_error("non-finite gradient");
    optimizer.step(model.params, grad, lr);
  }

  const int clamps_before = state.clamp_events;
  multiplier_update(state, state.c_ma);
  report.clamped = state.clamp_events != clamps_before;
  report.b_after = state.b();
  ++state.t;
  return report;
}

}  // namespace vaelab::geco
