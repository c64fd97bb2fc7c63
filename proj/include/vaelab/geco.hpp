#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "vaelab/autodiff.hpp"

namespace vaelab::vae {
struct GaussianVae;
struct AdamState;
}  // namespace vaelab::vae

namespace vaelab::geco {

enum class ConstraintKind { RE, FRE, PNCC };

struct ConstraintSpec {
  ConstraintKind kind = ConstraintKind::RE;
  double kappa = 0.1;
  int patch = 4;    // FRE / pNCC patch side
  int stride = 4;   // FRE / pNCC patch stride
  int image_side = 8;
};

void validate(const ConstraintSpec& spec);

/// Batch constraint value; x and g are B x d matrices with one row per
/// sample. RE: mean over batch and dimensions of squared error minus
/// kappa^2. FRE: the same on per-patch mean/std features. pNCC: per sample
/// the sum over patches of (kappa - whitened-patch dot), mean over batch.
double evaluate_constraint(const ConstraintSpec& spec, const Eigen::MatrixXd& x,
                           const Eigen::MatrixXd& g);

/// Tape form of the same expression, for gradient paths. g holds tape nodes
/// row-major per sample.
ad::Var evaluate_constraint(const ConstraintSpec& spec, ad::Tape& tape,
                            const Eigen::MatrixXd& x,
                            const std::vector<std::vector<ad::Var>>& g);

struct LagrangeState {
  Eigen::VectorXd log_b;   // multipliers stored in the log domain
  Eigen::VectorXd c_ma;    // constraint moving average
  double alpha = 0.99;     // moving-average smoothing
  double lr_b = 0.01;      // multiplier step size
  int t = 0;               // completed steps
  bool clamp = true;       // clamp log_b into [-20, 20]
  int clamp_events = 0;

  static LagrangeState init(int n_constraints, double alpha = 0.99, double lr_b = 0.01);
  Eigen::VectorXd b() const { return log_b.array().exp(); }
};

/// Alg.-style moving average: first step copies the batch value, later steps
/// blend with weight alpha on the history.
void moving_average_update(LagrangeState& state, const Eigen::VectorXd& c_hat);

/// Effective constraint: value equals c_ma exactly, parameter sensitivity is
/// that of c_hat. Scalar form returns the value half of the contract.
double stop_gradient_combine(double c_hat, double c_ma);
ad::Var stop_gradient_combine(ad::Var c_hat, double c_ma);

/// log b += lr_b * c componentwise, then the optional clamp. Positivity of
/// b holds by construction.
void multiplier_update(LagrangeState& state, const Eigen::VectorXd& c);

struct GecoStepReport {
  Eigen::VectorXd c_hat;
  Eigen::VectorXd c_ma;
  Eigen::VectorXd b_before;
  Eigen::VectorXd b_after;
  double lagrangian = 0.0;
  double kl = 0.0;
  double distortion = 0.0;  // reconstruction log-likelihood term
  bool clamped = false;
};

/// One full constrained-optimization step: sample the posterior with the
/// given noise, evaluate constraints, update the moving average, descend the
/// model parameters on mean KL + b^T C, then ascend the multipliers.
GecoStepReport geco_step(vae::GaussianVae& model, const Eigen::MatrixXd& batch,
                         const Eigen::MatrixXd& eps, LagrangeState& state,
                         const std::vector<ConstraintSpec>& specs,
                         vae::AdamState& optimizer, double lr);

}  // namespace vaelab::geco
