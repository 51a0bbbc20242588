#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bavae/distributions.hpp"

namespace bavae {

/// Linear ramp from start_value to end_value over iteration_threshold
/// optimizer steps, constant afterwards.
struct ScheduleSpec {
  double start_value = 0.0;
  double end_value = 0.0;
  std::int64_t iteration_threshold = 1;

  static ScheduleSpec constant(double v) { return {v, v, 1}; }
  void validate(const char* what) const;
};

double schedule_value(const ScheduleSpec& spec, std::int64_t step);

enum class ObjectiveKind { elbo, beta, bottleneck, beta_annealed };

const char* to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::elbo;
  double beta = 1.0;
  double gamma = 100.0;
  ScheduleSpec c_schedule = ScheduleSpec::constant(0.0);
  ScheduleSpec beta_schedule{100.0, 1.0, 100000};

  void validate() const;
};

/// Batch-mean terms of one loss evaluation. Distortion and rate are in nats
/// per example (summed over pixels / latent dimensions).
struct LossBreakdown {
  double total = 0.0;
  double distortion_term = 0.0;
  double rate_term = 0.0;
  double effective_hyperparameter = 0.0;
  std::vector<double> per_dim_kl;
};

/// Inputs shared by every objective: observations and decoder means are
/// P x B, the posterior batch is L x B.
struct LossInputs {
  const Eigen::MatrixXd& x;
  const PosteriorBatch& q;
  const Eigen::MatrixXd& reconstruction;
  const LikelihoodSpec& likelihood;
};

LossBreakdown elbo_loss(const LossInputs& in);
LossBreakdown beta_loss(const LossInputs& in, double beta);
LossBreakdown bottleneck_loss(const LossInputs& in, double gamma, double c);

/// Dispatches on config.kind using the hyperparameter scheduled for `step`.
/// Throws NonFiniteLoss when the total is not finite.
LossBreakdown step_loss(const ObjectiveConfig& config, std::int64_t step, const LossInputs& in);

/// d total / d(inputs) for the loss step_loss would return. The posterior
/// gradients cover only the direct (KL) dependence.
struct LossGradient {
  Eigen::MatrixXd d_mean;
  Eigen::MatrixXd d_log_var;
  Eigen::MatrixXd d_reconstruction;
};

/// Gradient of total = distortion + f(rate) given df/drate.
LossGradient loss_gradient(const LossInputs& in, double rate_weight);

/// df/drate for config at `step`, given the batch rate. For the bottleneck
/// objective this is gamma * sign(rate - C), with 0 at rate == C.
double rate_weight(const ObjectiveConfig& config, std::int64_t step, double rate);

/// Scheduled beta or C for the config at `step` (beta = 1 for elbo).
double effective_hyperparameter(const ObjectiveConfig& config, std::int64_t step);

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::int64_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace bavae
