#include "bavae/objectives.hpp"

#include <cmath>
#include <sstream>

namespace bavae {

void ScheduleSpec::validate(const char* what) const {
  if (iteration_threshold < 1) {
    throw std::invalid_argument(std::string(what) + ".iteration_threshold must be >= 1");
  }
  if (!std::isfinite(start_value) || !std::isfinite(end_value)) {
    throw std::invalid_argument(std::string(what) + " values must be finite");
  }
}

double schedule_value(const ScheduleSpec& spec, std::int64_t step) {
  if (step <= 0) return spec.start_value;
  if (step >= spec.iteration_threshold) return spec.end_value;
  const double t = static_cast<double>(step) / static_cast<double>(spec.iteration_threshold);
  return spec.start_value + (spec.end_value - spec.start_value) * t;
}

const char* to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::elbo: return "elbo";
    case ObjectiveKind::beta: return "beta";
    case ObjectiveKind::bottleneck: return "bottleneck";
    case ObjectiveKind::beta_annealed: return "beta_annealed";
  }
  return "?";
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
  for (auto k : {ObjectiveKind::elbo, ObjectiveKind::beta, ObjectiveKind::bottleneck, ObjectiveKind::beta_annealed}) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("objective.kind: unknown objective '" + name + "'");
}

void ObjectiveConfig::validate() const {
  switch (kind) {
    case ObjectiveKind::elbo:
      break;
    case ObjectiveKind::beta:
      if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("objective.beta must be >= 0");
      break;
    case ObjectiveKind::bottleneck:
      if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("objective.gamma must be >= 0");
      c_schedule.validate("objective.c_schedule");
      if (c_schedule.start_value < 0.0 || c_schedule.end_value < 0.0) {
        throw std::invalid_argument("objective.c_schedule values must be >= 0");
      }
      break;
    case ObjectiveKind::beta_annealed:
      beta_schedule.validate("objective.beta_schedule");
      if (beta_schedule.start_value < 0.0 || beta_schedule.end_value < 0.0) {
        throw std::invalid_argument("objective.beta_schedule values must be >= 0");
      }
      break;
  }
}

namespace {

struct Terms {
  double distortion = 0.0;
  double rate = 0.0;
  std::vector<double> per_dim;
};

void check_shapes(const LossInputs& in) {
  if (in.x.rows() != in.reconstruction.rows() || in.x.cols() != in.reconstruction.cols()) {
    throw std::invalid_argument("observation and reconstruction shapes differ");
  }
  if (in.q.batch() != in.x.cols()) throw std::invalid_argument("posterior batch size differs from observations");
  if (in.x.cols() == 0) throw std::invalid_argument("empty batch");
}

Terms compute_terms(const LossInputs& in) {
  check_shapes(in);
  const Eigen::Index batch = in.x.cols();
  const Eigen::Index pixels = in.x.rows();
  Terms t;
  for (Eigen::Index b = 0; b < batch; ++b) {
    t.distortion -= reconstruction_log_likelihood({in.x.col(b).data(), static_cast<std::size_t>(pixels)},
                                                  {in.reconstruction.col(b).data(), static_cast<std::size_t>(pixels)},
                                                  in.likelihood);
  }
  const Eigen::MatrixXd kl = kl_per_dim(in.q);
  const Eigen::VectorXd per_dim = kl.rowwise().sum() / static_cast<double>(batch);
  t.distortion /= static_cast<double>(batch);
  t.per_dim.assign(per_dim.data(), per_dim.data() + per_dim.size());
  t.rate = kl.sum() / static_cast<double>(batch);
  return t;
}

LossBreakdown finish(Terms t, double total, double hyper) {
  if (!std::isfinite(total)) {
    std::ostringstream msg;
    msg << "non-finite loss (distortion=" << t.distortion << ", rate=" << t.rate << ")";
    throw NonFiniteLoss(-1, msg.str());
  }
  LossBreakdown out;
  out.total = total;
  out.distortion_term = t.distortion;
  out.rate_term = t.rate;
  out.effective_hyperparameter = hyper;
  out.per_dim_kl = std::move(t.per_dim);
  return out;
}

}  // namespace

LossBreakdown elbo_loss(const LossInputs& in) {
  Terms t = compute_terms(in);
  const double total = t.distortion + t.rate;
  return finish(std::move(t), total, 1.0);
}

LossBreakdown beta_loss(const LossInputs& in, double beta) {
  Terms t = compute_terms(in);
  const double total = t.distortion + beta * t.rate;
  return finish(std::move(t), total, beta);
}

LossBreakdown bottleneck_loss(const LossInputs& in, double gamma, double c) {
  Terms t = compute_terms(in);
  const double total = t.distortion + gamma * std::abs(t.rate - c);
  return finish(std::move(t), total, c);
}

double effective_hyperparameter(const ObjectiveConfig& config, std::int64_t step) {
  switch (config.kind) {
    case ObjectiveKind::elbo: return 1.0;
    case ObjectiveKind::beta: return config.beta;
    case ObjectiveKind::bottleneck: return schedule_value(config.c_schedule, step);
    case ObjectiveKind::beta_annealed: return schedule_value(config.beta_schedule, step);
  }
  return 1.0;
}

LossBreakdown step_loss(const ObjectiveConfig& config, std::int64_t step, const LossInputs& in) {
  const double hyper = effective_hyperparameter(config, step);
  try {
    switch (config.kind) {
      case ObjectiveKind::elbo: return elbo_loss(in);
      case ObjectiveKind::beta:
      case ObjectiveKind::beta_annealed: return beta_loss(in, hyper);
      case ObjectiveKind::bottleneck: return bottleneck_loss(in, config.gamma, hyper);
    }
  } catch (const NonFiniteLoss& e) {
    throw NonFiniteLoss(step, "step " + std::to_string(step) + ": " + e.what());
  }
  throw std::logic_error("unreachable objective kind");
}

double rate_weight(const ObjectiveConfig& config, std::int64_t step, double rate) {
  const double hyper = effective_hyperparameter(config, step);
  switch (config.kind) {
    case ObjectiveKind::elbo: return 1.0;
    case ObjectiveKind::beta:
    case ObjectiveKind::beta_annealed: return hyper;
    case ObjectiveKind::bottleneck:
      if (rate > hyper) return config.gamma;
      if (rate < hyper) return -config.gamma;
      return 0.0;
  }
  return 1.0;
}

LossGradient loss_gradient(const LossInputs& in, double rate_weight) {
  check_shapes(in);
  const Eigen::Index batch = in.x.cols();
  const Eigen::Index pixels = in.x.rows();
  const double inv_batch = 1.0 / static_cast<double>(batch);
  LossGradient g;
  g.d_reconstruction.resize(pixels, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto grad = reconstruction_log_likelihood_gradient(
        {in.x.col(b).data(), static_cast<std::size_t>(pixels)},
        {in.reconstruction.col(b).data(), static_cast<std::size_t>(pixels)}, in.likelihood);
    for (Eigen::Index p = 0; p < pixels; ++p) g.d_reconstruction(p, b) = -grad[static_cast<std::size_t>(p)] * inv_batch;
  }
  kl_gradient(in.q, g.d_mean, g.d_log_var);
  g.d_mean *= rate_weight * inv_batch;
  g.d_log_var *= rate_weight * inv_batch;
  return g;
}

}  // namespace bavae
