#include "bavae/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace bavae {

namespace {

void check_finite(double mean, double log_var, std::size_t dim) {
  if (!std::isfinite(mean) || !std::isfinite(log_var)) {
    std::ostringstream msg;
    msg << "posterior dimension " << dim << " is not finite (mean=" << mean << ", log_var=" << log_var << ")";
    throw std::invalid_argument(msg.str());
  }
}

double kl_term(double mean, double log_var) {
  // expm1 keeps the small-variance-deviation regime exact enough that the term stays >= 0.
  const double value = 0.5 * (mean * mean + std::expm1(log_var) - log_var);
  return value < 0.0 ? 0.0 : value;
}

// Each log argument is floored at the clamp, so a saturated mean on the correct side still scores exactly 0.
double safe_log(double p) { return std::log(std::max(p, kBernoulliClamp)); }

}  // namespace

LatentPosterior PosteriorBatch::column(Eigen::Index b) const {
  LatentPosterior q;
  q.mean.assign(mean.col(b).data(), mean.col(b).data() + mean.rows());
  q.log_var.assign(log_var.col(b).data(), log_var.col(b).data() + log_var.rows());
  return q;
}

void LikelihoodSpec::validate() const {
  if (family == LikelihoodFamily::gaussian && !(gaussian_variance > 0.0)) {
    throw std::invalid_argument("gaussian_variance must be positive");
  }
}

const char* to_string(LikelihoodFamily family) {
  return family == LikelihoodFamily::bernoulli ? "bernoulli" : "gaussian";
}

LikelihoodFamily likelihood_family_from_string(const std::string& name) {
  if (name == "bernoulli") return LikelihoodFamily::bernoulli;
  if (name == "gaussian") return LikelihoodFamily::gaussian;
  throw std::invalid_argument("unknown likelihood family '" + name + "'");
}

KlDivergence kl_to_standard_normal(const LatentPosterior& q) {
  if (q.mean.size() != q.log_var.size()) {
    throw std::invalid_argument("posterior mean and log_var lengths differ");
  }
  KlDivergence kl;
  kl.per_dim.resize(q.dim());
  for (std::size_t i = 0; i < q.dim(); ++i) {
    check_finite(q.mean[i], q.log_var[i], i);
    kl.per_dim[i] = kl_term(q.mean[i], q.log_var[i]);
    kl.total += kl.per_dim[i];
  }
  return kl;
}

Eigen::MatrixXd kl_per_dim(const PosteriorBatch& q) {
  if (q.mean.rows() != q.log_var.rows() || q.mean.cols() != q.log_var.cols()) {
    throw std::invalid_argument("posterior mean and log_var shapes differ");
  }
  Eigen::MatrixXd out(q.mean.rows(), q.mean.cols());
  for (Eigen::Index b = 0; b < q.mean.cols(); ++b) {
    for (Eigen::Index i = 0; i < q.mean.rows(); ++i) {
      check_finite(q.mean(i, b), q.log_var(i, b), static_cast<std::size_t>(i));
      out(i, b) = kl_term(q.mean(i, b), q.log_var(i, b));
    }
  }
  return out;
}

void kl_gradient(const PosteriorBatch& q, Eigen::MatrixXd& d_mean, Eigen::MatrixXd& d_log_var) {
  d_mean = q.mean;
  d_log_var = 0.5 * q.log_var.array().unaryExpr([](double v) { return std::expm1(v); });
}

std::vector<double> reparam_sample(const LatentPosterior& q, std::span<const double> noise) {
  if (noise.size() != q.dim() || q.log_var.size() != q.dim()) {
    throw std::invalid_argument("noise length does not match posterior dimension");
  }
  std::vector<double> z(q.dim());
  for (std::size_t i = 0; i < q.dim(); ++i) {
    z[i] = q.mean[i] + std::exp(0.5 * q.log_var[i]) * noise[i];
  }
  return z;
}

Eigen::MatrixXd reparam_sample(const PosteriorBatch& q, const Eigen::MatrixXd& noise) {
  if (noise.rows() != q.mean.rows() || noise.cols() != q.mean.cols()) {
    throw std::invalid_argument("noise shape does not match posterior batch");
  }
  return q.mean.array() + (0.5 * q.log_var.array()).exp() * noise.array();
}

double reconstruction_log_likelihood(std::span<const double> x, std::span<const double> decoder_output,
                                     const LikelihoodSpec& spec) {
  if (x.size() != decoder_output.size()) {
    throw std::invalid_argument("observation and decoder output sizes differ");
  }
  double total = 0.0;
  if (spec.family == LikelihoodFamily::bernoulli) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::isnan(decoder_output[i])) throw std::invalid_argument("decoder output contains NaN");
      const double m = decoder_output[i];
      if (x[i] > 0.0) total += x[i] * safe_log(m);
      if (x[i] < 1.0) total += (1.0 - x[i]) * safe_log(1.0 - m);
    }
  } else {
    spec.validate();
    const double log_norm = std::log(2.0 * std::numbers::pi * spec.gaussian_variance);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::isnan(decoder_output[i])) throw std::invalid_argument("decoder output contains NaN");
      const double r = x[i] - decoder_output[i];
      total += -0.5 * (r * r / spec.gaussian_variance + log_norm);
    }
  }
  return total;
}

std::vector<double> reconstruction_log_likelihood_gradient(std::span<const double> x,
                                                           std::span<const double> decoder_output,
                                                           const LikelihoodSpec& spec) {
  if (x.size() != decoder_output.size()) {
    throw std::invalid_argument("observation and decoder output sizes differ");
  }
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = decoder_output[i];
    if (spec.family == LikelihoodFamily::bernoulli) {
      if (m < kBernoulliClamp || m > 1.0 - kBernoulliClamp) {
        grad[i] = 0.0;
      } else {
        grad[i] = x[i] / m - (1.0 - x[i]) / (1.0 - m);
      }
    } else {
      grad[i] = (x[i] - m) / spec.gaussian_variance;
    }
  }
  return grad;
}

}  // namespace bavae
