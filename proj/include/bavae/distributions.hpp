#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bavae {

/// Diagonal Gaussian q(z|x) for one example.
struct LatentPosterior {
  std::vector<double> mean;
  std::vector<double> log_var;

  std::size_t dim() const { return mean.size(); }
};

/// Posteriors for a minibatch, one example per column (L x B).
struct PosteriorBatch {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd log_var;

  Eigen::Index dim() const { return mean.rows(); }
  Eigen::Index batch() const { return mean.cols(); }
  LatentPosterior column(Eigen::Index b) const;
};

/// The prior is always N(0, I); only its dimension is configurable.
struct PriorSpec {
  std::size_t dimension = 0;
};

enum class LikelihoodFamily { bernoulli, gaussian };

struct LikelihoodSpec {
  LikelihoodFamily family = LikelihoodFamily::bernoulli;
  double gaussian_variance = 1.0;

  void validate() const;
  bool operator==(const LikelihoodSpec&) const = default;
};

const char* to_string(LikelihoodFamily family);
LikelihoodFamily likelihood_family_from_string(const std::string& name);

/// Bernoulli means are clamped to [kBernoulliClamp, 1 - kBernoulliClamp] before the log.
inline constexpr double kBernoulliClamp = 1e-6;

struct KlDivergence {
  double total = 0.0;
  std::vector<double> per_dim;
};

/// Closed-form KL(q || N(0, I)). Throws std::invalid_argument naming the
/// first non-finite dimension.
KlDivergence kl_to_standard_normal(const LatentPosterior& q);

/// Per-dimension KL for a batch (L x B). Same validation as above.
Eigen::MatrixXd kl_per_dim(const PosteriorBatch& q);

/// d KL / d mean and d KL / d log_var, elementwise (same shape as q).
void kl_gradient(const PosteriorBatch& q, Eigen::MatrixXd& d_mean, Eigen::MatrixXd& d_log_var);

/// mean + exp(log_var / 2) * noise. The noise is supplied by the caller.
std::vector<double> reparam_sample(const LatentPosterior& q, std::span<const double> noise);
Eigen::MatrixXd reparam_sample(const PosteriorBatch& q, const Eigen::MatrixXd& noise);

/// Sum over pixels of log p(x | decoder_output).
double reconstruction_log_likelihood(std::span<const double> x, std::span<const double> decoder_output,
                                     const LikelihoodSpec& spec);

/// Gradient of reconstruction_log_likelihood with respect to decoder_output.
/// Zero where a Bernoulli mean is clamped.
std::vector<double> reconstruction_log_likelihood_gradient(std::span<const double> x,
                                                           std::span<const double> decoder_output,
                                                           const LikelihoodSpec& spec);

}  // namespace bavae
