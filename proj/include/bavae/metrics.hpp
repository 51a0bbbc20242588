#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bavae/datasets.hpp"

namespace bavae {

/// Posterior-mean codes (N x L) paired with ground-truth factors (N x K).
struct FactorCodes {
  Eigen::MatrixXd codes;
  FactorTable factors;

  std::size_t size() const { return static_cast<std::size_t>(codes.rows()); }
  Eigen::Index latent_dim() const { return codes.cols(); }
  /// Row counts agree, codes are finite, factors are in range.
  void validate() const;
  FactorCodes subset(std::span<const std::size_t> rows) const;
};

/// Multinomial logistic regression on standardized features, fit by
/// full-batch Adam with a small L2 penalty.
class LinearClassifier {
 public:
  struct Options {
    int iterations = 400;
    double learning_rate = 0.05;
    double l2 = 1e-4;
  };

  LinearClassifier() = default;
  explicit LinearClassifier(Options options) : options_(options) {}

  void fit(const Eigen::MatrixXd& features, std::span<const int> labels, int n_classes);
  std::vector<int> predict(const Eigen::MatrixXd& features) const;
  double accuracy(const Eigen::MatrixXd& features, std::span<const int> labels) const;

 private:
  Options options_;
  Eigen::RowVectorXd mean_;
  Eigen::RowVectorXd scale_;
  Eigen::MatrixXd weights_;  // (features + 1) x classes, last row is the bias
};

struct BetaVaeOptions {
  std::size_t n_train = 10000;
  std::size_t n_eval = 5000;
  std::size_t batch_per_vote = 64;
};

struct FactorVaeOptions {
  std::size_t n_train = 10000;
  std::size_t n_eval = 5000;
  std::size_t batch_size = 64;
};

struct DciOptions {
  int n_trees = 50;
  int max_depth = 3;
  double learning_rate = 0.1;
  int split_bins = 32;
};

/// Votes are built from pairs sharing one factor (each pair draws its own
/// value); features are mean absolute code differences.
double beta_vae_score(const FactorCodes& fc, const BetaVaeOptions& options, std::uint64_t seed);

/// Codes are scaled by their full-set standard deviation; dimensions with
/// std < 1e-6 are excluded. Each vote maps the lowest-variance dimension
/// within a fixed-factor batch to that factor.
double factor_vae_score(const FactorCodes& fc, const FactorVaeOptions& options, std::uint64_t seed);

/// Equal-count bin index per example. Tied values share a bin; the result
/// depends only on the ordering of `values`.
std::vector<int> quantile_bins(std::span<const double> values, int n_bins);

/// Plug-in mutual information (nats) between two discrete label vectors.
double discrete_mutual_information(std::span<const int> a, std::span<const int> b);
double discrete_entropy(std::span<const int> a);

/// L x K matrix of discrete MI between binned codes and factors.
Eigen::MatrixXd mutual_information_matrix(const FactorCodes& fc, int n_bins);

double mig(const FactorCodes& fc, int n_bins = 20);
double modularity(const FactorCodes& fc, int n_bins = 20);

/// L x K importances of gradient-boosted regression trees, one model per
/// factor, each column summing to 1 (or 0 when nothing was split).
Eigen::MatrixXd dci_importance(const FactorCodes& fc, const DciOptions& options = {});
double dci_disentanglement(const FactorCodes& fc, const DciOptions& options = {});

/// L x K held-out R^2 of single-dimension linear fits, clamped to [0, 1].
Eigen::MatrixXd sap_score_matrix(const FactorCodes& fc, double test_fraction, std::uint64_t seed);
double sap(const FactorCodes& fc, double test_fraction = 0.3, std::uint64_t seed = 0);

struct ProbeResult {
  double accuracy = 0.0;
  std::size_t n_test = 0;
  /// Test labels never seen in training; their examples count as errors.
  std::vector<int> unseen_labels;
};

/// Train/test codes with label column 0 of the factor table.
ProbeResult linear_probe(const FactorCodes& train, const FactorCodes& test,
                         const LinearClassifier::Options& options = {});

struct MetricConfig {
  std::uint64_t seed = 0;
  BetaVaeOptions beta_vae;
  FactorVaeOptions factor_vae;
  int n_bins = 20;
  DciOptions dci;
  double sap_test_fraction = 0.3;
  /// MIG, modularity, DCI and SAP run on a seeded subsample of this size.
  std::size_t max_points = 10000;
};

struct MetricReport {
  double beta_vae_score = 0.0;
  double factor_vae_score = 0.0;
  double mig = 0.0;
  double dci_disentanglement = 0.0;
  double modularity = 0.0;
  double sap = 0.0;
  std::optional<double> probe_accuracy;
  MetricConfig config;
  std::size_t n_examples = 0;
};

MetricReport compute_metrics(const FactorCodes& fc, const MetricConfig& config);

/// key,value lines: every score followed by every hyperparameter used.
void write_metric_report(const std::filesystem::path& path, const MetricReport& report);

}  // namespace bavae
