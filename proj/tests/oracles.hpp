// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library code it is used to check.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// E_q[log q(z) - log N(z; 0, I)] by direct sampling from the diagonal Gaussian q.
inline MonteCarloEstimate monte_carlo_kl(std::span<const double> mean, std::span<const double> log_var,
                                         std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t d = 0; d < mean.size(); ++d) {
      const double sd = std::sqrt(std::exp(log_var[d]));
      const double eps = normal(rng);
      const double z = mean[d] + sd * eps;
      // log q(z) - log p(z); the 2*pi terms cancel.
      log_ratio += -0.5 * eps * eps - std::log(sd) + 0.5 * z * z;
    }
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  const double n = static_cast<double>(samples);
  const double m = sum / n;
  const double var = std::max(0.0, sum_sq / n - m * m);
  return {m, std::sqrt(var / (n - 1.0))};
}

/// Mutual information from the exhaustive joint distribution: every (a, b)
/// cell probability is computed by scanning all examples.
inline double exhaustive_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (int va : a) pa[va] = 0.0;
  for (int vb : b) pb[vb] = 0.0;
  for (auto& [va, p] : pa)
    for (int x : a) p += (x == va) / n;
  for (auto& [vb, p] : pb)
    for (int x : b) p += (x == vb) / n;
  double mi = 0.0;
  for (const auto& [va, p_a] : pa) {
    for (const auto& [vb, p_b] : pb) {
      double p = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) p += (a[i] == va && b[i] == vb) ? 1.0 : 0.0;
      p /= n;
      if (p > 0.0) mi += p * std::log(p / (p_a * p_b));
    }
  }
  return mi;
}

/// Central differences of f at x, one coordinate at a time.
inline Eigen::VectorXd central_differences(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                           double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + h;
    const double up = f(x);
    x(i) = orig - h;
    const double down = f(x);
    x(i) = orig;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

/// Binomial standard deviation of an accuracy measured on n trials.
inline double accuracy_sigma(double p, std::size_t n) { return std::sqrt(p * (1.0 - p) / static_cast<double>(n)); }

/// Modularity score from an MI matrix, written straight from the definition.
inline double modularity_from_mi(const Eigen::MatrixXd& m) {
  double total = 0.0;
  int rows = 0;
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    Eigen::Index top = 0;
    for (Eigen::Index k = 1; k < m.cols(); ++k)
      if (m(j, k) > m(j, top)) top = k;
    const double theta = m(j, top);
    if (theta <= 0.0) continue;
    double off = 0.0;
    for (Eigen::Index k = 0; k < m.cols(); ++k)
      if (k != top) off += m(j, k) * m(j, k);
    total += 1.0 - off / (theta * theta * static_cast<double>(m.cols() - 1));
    ++rows;
  }
  return total / rows;
}

}  // namespace oracle
