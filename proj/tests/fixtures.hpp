// Constructed inputs shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "bavae/datasets.hpp"
#include "bavae/metrics.hpp"
#include "bavae/models.hpp"
#include "bavae/trainer.hpp"

namespace fixtures {

inline bavae::FactorTable full_grid(const std::vector<int>& sizes) {
  bavae::FactorTable t;
  t.sizes = sizes;
  for (std::size_t k = 0; k < sizes.size(); ++k) t.names.push_back("f" + std::to_string(k));
  std::size_t n = 1;
  for (int s : sizes) n *= static_cast<std::size_t>(s);
  t.values.resize(n * sizes.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rest = i;
    for (std::size_t k = sizes.size(); k-- > 0;) {
      t.values[i * sizes.size() + k] = static_cast<int>(rest % static_cast<std::size_t>(sizes[k]));
      rest /= static_cast<std::size_t>(sizes[k]);
    }
  }
  return t;
}

inline bavae::FactorTable random_rows(const std::vector<int>& sizes, std::size_t n, std::uint64_t seed) {
  bavae::FactorTable t;
  t.sizes = sizes;
  for (std::size_t k = 0; k < sizes.size(); ++k) t.names.push_back("f" + std::to_string(k));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i)
    for (int s : sizes) t.values.push_back(std::uniform_int_distribution<int>(0, s - 1)(rng));
  return t;
}

/// One latent per factor through a strictly increasing nonlinear embedding.
inline bavae::FactorCodes ideal_codes(const bavae::FactorTable& t) {
  bavae::FactorCodes fc;
  fc.factors = t;
  const auto k = static_cast<Eigen::Index>(t.num_factors());
  fc.codes.resize(static_cast<Eigen::Index>(t.rows()), k);
  for (std::size_t n = 0; n < t.rows(); ++n)
    for (Eigen::Index j = 0; j < k; ++j) {
      const double v = t.at(n, static_cast<std::size_t>(j)) / std::max(1.0, t.sizes[j] - 1.0);
      fc.codes(static_cast<Eigen::Index>(n), j) = 2.0 * v + 0.3 * std::sin(v);
    }
  return fc;
}

inline bavae::FactorCodes noise_codes(const bavae::FactorTable& t, Eigen::Index latents, std::uint64_t seed) {
  bavae::FactorCodes fc;
  fc.factors = t;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  fc.codes.resize(static_cast<Eigen::Index>(t.rows()), latents);
  for (Eigen::Index i = 0; i < fc.codes.size(); ++i) fc.codes.data()[i] = normal(rng);
  return fc;
}

/// Two Gaussian clusters separated by a wide margin in 4 dimensions.
inline bavae::FactorCodes separable_two_class(std::size_t n, std::uint64_t seed) {
  bavae::FactorCodes fc;
  fc.factors.sizes = {2};
  fc.factors.names = {"label"};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  fc.codes.resize(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    fc.factors.values.push_back(y);
    for (Eigen::Index j = 0; j < 4; ++j) fc.codes(static_cast<Eigen::Index>(i), j) = normal(rng) + (y ? 4.0 : -4.0);
  }
  return fc;
}

/// Balanced labels drawn independently of Gaussian codes.
inline bavae::FactorCodes independent_labels(std::size_t n, int classes, Eigen::Index latents, std::uint64_t seed) {
  bavae::FactorCodes fc;
  fc.factors.sizes = {classes};
  fc.factors.names = {"label"};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  fc.codes.resize(static_cast<Eigen::Index>(n), latents);
  for (Eigen::Index i = 0; i < fc.codes.size(); ++i) fc.codes.data()[i] = normal(rng);
  for (std::size_t i = 0; i < n; ++i) fc.factors.values.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
  std::shuffle(fc.factors.values.begin(), fc.factors.values.end(), rng);
  return fc;
}

/// The 2-pixel, two-latent model used for finite-difference checks.
inline bavae::ArchitectureConfig toy_config(bavae::LikelihoodFamily family, std::uint64_t seed) {
  bavae::ArchitectureConfig c;
  c.image_side = 1;
  c.channels = 2;
  c.latent_dim = 2;
  c.conv_widths = {};
  c.fc_width = 5;
  c.seed = seed;
  c.likelihood.family = family;
  return c;
}

template <typename T>
Eigen::VectorXd flatten(const bavae::BasicModelParameters<T>& p) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(p.parameter_count()));
  Eigen::Index o = 0;
  for (const auto& t : p.tensors) {
    v.segment(o, t.value.size()) = Eigen::Map<const bavae::Matrix<T>>(t.value.data(), t.value.size(), 1).template cast<double>();
    o += t.value.size();
  }
  return v;
}

inline void unflatten(const Eigen::VectorXd& v, bavae::BasicModelParameters<double>& p) {
  Eigen::Index o = 0;
  for (auto& t : p.tensors) {
    t.value = Eigen::Map<const Eigen::MatrixXd>(v.data() + o, t.value.rows(), t.value.cols());
    o += t.value.size();
  }
}

/// Desk-scale model and training settings used by the ordering experiments.
inline bavae::TrainConfig desk_train(std::uint64_t seed) {
  bavae::TrainConfig t;
  t.steps = 3000;
  t.batch_size = 64;
  t.learning_rate = 1e-3;
  t.seed = seed;
  t.log_every = 25;
  return t;
}

}  // namespace fixtures
