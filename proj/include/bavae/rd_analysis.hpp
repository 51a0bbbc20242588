#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bavae/datasets.hpp"
#include "bavae/models.hpp"
#include "bavae/objectives.hpp"
#include "bavae/trainer.hpp"

namespace bavae {

enum class HyperKind { beta, c };

const char* to_string(HyperKind kind);
HyperKind hyper_kind_from_string(const std::string& name);

struct RDPoint {
  HyperKind hyper_kind = HyperKind::beta;
  double hyper_value = 0.0;
  double rate = 0.0;
  double distortion = 0.0;
  double elbo = 0.0;
  std::uint64_t seed = 0;
};

struct RDMeasurement {
  double rate = 0.0;
  double distortion = 0.0;
  double elbo = 0.0;
};

/// Dataset means over `indices` (all images when empty): closed-form KL for
/// the rate, negative reconstruction log-likelihood averaged over
/// eval_samples reparametrized draws for the distortion.
RDMeasurement measure_rd(const ModelParameters& params, const ImageSet& images, std::span<const std::size_t> indices,
                         int eval_samples = 8, std::uint64_t noise_seed = 0);

/// Informational bound check. For a finite dataset of distinct images the
/// empirical data entropy is log N, used as the entropy proxy.
struct SandwichCheck {
  double entropy_upper_proxy = 0.0;
  double rate = 0.0;
  double h_minus_d = 0.0;
  bool consistent = false;  // h_minus_d <= rate
};

SandwichCheck sandwich_check(const RDMeasurement& m, std::size_t dataset_size);

struct SweepSpec {
  HyperKind kind = HyperKind::beta;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  ArchitectureConfig model;
  /// Template objective; only gamma is read for kind c.
  ObjectiveConfig objective;
  TrainConfig train;
  double heldout_fraction = 0.1;
  std::uint64_t split_seed = 0;
  int eval_samples = 8;
  int workers = 1;
};

struct SweepFailure {
  double hyper_value = 0.0;
  std::uint64_t seed = 0;
  std::string message;
};

struct SweepResult {
  std::vector<RDPoint> points;
  std::vector<SweepFailure> failures;
};

/// Objective used for one sweep cell: constant beta, or bottleneck with a
/// constant capacity C and spec.objective.gamma.
ObjectiveConfig sweep_objective(const SweepSpec& spec, double value);

/// Trains one model per (value, seed) on the training split, with model and
/// training seeds both set to the cell seed, and measures RD on the held-out
/// split. Failed cells are reported and skipped. Points come back ordered by
/// (value, seed) regardless of worker count.
SweepResult sweep(const SweepSpec& spec, const ImageSet& images,
                  const std::function<void(const RDPoint&)>& on_point = {});

struct Lemma1Violation {
  double lower_value = 0.0;
  double higher_value = 0.0;
  std::string quantity;  // "rate" or "distortion"
  double lower = 0.0;    // quantity at lower_value
  double higher = 0.0;   // quantity at higher_value
};

struct Lemma1Report {
  HyperKind kind = HyperKind::beta;
  bool holds = false;
  /// Per hyperparameter value (ascending): median over seeds.
  std::vector<double> values;
  std::vector<double> median_rate;
  std::vector<double> median_distortion;
  std::vector<Lemma1Violation> violations;
};

/// Rate must strictly decrease and distortion strictly increase in beta
/// (the reverse in C), checked on every pair of distinct values using
/// per-value medians over seeds.
Lemma1Report check_lemma1(const std::vector<RDPoint>& points);

std::string format_lemma1_report(const Lemma1Report& report);

/// kind,value,seed,rate,distortion,elbo
void write_rd_table(const std::filesystem::path& path, const std::vector<RDPoint>& points);
std::vector<RDPoint> read_rd_table(const std::filesystem::path& path);

}  // namespace bavae
