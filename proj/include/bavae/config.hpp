#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bavae/datasets.hpp"
#include "bavae/metrics.hpp"
#include "bavae/models.hpp"
#include "bavae/objectives.hpp"
#include "bavae/trainer.hpp"

namespace bavae {

enum class DatasetKind { synthetic, dsprites, cache, folder };

const char* to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& name);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synthetic;
  std::filesystem::path path;
  int side = 32;
  std::vector<int> factor_sizes{16, 16, 4};
  std::uint64_t seed = 0;
};

struct RdConfig {
  double heldout_fraction = 0.1;
  int eval_samples = 8;
  std::uint64_t split_seed = 0;
};

/// Sections dataset, model, objective, train, rd, metrics plus a top-level
/// output_dir key.
struct ExperimentConfig {
  DatasetConfig dataset;
  ArchitectureConfig model = ArchitectureConfig::desk();
  ObjectiveConfig objective;
  /// Whether objective.gamma was given in the file (C sweeps require it).
  bool gamma_explicit = false;
  TrainConfig train;
  RdConfig rd;
  MetricConfig metrics;
  std::filesystem::path output_dir;

  /// Checks every section and cross-section consistency.
  void validate() const;
};

/// INI text. Unknown sections or keys and malformed values are rejected with
/// the offending section.key in the message.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value; parse_config(format_config(c)) == c.
std::string format_config(const ExperimentConfig& config);

/// Loads the configured factor dataset (synthetic, dsprites or cache).
FactorDataset load_factor_dataset(const DatasetConfig& config);

}  // namespace bavae
