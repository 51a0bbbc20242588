#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bavae/rd_analysis.hpp"
#include "bavae/trainer.hpp"

namespace bavae {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool markers_only = false;
  int width = 720;
  int height = 440;
};

/// Minimal SVG line/scatter chart with linear axes and a legend.
void write_svg_chart(const std::filesystem::path& path, const ChartSpec& spec, const std::vector<Series>& series);

/// KL per latent dimension against step.
void write_kl_plot(const std::filesystem::path& path, const TrainingLog& log);

/// ELBO and distortion against the logged hyperparameter.
void write_hyper_plot(const std::filesystem::path& path, const TrainingLog& log);

/// Distortion against rate, one series per hyperparameter value.
void write_rd_scatter(const std::filesystem::path& path, const std::vector<RDPoint>& points);

/// Per-value medians of ELBO and distortion against the swept hyperparameter.
void write_sweep_plot(const std::filesystem::path& path, const Lemma1Report& report);

/// Rows are latent dimensions, columns grid values. Rows flagged dead are
/// blended towards mid grey. Single-channel models only.
void write_traversal_png(const std::filesystem::path& path, const Traversals& t, int side,
                         const std::vector<bool>& dead);

/// Little-endian float64 .npy array with the given C-order shape.
void write_npy(const std::filesystem::path& path, const std::vector<double>& data, const std::vector<std::size_t>& shape);

}  // namespace bavae
