#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace bavae {

/// N single- or multi-channel square images with 8-bit intensities; pixel
/// values in [0,1] are stored as value * 255.
struct ImageSet {
  int channels = 1;
  int side = 0;
  std::vector<std::uint8_t> data;

  std::size_t size() const;
  int pixels_per_image() const { return channels * side * side; }
  float pixel(std::size_t n, int p) const { return data[n * pixels_per_image() + p] / 255.0f; }
  std::span<const std::uint8_t> image(std::size_t n) const;

  /// Columns are the requested images (P x B), values in [0,1].
  Eigen::MatrixXf batch(std::span<const std::size_t> indices) const;
};

/// Discrete ground-truth factors, row-major N x K.
struct FactorTable {
  std::vector<int> values;
  std::vector<int> sizes;
  std::vector<std::string> names;

  std::size_t rows() const { return sizes.empty() ? 0 : values.size() / sizes.size(); }
  std::size_t num_factors() const { return sizes.size(); }
  int at(std::size_t n, std::size_t k) const { return values[n * sizes.size() + k]; }

  /// Checks value ranges; throws std::invalid_argument.
  void validate() const;
  /// True when every factor tuple appears exactly once.
  bool is_full_grid() const;
  FactorTable subset(std::span<const std::size_t> indices) const;
};

struct FactorDataset {
  ImageSet images;
  FactorTable factors;
};

struct LabeledImageSet {
  ImageSet images;
  std::vector<int> labels;
  int n_classes = 0;
  std::vector<std::string> class_names;
};

/// Layout of a dSprites-style archive: an .npz holding `imgs` (N x side x side,
/// uint8 in {0,1}) and `latents_classes` (N x columns, int64).
struct FactorArchiveLayout {
  int side = 64;
  std::vector<std::string> column_names;
  std::vector<int> column_sizes;
  /// Columns with a single value are dropped from the resulting factor table.
  bool drop_constant_columns = true;

  static FactorArchiveLayout dsprites();
  std::size_t expected_count() const;
};

/// Reads the published dSprites archive (737280 images, factors shape/scale/
/// orientation/posX/posY; the single-valued color column is dropped).
FactorDataset load_dsprites(const std::filesystem::path& path);
FactorDataset load_factor_archive(const std::filesystem::path& path, const FactorArchiveLayout& layout);

/// White axis-aligned (or rotated, for a fourth factor) square on black.
/// Factor order: posX, posY, scale[, rotation]. Rendering is deterministic;
/// the seed is recorded but no randomness is involved.
FactorDataset generate_synthetic(int side, const std::vector<int>& factor_sizes, std::uint64_t seed = 0);

void save_dataset_cache(const std::filesystem::path& path, const FactorDataset& ds);
FactorDataset load_dataset_cache(const std::filesystem::path& path);

/// `<root>/<class>/<image>` layout; classes in sorted directory order, files
/// sorted by name, grayscale resized to image_side.
LabeledImageSet load_labeled_folder(const std::filesystem::path& root, int image_side);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// Disjoint, covering, reproducible split. The held-out part gets
/// round(n * heldout_fraction) examples.
Split split_indices(std::size_t n, double heldout_fraction, std::uint64_t seed);

struct FactorPairs {
  int factor = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

struct FactorGroup {
  int factor = 0;
  int value = 0;
  std::vector<std::size_t> indices;
};

/// Draws examples that share the value of one factor. Factors with a single
/// value are never fixed.
class FactorConditionalSampler {
 public:
  FactorConditionalSampler(const FactorTable& factors, std::uint64_t seed);

  const std::vector<int>& eligible_factors() const { return eligible_; }

  /// One factor chosen uniformly; each pair draws its own shared value.
  FactorPairs sample_pairs(std::size_t n_pairs);
  /// One factor and one of its values chosen uniformly; `count` examples
  /// drawn with replacement from that group.
  FactorGroup sample_group(std::size_t count);

 private:
  int draw_factor();
  int draw_value(int factor);
  std::size_t draw_member(int factor, int value);

  std::vector<std::vector<std::vector<std::size_t>>> groups_;  // [factor][value] -> indices
  std::vector<std::vector<int>> values_;                       // observed values per factor
  std::vector<int> eligible_;
  std::mt19937_64 rng_;
};

}  // namespace bavae
