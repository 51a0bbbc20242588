#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bavae/datasets.hpp"
#include "bavae/models.hpp"
#include "bavae/objectives.hpp"

namespace bavae {

struct TrainConfig {
  std::int64_t steps = 3000;
  std::int64_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::int64_t log_every = 25;
  std::int64_t checkpoint_every = 1000;

  void validate() const;
};

/// One logged minibatch. `step` is the 0-based optimizer step whose
/// minibatch produced the values (measured before that update).
struct LogRecord {
  std::int64_t step = 0;
  double total = 0.0;
  double distortion = 0.0;
  double rate = 0.0;
  double hyper = 0.0;
  std::vector<double> per_dim_kl;
  double elbo = 0.0;

  bool operator==(const LogRecord&) const = default;
};

struct TrainingLog {
  std::vector<LogRecord> records;

  bool operator==(const TrainingLog&) const = default;
};

struct TrainResult {
  ModelParameters params;
  TrainingLog log;
};

/// Raised when a minibatch loss is not finite; carries the last finite record.
class TrainingDiverged : public NonFiniteLoss {
 public:
  TrainingDiverged(std::int64_t step, const std::string& what, std::optional<LogRecord> last)
      : NonFiniteLoss(step, what), last_finite_(std::move(last)) {}
  const std::optional<LogRecord>& last_finite() const { return last_finite_; }

 private:
  std::optional<LogRecord> last_finite_;
};

struct TrainHooks {
  /// Called after every checkpoint_every completed updates with the update count.
  std::function<void(const ModelParameters&, std::int64_t)> on_checkpoint;
  /// Called for every appended log record.
  std::function<void(const LogRecord&)> on_log;
};

/// Adam on shuffled minibatches drawn from `indices` (all images when empty).
/// Model init uses model.seed; batching and reparametrization noise use train.seed.
TrainResult train(const ArchitectureConfig& model, const ObjectiveConfig& objective, const TrainConfig& train,
                  const ImageSet& images, std::span<const std::size_t> indices = {}, const TrainHooks& hooks = {});

/// Per record, the number of latent dimensions whose KL exceeds threshold_nats.
std::vector<int> active_dimensions(const TrainingLog& log, double threshold_nats = 0.05);

/// Centered running median with the given odd window (shrunk at the ends).
std::vector<double> median_smooth(std::span<const int> values, int window);

/// Decoded frames for every latent dimension swept over `grid`, with other
/// coordinates at the posterior mean of `image`. per_dim[d] is P x |grid|.
struct Traversals {
  std::vector<double> grid;
  std::vector<double> posterior_mean;
  std::vector<Eigen::MatrixXd> per_dim;
};

Traversals emit_traversals(const ModelParameters& params, const Eigen::VectorXf& image,
                           const std::vector<double>& grid);

/// linspace(-2, 2, 11).
std::vector<double> default_traversal_grid();

/// Newline-delimited JSON, fields step,total,distortion,rate,hyper,per_dim_kl,elbo.
void write_training_log(const std::filesystem::path& path, const TrainingLog& log);
TrainingLog read_training_log(const std::filesystem::path& path);

}  // namespace bavae
