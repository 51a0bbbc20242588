#include "bavae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace bavae {

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("train.steps must be positive");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train.learning_rate must be positive");
  }
  if (log_every < 1) throw std::invalid_argument("train.log_every must be positive");
  if (log_every > steps) throw std::invalid_argument("train.log_every must not exceed train.steps");
  if (checkpoint_every < 1) throw std::invalid_argument("train.checkpoint_every must be positive");
}

namespace {

class Adam {
 public:
  Adam(const ModelParameters& like, double lr) : lr_(static_cast<float>(lr)), m_(like.zeros_like()), v_(m_) {}

  void step(ModelParameters& params, const ModelParameters& grads) {
    ++t_;
    const float c1 = 1.0f - std::pow(kBeta1, static_cast<float>(t_));
    const float c2 = 1.0f - std::pow(kBeta2, static_cast<float>(t_));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      auto& p = params.tensors[i].value;
      const auto& g = grads.tensors[i].value;
      auto& m = m_.tensors[i].value;
      auto& v = v_.tensors[i].value;
      m = kBeta1 * m + (1.0f - kBeta1) * g;
      v = kBeta2 * v + (1.0f - kBeta2) * g.cwiseProduct(g);
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }
  }

 private:
  static constexpr float kBeta1 = 0.9f;
  static constexpr float kBeta2 = 0.999f;
  static constexpr float kEps = 1e-8f;
  float lr_;
  std::int64_t t_ = 0;
  ModelParameters m_;
  ModelParameters v_;
};

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

}  // namespace

TrainResult train(const ArchitectureConfig& model, const ObjectiveConfig& objective, const TrainConfig& config,
                  const ImageSet& images, std::span<const std::size_t> indices, const TrainHooks& hooks) {
  model.validate();
  objective.validate();
  config.validate();
  if (images.channels != model.channels || images.side != model.image_side) {
    std::ostringstream msg;
    msg << "dataset images are " << images.channels << "x" << images.side << "x" << images.side
        << " but the model expects " << model.channels << "x" << model.image_side << "x" << model.image_side;
    throw std::invalid_argument(msg.str());
  }
  std::vector<std::size_t> order;
  if (indices.empty()) {
    order.resize(images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  } else {
    order.assign(indices.begin(), indices.end());
  }
  if (order.empty()) throw std::invalid_argument("training dataset is empty");

  Vae<float> vae(init_parameters(model));
  Adam adam(vae.parameters(), config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const auto batch = static_cast<std::size_t>(std::min<std::int64_t>(config.batch_size, order.size()));
  std::size_t cursor = order.size();

  TrainResult result;
  std::optional<LogRecord> last_finite;
  std::vector<std::size_t> batch_idx(batch);
  for (std::int64_t step = 0; step < config.steps; ++step) {
    if (cursor + batch > order.size()) {
      shuffle(order, rng);
      cursor = 0;
    }
    std::copy_n(order.begin() + static_cast<std::ptrdiff_t>(cursor), batch, batch_idx.begin());
    cursor += batch;

    const Eigen::MatrixXf x = images.batch(batch_idx);
    Eigen::MatrixXf noise(model.latent_dim, static_cast<Eigen::Index>(batch));
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
    const ForwardTrace<float> trace = vae.forward(x, noise);

    const Eigen::MatrixXd xd = x.cast<double>();
    const PosteriorBatch q{trace.mean.cast<double>(), trace.log_var.cast<double>()};
    const Eigen::MatrixXd recon = trace.output.cast<double>();
    const LossInputs in{xd, q, recon, model.likelihood};

    LossBreakdown loss;
    try {
      if (!q.mean.allFinite() || !q.log_var.allFinite() || !recon.allFinite()) {
        throw NonFiniteLoss(step, "step " + std::to_string(step) + ": non-finite network outputs");
      }
      loss = step_loss(objective, step, in);
    } catch (const NonFiniteLoss& e) {
      throw TrainingDiverged(step, e.what(), last_finite);
    } catch (const std::invalid_argument& e) {
      throw TrainingDiverged(step, "step " + std::to_string(step) + ": " + e.what(), last_finite);
    }

    const LossGradient g = loss_gradient(in, rate_weight(objective, step, loss.rate_term));
    const ModelParameters grads = vae.backward(trace, g.d_mean.cast<float>(), g.d_log_var.cast<float>(),
                                               g.d_reconstruction.cast<float>());
    if (!grads.all_finite()) {
      throw TrainingDiverged(step, "step " + std::to_string(step) + ": non-finite gradient", last_finite);
    }
    adam.step(vae.parameters(), grads);

    LogRecord rec{step,
                  loss.total,
                  loss.distortion_term,
                  loss.rate_term,
                  loss.effective_hyperparameter,
                  loss.per_dim_kl,
                  -(loss.distortion_term + loss.rate_term)};
    if (step % config.log_every == 0 || step + 1 == config.steps) {
      result.log.records.push_back(rec);
      if (hooks.on_log) hooks.on_log(rec);
    }
    last_finite = std::move(rec);
    if (hooks.on_checkpoint && (step + 1) % config.checkpoint_every == 0) {
      hooks.on_checkpoint(vae.parameters(), step + 1);
    }
  }
  result.params = vae.parameters();
  return result;
}

std::vector<int> active_dimensions(const TrainingLog& log, double threshold_nats) {
  if (!(threshold_nats > 0.0)) throw std::invalid_argument("active-dimension threshold must be positive");
  std::vector<int> counts;
  counts.reserve(log.records.size());
  for (const auto& r : log.records) {
    counts.push_back(static_cast<int>(
        std::count_if(r.per_dim_kl.begin(), r.per_dim_kl.end(), [&](double kl) { return kl > threshold_nats; })));
  }
  return counts;
}

std::vector<double> median_smooth(std::span<const int> values, int window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("smoothing window must be a positive odd number");
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  const std::ptrdiff_t half = window / 2;
  std::vector<double> out(values.size());
  std::vector<int> buf;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t h = std::min({half, i, n - 1 - i});
    buf.assign(values.begin() + (i - h), values.begin() + (i + h + 1));
    std::sort(buf.begin(), buf.end());
    out[static_cast<std::size_t>(i)] = buf[buf.size() / 2];
  }
  return out;
}

std::vector<double> default_traversal_grid() {
  std::vector<double> grid(11);
  for (int i = 0; i < 11; ++i) grid[i] = -2.0 + 0.4 * i;
  return grid;
}

Traversals emit_traversals(const ModelParameters& params, const Eigen::VectorXf& image,
                           const std::vector<double>& grid) {
  for (double g : grid)
    if (!std::isfinite(g)) throw std::invalid_argument("traversal grid values must be finite");
  Vae<float> vae(params);
  Eigen::MatrixXf mean, log_var;
  vae.encode(image, mean, log_var);
  Traversals out;
  out.grid = grid;
  out.posterior_mean.assign(mean.data(), mean.data() + mean.size());
  const auto cols = static_cast<Eigen::Index>(grid.size());
  for (Eigen::Index d = 0; d < mean.rows(); ++d) {
    Eigen::MatrixXf z = mean.col(0).replicate(1, cols);
    for (Eigen::Index g = 0; g < cols; ++g) z(d, g) = static_cast<float>(grid[static_cast<std::size_t>(g)]);
    out.per_dim.push_back(vae.decode(z).cast<double>());
  }
  return out;
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : log.records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["total"] = r.total;
    j["distortion"] = r.distortion;
    j["rate"] = r.rate;
    j["hyper"] = r.hyper;
    j["per_dim_kl"] = r.per_dim_kl;
    j["elbo"] = r.elbo;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TrainingLog read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  TrainingLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    LogRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.total = j.at("total").get<double>();
    r.distortion = j.at("distortion").get<double>();
    r.rate = j.at("rate").get<double>();
    r.hyper = j.at("hyper").get<double>();
    r.per_dim_kl = j.at("per_dim_kl").get<std::vector<double>>();
    r.elbo = j.at("elbo").get<double>();
    log.records.push_back(std::move(r));
  }
  return log;
}

}  // namespace bavae
