#include "bavae/rd_analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace bavae {

const char* to_string(HyperKind kind) { return kind == HyperKind::beta ? "beta" : "c"; }

HyperKind hyper_kind_from_string(const std::string& name) {
  if (name == "beta") return HyperKind::beta;
  if (name == "c" || name == "C") return HyperKind::c;
  throw std::invalid_argument("unknown hyperparameter kind '" + name + "' (expected beta or c)");
}

namespace {
constexpr std::size_t kEvalChunk = 256;
}

RDMeasurement measure_rd(const ModelParameters& params, const ImageSet& images, std::span<const std::size_t> indices,
                         int eval_samples, std::uint64_t noise_seed) {
  if (eval_samples < 1) throw std::invalid_argument("eval_samples must be at least 1");
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(images.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    indices = all;
  }
  if (indices.empty()) throw std::invalid_argument("cannot measure rate/distortion on an empty dataset");
  const auto& cfg = params.config;
  if (images.channels != cfg.channels || images.side != cfg.image_side) {
    throw std::invalid_argument("dataset image shape does not match the model");
  }

  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double rate_sum = 0.0;
  double distortion_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
    const Eigen::MatrixXf xf = images.batch(chunk);
    const Eigen::MatrixXd x = xf.cast<double>();
    const PosteriorBatch q = encode(params, xf);
    rate_sum += kl_per_dim(q).sum();
    Eigen::MatrixXd noise(q.mean.rows(), q.mean.cols());
    for (int s = 0; s < eval_samples; ++s) {
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
      const Eigen::MatrixXd recon = decode(params, reparam_sample(q, noise));
      for (Eigen::Index b = 0; b < x.cols(); ++b) {
        distortion_sum -= reconstruction_log_likelihood(std::span<const double>(x.col(b).data(), x.rows()),
                                                        std::span<const double>(recon.col(b).data(), recon.rows()),
                                                        cfg.likelihood) /
                          eval_samples;
      }
    }
  }
  RDMeasurement m;
  const auto n = static_cast<double>(indices.size());
  m.rate = rate_sum / n;
  m.distortion = distortion_sum / n;
  m.elbo = -(m.rate + m.distortion);
  return m;
}

SandwichCheck sandwich_check(const RDMeasurement& m, std::size_t dataset_size) {
  if (dataset_size == 0) throw std::invalid_argument("dataset size must be positive");
  SandwichCheck s;
  s.entropy_upper_proxy = std::log(static_cast<double>(dataset_size));
  s.rate = m.rate;
  s.h_minus_d = s.entropy_upper_proxy - m.distortion;
  s.consistent = s.h_minus_d <= s.rate;
  return s;
}

ObjectiveConfig sweep_objective(const SweepSpec& spec, double value) {
  ObjectiveConfig obj;
  if (spec.kind == HyperKind::beta) {
    obj.kind = ObjectiveKind::beta;
    obj.beta = value;
  } else {
    obj.kind = ObjectiveKind::bottleneck;
    obj.gamma = spec.objective.gamma;
    obj.c_schedule = ScheduleSpec::constant(value);
  }
  obj.validate();
  return obj;
}

SweepResult sweep(const SweepSpec& spec, const ImageSet& images, const std::function<void(const RDPoint&)>& on_point) {
  if (spec.values.size() < 2) throw std::invalid_argument("a sweep needs at least 2 hyperparameter values");
  if (spec.seeds.empty()) throw std::invalid_argument("a sweep needs at least one seed");
  if (spec.workers < 1) throw std::invalid_argument("workers must be at least 1");
  if (!(spec.heldout_fraction > 0.0 && spec.heldout_fraction < 1.0)) {
    throw std::invalid_argument("held-out fraction must be in (0, 1)");
  }
  for (double v : spec.values) sweep_objective(spec, v);
  spec.model.validate();
  spec.train.validate();

  const Split split = split_indices(images.size(), spec.heldout_fraction, spec.split_seed);
  if (split.train.empty() || split.heldout.empty()) throw std::invalid_argument("dataset too small to split");

  struct Cell {
    double value;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double v : spec.values)
    for (auto s : spec.seeds) cells.push_back({v, s});
  std::sort(cells.begin(), cells.end(),
            [](const Cell& a, const Cell& b) { return a.value != b.value ? a.value < b.value : a.seed < b.seed; });

  std::vector<std::optional<RDPoint>> points(cells.size());
  std::vector<std::optional<std::string>> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;

  auto run = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& cell = cells[i];
      try {
        ArchitectureConfig model = spec.model;
        model.seed = cell.seed;
        TrainConfig train_cfg = spec.train;
        train_cfg.seed = cell.seed;
        const TrainResult trained = train(model, sweep_objective(spec, cell.value), train_cfg, images, split.train);
        const RDMeasurement m = measure_rd(trained.params, images, split.heldout, spec.eval_samples, cell.seed);
        RDPoint p{spec.kind, cell.value, m.rate, m.distortion, m.elbo, cell.seed};
        points[i] = p;
        if (on_point) {
          std::lock_guard lock(report_mutex);
          on_point(p);
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_threads = std::min<int>(spec.workers, static_cast<int>(cells.size()));
  if (n_threads <= 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(run);
  }

  SweepResult result;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (points[i]) result.points.push_back(*points[i]);
    if (errors[i]) result.failures.push_back({cells[i].value, cells[i].seed, *errors[i]});
  }
  return result;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Lemma1Report check_lemma1(const std::vector<RDPoint>& points) {
  if (points.empty()) throw std::invalid_argument("no RD points supplied");
  const HyperKind kind = points.front().hyper_kind;
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_value;
  for (const auto& p : points) {
    if (p.hyper_kind != kind) throw std::invalid_argument("RD points mix beta and c sweeps");
    by_value[p.hyper_value].first.push_back(p.rate);
    by_value[p.hyper_value].second.push_back(p.distortion);
  }
  if (by_value.size() < 2) throw std::invalid_argument("need at least 2 distinct hyperparameter values");

  Lemma1Report r;
  r.kind = kind;
  for (auto& [v, rd] : by_value) {
    r.values.push_back(v);
    r.median_rate.push_back(median(rd.first));
    r.median_distortion.push_back(median(rd.second));
  }
  // Increasing beta lowers rate and raises distortion; increasing C does the opposite.
  const bool rate_falls = kind == HyperKind::beta;
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    for (std::size_t j = i + 1; j < r.values.size(); ++j) {
      const double ri = r.median_rate[i], rj = r.median_rate[j];
      const double di = r.median_distortion[i], dj = r.median_distortion[j];
      if (rate_falls ? !(ri > rj) : !(ri < rj)) r.violations.push_back({r.values[i], r.values[j], "rate", ri, rj});
      if (rate_falls ? !(di < dj) : !(di > dj))
        r.violations.push_back({r.values[i], r.values[j], "distortion", di, dj});
    }
  }
  r.holds = r.violations.empty();
  return r;
}

std::string format_lemma1_report(const Lemma1Report& r) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "verdict: " << (r.holds ? "HOLD" : "VIOLATED") << '\n';
  out << "kind: " << to_string(r.kind) << '\n';
  out << "expected: rate " << (r.kind == HyperKind::beta ? "decreasing" : "increasing") << ", distortion "
      << (r.kind == HyperKind::beta ? "increasing" : "decreasing") << " in " << to_string(r.kind) << '\n';
  out << "medians (value, rate, distortion):\n";
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    out << "  " << r.values[i] << ", " << r.median_rate[i] << ", " << r.median_distortion[i] << '\n';
  }
  out << "violations: " << r.violations.size() << '\n';
  for (const auto& v : r.violations) {
    out << "  " << v.quantity << ": " << to_string(r.kind) << '=' << v.lower_value << " -> " << v.lower << ", "
        << to_string(r.kind) << '=' << v.higher_value << " -> " << v.higher << " (difference "
        << v.higher - v.lower << ")\n";
  }
  return out.str();
}

void write_rd_table(const std::filesystem::path& path, const std::vector<RDPoint>& points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "kind,value,seed,rate,distortion,elbo\n" << std::setprecision(17);
  for (const auto& p : points) {
    out << to_string(p.hyper_kind) << ',' << p.hyper_value << ',' << p.seed << ',' << p.rate << ',' << p.distortion
        << ',' << p.elbo << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<RDPoint> read_rd_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "kind,value,seed,rate,distortion,elbo") {
    throw std::runtime_error(path.string() + ": missing RD table header");
  }
  std::vector<RDPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string kind, value, seed, rate, distortion, elbo;
    if (!std::getline(row, kind, ',') || !std::getline(row, value, ',') || !std::getline(row, seed, ',') ||
        !std::getline(row, rate, ',') || !std::getline(row, distortion, ',') || !std::getline(row, elbo)) {
      throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    }
    points.push_back({hyper_kind_from_string(kind), std::stod(value), std::stod(rate), std::stod(distortion),
                      std::stod(elbo), std::stoull(seed)});
  }
  return points;
}

}  // namespace bavae
