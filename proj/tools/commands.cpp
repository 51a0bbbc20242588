#include "bavae/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "bavae/config.hpp"
#include "bavae/metrics.hpp"
#include "bavae/plots.hpp"
#include "bavae/rd_analysis.hpp"
#include "bavae/trainer.hpp"

namespace fs = std::filesystem;

namespace bavae::cli {

namespace {

constexpr double kActiveThreshold = 0.05;
constexpr std::size_t kEncodeChunk = 512;

ExperimentConfig resolve(const GlobalOptions& g) {
  if (g.config.empty()) throw std::invalid_argument("--config is required");
  ExperimentConfig c = load_config(g.config);
  if (!g.output.empty()) c.output_dir = g.output;
  if (c.output_dir.empty()) throw std::invalid_argument("no output directory: set output_dir or pass --output");
  if (g.workers < 1) throw std::invalid_argument("--workers must be >= 1");
  return c;
}

/// Refuses to reuse a non-empty directory unless forced, then writes the
/// resolved config into it.
fs::path prepare_output(const ExperimentConfig& c, bool force) {
  const fs::path dir = c.output_dir;
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw std::runtime_error("output directory " + dir.string() + " is not empty (pass --force to overwrite)");
    }
  }
  fs::create_directories(dir);
  std::ofstream out(dir / "config.ini", std::ios::trunc);
  out << format_config(c);
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.ini").string());
  return dir;
}

struct LoadedImages {
  ImageSet images;
  std::optional<FactorTable> factors;
  std::optional<LabeledImageSet> labeled;
};

LoadedImages load_images(const DatasetConfig& d) {
  LoadedImages out;
  if (d.kind == DatasetKind::folder) {
    LabeledImageSet l = load_labeled_folder(d.path, d.side);
    out.images = l.images;
    out.labeled = std::move(l);
  } else {
    FactorDataset f = load_factor_dataset(d);
    out.images = std::move(f.images);
    out.factors = std::move(f.factors);
  }
  return out;
}

void check_model_matches(const ModelParameters& p, const ImageSet& images) {
  if (p.config.channels != images.channels || p.config.image_side != images.side) {
    std::ostringstream msg;
    msg << "checkpoint expects " << p.config.channels << "x" << p.config.image_side << "x" << p.config.image_side
        << " images but the dataset has " << images.channels << "x" << images.side << "x" << images.side;
    throw std::invalid_argument(msg.str());
  }
}

/// N x L posterior means.
Eigen::MatrixXd encode_means(const ModelParameters& p, const ImageSet& images) {
  Eigen::MatrixXd codes(static_cast<Eigen::Index>(images.size()), p.config.latent_dim);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < images.size(); start += kEncodeChunk) {
    const std::size_t end = std::min(images.size(), start + kEncodeChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const PosteriorBatch q = encode(p, images.batch(idx));
    codes.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(idx.size())) = q.mean.transpose();
  }
  return codes;
}

/// Dataset-mean KL per latent dimension.
std::vector<double> mean_kl_per_dim(const ModelParameters& p, const ImageSet& images) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(p.config.latent_dim);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < images.size(); start += kEncodeChunk) {
    const std::size_t end = std::min(images.size(), start + kEncodeChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    sum += kl_per_dim(encode(p, images.batch(idx))).rowwise().sum();
  }
  sum /= static_cast<double>(images.size());
  return {sum.data(), sum.data() + sum.size()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

void cmd_train(const GlobalOptions& g) {
  ExperimentConfig c = resolve(g);
  if (g.seed) {
    c.model.seed = *g.seed;
    c.train.seed = *g.seed;
  }
  c.validate();
  const LoadedImages data = load_images(c.dataset);
  const fs::path dir = prepare_output(c, g.force);

  TrainHooks hooks;
  hooks.on_checkpoint = [&](const ModelParameters& p, std::int64_t step) {
    save_checkpoint(dir / ("checkpoint_step" + std::to_string(step) + ".bin"), p, step);
  };
  const TrainResult r = train(c.model, c.objective, c.train, data.images, {}, hooks);
  save_checkpoint(dir / "checkpoint.bin", r.params, c.train.steps);
  write_training_log(dir / "training_log.ndjson", r.log);
  write_kl_plot(dir / "kl_per_dim.svg", r.log);
  write_hyper_plot(dir / "elbo_distortion.svg", r.log);

  const auto active = active_dimensions(r.log, kActiveThreshold);
  std::ostringstream summary;
  summary << std::setprecision(10) << "key,value\n";
  const auto& last = r.log.records.back();
  summary << "final_step," << last.step << "\nfinal_total," << last.total << "\nfinal_distortion," << last.distortion
          << "\nfinal_rate," << last.rate << "\nfinal_elbo," << last.elbo << "\nfinal_active_dimensions,"
          << active.back() << '\n';
  write_text(dir / "summary.csv", summary.str());
}

bool cmd_sweep(const GlobalOptions& g, const SweepOptions& s) {
  ExperimentConfig c = resolve(g);
  SweepSpec spec;
  spec.kind = hyper_kind_from_string(s.hyper);
  if (s.values.size() < 2) throw std::invalid_argument("--values needs at least 2 hyperparameter values");
  if (s.seeds.empty()) throw std::invalid_argument("--seeds needs at least one seed");
  if (spec.kind == HyperKind::c && !c.gamma_explicit) {
    throw std::invalid_argument("objective.gamma must be set explicitly in the config for a C sweep");
  }
  c.validate();
  spec.values = s.values;
  spec.seeds = s.seeds;
  spec.model = c.model;
  spec.objective = c.objective;
  spec.train = c.train;
  spec.heldout_fraction = c.rd.heldout_fraction;
  spec.split_seed = g.seed.value_or(c.rd.split_seed);
  spec.eval_samples = c.rd.eval_samples;
  spec.workers = g.workers;
  for (double v : spec.values) sweep_objective(spec, v);

  const LoadedImages data = load_images(c.dataset);
  const fs::path dir = prepare_output(c, g.force);
  const SweepResult result = sweep(spec, data.images, [](const RDPoint& p) {
    std::cerr << to_string(p.hyper_kind) << '=' << p.hyper_value << " seed=" << p.seed << " rate=" << p.rate
              << " distortion=" << p.distortion << '\n';
  });
  write_rd_table(dir / "rd_points.csv", result.points);

  std::ostringstream failures;
  for (const auto& f : result.failures) {
    failures << to_string(spec.kind) << '=' << f.hyper_value << " seed=" << f.seed << ": " << f.message << '\n';
  }
  if (!result.failures.empty()) write_text(dir / "failures.txt", failures.str());

  std::ostringstream sandwich;
  sandwich << std::setprecision(10) << "kind,value,seed,entropy_upper_proxy,h_minus_d,rate,consistent\n";
  for (const auto& p : result.points) {
    const SandwichCheck sc = sandwich_check({p.rate, p.distortion, p.elbo}, data.images.size());
    sandwich << to_string(p.hyper_kind) << ',' << p.hyper_value << ',' << p.seed << ',' << sc.entropy_upper_proxy << ','
             << sc.h_minus_d << ',' << sc.rate << ',' << (sc.consistent ? "true" : "false") << '\n';
  }
  write_text(dir / "sandwich.csv", sandwich.str());

  std::string verdict;
  try {
    const Lemma1Report report = check_lemma1(result.points);
    verdict = format_lemma1_report(report);
    write_rd_scatter(dir / "rd_scatter.svg", result.points);
    write_sweep_plot(dir / "sweep_elbo_distortion.svg", report);
  } catch (const std::invalid_argument& e) {
    verdict = std::string("verdict: UNDETERMINED\nreason: ") + e.what() + '\n';
  }
  if (!result.failures.empty()) verdict += "failed cells:\n" + failures.str();
  write_text(dir / "ordering_verdict.txt", verdict);
  std::cout << verdict;
  return result.failures.empty();
}

void cmd_metrics(const GlobalOptions& g, const fs::path& checkpoint) {
  ExperimentConfig c = resolve(g);
  if (g.seed) c.metrics.seed = *g.seed;
  if (checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  c.validate();
  if (c.dataset.kind == DatasetKind::folder) {
    throw std::invalid_argument("metrics need a factor dataset with ground-truth factors; "
                                "dataset.kind = folder only has class labels (use the probe command)");
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  FactorDataset ds = load_factor_dataset(c.dataset);
  check_model_matches(ck.params, ds.images);
  const fs::path dir = prepare_output(c, g.force);

  FactorCodes fc{encode_means(ck.params, ds.images), std::move(ds.factors)};
  const MetricReport report = compute_metrics(fc, c.metrics);
  write_metric_report(dir / "metrics.csv", report);
  std::ifstream in(dir / "metrics.csv");
  std::cout << in.rdbuf();
}

void cmd_probe(const GlobalOptions& g, const ProbeOptions& p) {
  ExperimentConfig c = resolve(g);
  if (p.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  if (!(p.split > 0.0 && p.split < 1.0)) {
    throw std::invalid_argument("--split must be in (0, 1): it is the training fraction and the test set must be non-empty");
  }
  c.validate();
  if (c.dataset.kind != DatasetKind::folder) {
    throw std::invalid_argument("probe needs a labeled dataset (dataset.kind = folder)");
  }
  const std::uint64_t seed = g.seed.value_or(c.metrics.seed);
  const Checkpoint ck = load_checkpoint(p.checkpoint);
  const LabeledImageSet ls = load_labeled_folder(c.dataset.path, c.dataset.side);
  if (ls.n_classes < 2) throw std::invalid_argument("probe needs at least 2 classes, found " + std::to_string(ls.n_classes));
  check_model_matches(ck.params, ls.images);
  const Split split = split_indices(ls.images.size(), 1.0 - p.split, seed);
  if (split.train.empty() || split.heldout.empty()) throw std::invalid_argument("split leaves an empty train or test set");
  const fs::path dir = prepare_output(c, g.force);

  FactorCodes all;
  all.codes = encode_means(ck.params, ls.images);
  all.factors.sizes = {ls.n_classes};
  all.factors.names = {"label"};
  all.factors.values = ls.labels;
  const ProbeResult r = linear_probe(all.subset(split.train), all.subset(split.heldout));

  std::ostringstream out;
  out << std::setprecision(10) << "key,value\naccuracy," << r.accuracy << "\nn_train," << split.train.size()
      << "\nn_test," << r.n_test << "\nn_classes," << ls.n_classes << "\ntrain_fraction," << p.split << "\nseed,"
      << seed << "\nunseen_test_labels,";
  for (std::size_t i = 0; i < r.unseen_labels.size(); ++i) out << (i ? ";" : "") << ls.class_names[r.unseen_labels[i]];
  out << '\n';
  write_text(dir / "probe.csv", out.str());
  std::cout << out.str();
  if (!r.unseen_labels.empty()) {
    std::cerr << "warning: " << r.unseen_labels.size() << " test label(s) absent from the training split were scored as errors\n";
  }
}

void cmd_traverse(const GlobalOptions& g, const TraverseOptions& t) {
  ExperimentConfig c = resolve(g);
  if (t.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  c.validate();
  const Checkpoint ck = load_checkpoint(t.checkpoint);
  const LoadedImages data = load_images(c.dataset);
  check_model_matches(ck.params, data.images);
  if (t.image_index < 0 || static_cast<std::size_t>(t.image_index) >= data.images.size()) {
    throw std::invalid_argument("--image-index " + std::to_string(t.image_index) + " is out of range [0, " +
                                std::to_string(data.images.size()) + ")");
  }
  const std::vector<double> grid = t.grid.empty() ? default_traversal_grid() : t.grid;
  const fs::path dir = prepare_output(c, g.force);

  const std::size_t idx = static_cast<std::size_t>(t.image_index);
  const Eigen::VectorXf image = data.images.batch(std::span<const std::size_t>(&idx, 1)).col(0);
  const Traversals tr = emit_traversals(ck.params, image, grid);
  const std::vector<double> kl = mean_kl_per_dim(ck.params, data.images);

  std::vector<bool> dead(kl.size());
  std::ostringstream side;
  side << std::setprecision(10) << "dim,kl,active,posterior_mean\n";
  for (std::size_t d = 0; d < kl.size(); ++d) {
    dead[d] = !(kl[d] > kActiveThreshold);
    side << d << ',' << kl[d] << ',' << (dead[d] ? "false" : "true") << ',' << tr.posterior_mean[d] << '\n';
  }
  write_text(dir / "per_dim_kl.csv", side.str());

  const int s = ck.params.config.image_side, ch = ck.params.config.channels;
  if (ch == 1) write_traversal_png(dir / "traversal.png", tr, s, dead);
  std::vector<double> raw;
  for (const auto& frames : tr.per_dim)
    for (Eigen::Index gi = 0; gi < frames.cols(); ++gi) raw.insert(raw.end(), frames.col(gi).data(), frames.col(gi).data() + frames.rows());
  std::vector<std::size_t> shape{tr.per_dim.size(), grid.size()};
  if (ch != 1) shape.push_back(static_cast<std::size_t>(ch));
  shape.push_back(static_cast<std::size_t>(s));
  shape.push_back(static_cast<std::size_t>(s));
  write_npy(dir / "traversal.npy", raw, shape);
  std::ostringstream g_out;
  g_out << std::setprecision(10) << "grid\n";
  for (double v : grid) g_out << v << '\n';
  write_text(dir / "grid.csv", g_out.str());
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"beta-annealed VAE experiments"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config", g.config, "experiment config (INI)")->required();
    sub->add_option("--output", g.output, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "seed override");
    sub->add_flag("--force", g.force, "allow writing into a non-empty output directory");
    sub->add_option("--workers", g.workers, "parallel sweep cells")->check(CLI::PositiveNumber);
  };
  auto* train_cmd = app.add_subcommand("train", "train one model");
  add_globals(train_cmd);

  SweepOptions so;
  auto* sweep_cmd = app.add_subcommand("sweep", "beta or C sweep with a rate/distortion ordering verdict");
  add_globals(sweep_cmd);
  sweep_cmd->add_option("--hyper", so.hyper, "beta or c")->check(CLI::IsMember({"beta", "c"}));
  sweep_cmd->add_option("--values", so.values, "comma-separated hyperparameter values")->delimiter(',')->required();
  sweep_cmd->add_option("--seeds", so.seeds, "comma-separated seeds")->delimiter(',');

  fs::path metrics_ck;
  auto* metrics_cmd = app.add_subcommand("metrics", "disentanglement metrics on a factor dataset");
  add_globals(metrics_cmd);
  metrics_cmd->add_option("--checkpoint", metrics_ck, "trained checkpoint")->required();

  ProbeOptions po;
  auto* probe_cmd = app.add_subcommand("probe", "linear probe on a labeled image folder");
  add_globals(probe_cmd);
  probe_cmd->add_option("--checkpoint", po.checkpoint, "trained checkpoint")->required();
  probe_cmd->add_option("--split", po.split, "training fraction in (0, 1)");

  TraverseOptions to;
  auto* traverse_cmd = app.add_subcommand("traverse", "latent traversal grid for one image");
  add_globals(traverse_cmd);
  traverse_cmd->add_option("--checkpoint", to.checkpoint, "trained checkpoint")->required();
  traverse_cmd->add_option("--image-index", to.image_index, "dataset image index");
  traverse_cmd->add_option("--grid", to.grid, "comma-separated latent values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  for (auto* sub : {train_cmd, sweep_cmd, metrics_cmd, probe_cmd, traverse_cmd})
    if (sub->parsed() && sub->count("--seed") > 0) g.seed = seed;

  try {
    if (train_cmd->parsed()) cmd_train(g);
    if (sweep_cmd->parsed() && !cmd_sweep(g, so)) {
      err << "error: some sweep cells failed (see failures.txt)\n";
      return 1;
    }
    if (metrics_cmd->parsed()) cmd_metrics(g, metrics_ck);
    if (probe_cmd->parsed()) cmd_probe(g, po);
    if (traverse_cmd->parsed()) cmd_traverse(g, to);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace bavae::cli
