#include "bavae/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace bavae {

const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::synthetic: return "synthetic";
    case DatasetKind::dsprites: return "dsprites";
    case DatasetKind::cache: return "cache";
    case DatasetKind::folder: return "folder";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "synthetic") return DatasetKind::synthetic;
  if (name == "dsprites") return DatasetKind::dsprites;
  if (name == "cache") return DatasetKind::cache;
  if (name == "folder") return DatasetKind::folder;
  throw std::invalid_argument("dataset.kind: unknown dataset kind '" + name + "'");
}

namespace {

namespace pt = boost::property_tree;

/// Reads typed keys from one section and remembers which were consumed.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }

  template <class T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    if (!has(key)) return;
    out = parse<T>(key, tree_->get<std::string>(key));
  }

  template <class T>
  void read_list(const std::string& key, std::vector<T>& out) {
    used_.insert(key);
    if (!has(key)) return;
    out.clear();
    std::stringstream ss(tree_->get<std::string>(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse<T>(key, trim(item)));
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_) {
      if (!child.empty()) throw std::invalid_argument(name_ + "." + key + ": nested sections are not supported");
      if (!used_.contains(key)) throw std::invalid_argument("unknown config key " + name_ + "." + key);
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  }

  template <class T>
  T parse(const std::string& key, const std::string& raw) const {
    const std::string text = trim(raw);
    const std::string field = name_ + "." + key;
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      return std::filesystem::path(text);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "no") return false;
      throw std::invalid_argument(field + ": expected true/false, got '" + text + "'");
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(text, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (text.empty() || pos != text.size()) throw std::invalid_argument(field + ": expected a number, got '" + text + "'");
      return static_cast<T>(v);
    } else {
      T v{};
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
        throw std::invalid_argument(field + ": expected an integer, got '" + text + "'");
      }
      return v;
    }
  }

  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

const std::set<std::string> kSections{"dataset", "model", "objective", "train", "rd", "metrics"};

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  objective.validate();
  train.validate();
  if (dataset.kind == DatasetKind::synthetic) {
    if (dataset.side < 16) throw std::invalid_argument("dataset.side must be >= 16 for synthetic data");
    if (dataset.factor_sizes.size() < 2 || dataset.factor_sizes.size() > 4) {
      throw std::invalid_argument("dataset.factor_sizes must list 2 to 4 factors");
    }
    for (int s : dataset.factor_sizes)
      if (s < 1) throw std::invalid_argument("dataset.factor_sizes entries must be positive");
  } else if (dataset.path.empty()) {
    throw std::invalid_argument("dataset.path is required for dataset.kind = " + std::string(to_string(dataset.kind)));
  }
  if (dataset.kind == DatasetKind::synthetic || dataset.kind == DatasetKind::folder) {
    if (dataset.side != model.image_side) {
      throw std::invalid_argument("dataset.side (" + std::to_string(dataset.side) + ") differs from model.image_side (" +
                                  std::to_string(model.image_side) + ")");
    }
  }
  if (dataset.kind == DatasetKind::dsprites && model.image_side != 64) {
    throw std::invalid_argument("dSprites images are 64x64 but model.image_side is " + std::to_string(model.image_side));
  }
  if (!(rd.heldout_fraction > 0.0 && rd.heldout_fraction < 1.0)) {
    throw std::invalid_argument("rd.heldout_fraction must be in (0, 1)");
  }
  if (rd.eval_samples < 1) throw std::invalid_argument("rd.eval_samples must be >= 1");
  if (metrics.n_bins < 2) throw std::invalid_argument("metrics.n_bins must be >= 2");
  if (metrics.beta_vae.n_train == 0 || metrics.beta_vae.n_eval == 0 || metrics.beta_vae.batch_per_vote == 0 ||
      metrics.factor_vae.n_train == 0 || metrics.factor_vae.n_eval == 0 || metrics.factor_vae.batch_size < 2) {
    throw std::invalid_argument("metrics sample counts must be positive (factor_vae_batch_size >= 2)");
  }
  if (!(metrics.sap_test_fraction > 0.0 && metrics.sap_test_fraction < 1.0)) {
    throw std::invalid_argument("metrics.sap_test_fraction must be in (0, 1)");
  }
  if (metrics.max_points < 10) throw std::invalid_argument("metrics.max_points must be >= 10");
  if (metrics.dci.n_trees < 1 || metrics.dci.max_depth < 1 || !(metrics.dci.learning_rate > 0.0) ||
      metrics.dci.split_bins < 2 || metrics.dci.split_bins > 256) {
    throw std::invalid_argument("metrics.dci_* options are out of range");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config syntax error: ") + e.what());
  }

  ExperimentConfig c;
  auto child = [&](const std::string& name) -> const pt::ptree* {
    const auto it = tree.find(name);
    return it == tree.not_found() ? nullptr : &it->second;
  };
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      if (key != "output_dir") throw std::invalid_argument("unknown top-level config key " + key);
    } else if (!kSections.contains(key)) {
      throw std::invalid_argument("unknown config section [" + key + "]");
    }
  }
  if (const auto it = tree.find("output_dir"); it != tree.not_found()) c.output_dir = it->second.data();

  Section ds(child("dataset"), "dataset");
  std::string kind = to_string(c.dataset.kind);
  ds.read("kind", kind);
  c.dataset.kind = dataset_kind_from_string(kind);
  ds.read("path", c.dataset.path);
  ds.read("side", c.dataset.side);
  ds.read_list("factor_sizes", c.dataset.factor_sizes);
  ds.read("seed", c.dataset.seed);
  ds.reject_unknown();
  if (c.dataset.kind == DatasetKind::dsprites && !ds.has("side")) c.dataset.side = 64;

  Section m(child("model"), "model");
  m.read("image_side", c.model.image_side);
  m.read("channels", c.model.channels);
  m.read("latent_dim", c.model.latent_dim);
  m.read_list("conv_widths", c.model.conv_widths);
  m.read("fc_width", c.model.fc_width);
  m.read("seed", c.model.seed);
  std::string likelihood = to_string(c.model.likelihood.family);
  m.read("likelihood", likelihood);
  c.model.likelihood.family = likelihood_family_from_string(likelihood);
  m.read("gaussian_variance", c.model.likelihood.gaussian_variance);
  m.reject_unknown();

  Section o(child("objective"), "objective");
  std::string okind = to_string(c.objective.kind);
  o.read("kind", okind);
  c.objective.kind = objective_kind_from_string(okind);
  o.read("beta", c.objective.beta);
  c.gamma_explicit = o.has("gamma");
  o.read("gamma", c.objective.gamma);
  o.read("c_start", c.objective.c_schedule.start_value);
  o.read("c_end", c.objective.c_schedule.end_value);
  o.read("c_threshold", c.objective.c_schedule.iteration_threshold);
  o.read("beta_start", c.objective.beta_schedule.start_value);
  o.read("beta_end", c.objective.beta_schedule.end_value);
  o.read("beta_threshold", c.objective.beta_schedule.iteration_threshold);
  o.reject_unknown();

  Section t(child("train"), "train");
  t.read("steps", c.train.steps);
  t.read("batch_size", c.train.batch_size);
  t.read("learning_rate", c.train.learning_rate);
  t.read("seed", c.train.seed);
  t.read("log_every", c.train.log_every);
  t.read("checkpoint_every", c.train.checkpoint_every);
  t.reject_unknown();

  Section r(child("rd"), "rd");
  r.read("heldout_fraction", c.rd.heldout_fraction);
  r.read("eval_samples", c.rd.eval_samples);
  r.read("split_seed", c.rd.split_seed);
  r.reject_unknown();

  Section mt(child("metrics"), "metrics");
  mt.read("seed", c.metrics.seed);
  mt.read("n_bins", c.metrics.n_bins);
  mt.read("beta_vae_n_train", c.metrics.beta_vae.n_train);
  mt.read("beta_vae_n_eval", c.metrics.beta_vae.n_eval);
  mt.read("beta_vae_batch_per_vote", c.metrics.beta_vae.batch_per_vote);
  mt.read("factor_vae_n_train", c.metrics.factor_vae.n_train);
  mt.read("factor_vae_n_eval", c.metrics.factor_vae.n_eval);
  mt.read("factor_vae_batch_size", c.metrics.factor_vae.batch_size);
  mt.read("dci_n_trees", c.metrics.dci.n_trees);
  mt.read("dci_max_depth", c.metrics.dci.max_depth);
  mt.read("dci_learning_rate", c.metrics.dci.learning_rate);
  mt.read("dci_split_bins", c.metrics.dci.split_bins);
  mt.read("sap_test_fraction", c.metrics.sap_test_fraction);
  mt.read("max_points", c.metrics.max_points);
  mt.reject_unknown();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string format_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  if (!c.output_dir.empty()) out << "output_dir = " << c.output_dir.string() << "\n\n";
  out << "[dataset]\n"
      << "kind = " << to_string(c.dataset.kind) << '\n';
  if (!c.dataset.path.empty()) out << "path = " << c.dataset.path.string() << '\n';
  out << "side = " << c.dataset.side << '\n'
      << "factor_sizes = " << join(c.dataset.factor_sizes) << '\n'
      << "seed = " << c.dataset.seed << "\n\n";
  out << "[model]\n"
      << "image_side = " << c.model.image_side << '\n'
      << "channels = " << c.model.channels << '\n'
      << "latent_dim = " << c.model.latent_dim << '\n'
      << "conv_widths = " << join(c.model.conv_widths) << '\n'
      << "fc_width = " << c.model.fc_width << '\n'
      << "seed = " << c.model.seed << '\n'
      << "likelihood = " << to_string(c.model.likelihood.family) << '\n'
      << "gaussian_variance = " << c.model.likelihood.gaussian_variance << "\n\n";
  out << "[objective]\n"
      << "kind = " << to_string(c.objective.kind) << '\n'
      << "beta = " << c.objective.beta << '\n';
  if (c.gamma_explicit) out << "gamma = " << c.objective.gamma << '\n';
  out << "c_start = " << c.objective.c_schedule.start_value << '\n'
      << "c_end = " << c.objective.c_schedule.end_value << '\n'
      << "c_threshold = " << c.objective.c_schedule.iteration_threshold << '\n'
      << "beta_start = " << c.objective.beta_schedule.start_value << '\n'
      << "beta_end = " << c.objective.beta_schedule.end_value << '\n'
      << "beta_threshold = " << c.objective.beta_schedule.iteration_threshold << "\n\n";
  out << "[train]\n"
      << "steps = " << c.train.steps << '\n'
      << "batch_size = " << c.train.batch_size << '\n'
      << "learning_rate = " << c.train.learning_rate << '\n'
      << "seed = " << c.train.seed << '\n'
      << "log_every = " << c.train.log_every << '\n'
      << "checkpoint_every = " << c.train.checkpoint_every << "\n\n";
  out << "[rd]\n"
      << "heldout_fraction = " << c.rd.heldout_fraction << '\n'
      << "eval_samples = " << c.rd.eval_samples << '\n'
      << "split_seed = " << c.rd.split_seed << "\n\n";
  const auto& m = c.metrics;
  out << "[metrics]\n"
      << "seed = " << m.seed << '\n'
      << "n_bins = " << m.n_bins << '\n'
      << "beta_vae_n_train = " << m.beta_vae.n_train << '\n'
      << "beta_vae_n_eval = " << m.beta_vae.n_eval << '\n'
      << "beta_vae_batch_per_vote = " << m.beta_vae.batch_per_vote << '\n'
      << "factor_vae_n_train = " << m.factor_vae.n_train << '\n'
      << "factor_vae_n_eval = " << m.factor_vae.n_eval << '\n'
      << "factor_vae_batch_size = " << m.factor_vae.batch_size << '\n'
      << "dci_n_trees = " << m.dci.n_trees << '\n'
      << "dci_max_depth = " << m.dci.max_depth << '\n'
      << "dci_learning_rate = " << m.dci.learning_rate << '\n'
      << "dci_split_bins = " << m.dci.split_bins << '\n'
      << "sap_test_fraction = " << m.sap_test_fraction << '\n'
      << "max_points = " << m.max_points << '\n';
  return out.str();
}

FactorDataset load_factor_dataset(const DatasetConfig& c) {
  switch (c.kind) {
    case DatasetKind::synthetic: return generate_synthetic(c.side, c.factor_sizes, c.seed);
    case DatasetKind::dsprites: return load_dsprites(c.path);
    case DatasetKind::cache: return load_dataset_cache(c.path);
    case DatasetKind::folder:
      throw std::invalid_argument("dataset.kind = folder is a labeled (non-factor) dataset; "
                                  "disentanglement metrics and RD sweeps need ground-truth factors");
  }
  throw std::logic_error("unhandled dataset kind");
}

}  // namespace bavae
