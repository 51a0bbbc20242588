#include "bavae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bavae {

void FactorCodes::validate() const {
  if (codes.rows() == 0 || codes.cols() == 0) throw std::invalid_argument("factor codes are empty");
  if (static_cast<std::size_t>(codes.rows()) != factors.rows()) {
    throw std::invalid_argument("codes have " + std::to_string(codes.rows()) + " rows but factors have " +
                                std::to_string(factors.rows()));
  }
  if (!codes.allFinite()) throw std::invalid_argument("factor codes contain non-finite values");
  factors.validate();
}

FactorCodes FactorCodes::subset(std::span<const std::size_t> rows) const {
  FactorCodes out;
  out.codes.resize(static_cast<Eigen::Index>(rows.size()), codes.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.codes.row(static_cast<Eigen::Index>(i)) = codes.row(rows[i]);
  out.factors = factors.subset(rows);
  return out;
}

namespace {

Eigen::Index argmax_first(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i)
    if (row(i) > row(best)) best = i;
  return best;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<int> factor_column(const FactorTable& t, std::size_t k) {
  std::vector<int> col(t.rows());
  for (std::size_t n = 0; n < t.rows(); ++n) col[n] = t.at(n, k);
  return col;
}

std::vector<std::size_t> subsample(std::size_t n, std::size_t max_points, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= max_points) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < max_points; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// linear classifier

void LinearClassifier::fit(const Eigen::MatrixXd& features, std::span<const int> labels, int n_classes) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (n == 0) throw std::invalid_argument("classifier needs at least one training example");
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("feature/label count mismatch");
  if (n_classes < 1) throw std::invalid_argument("classifier needs at least one class");
  for (int y : labels)
    if (y < 0 || y >= n_classes) throw std::invalid_argument("label out of range");

  mean_ = features.colwise().mean();
  scale_ = ((features.rowwise() - mean_).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(scale_(j) > 1e-12)) scale_(j) = 1.0;

  Eigen::MatrixXd xa(n, d + 1);
  xa.leftCols(d) = (features.rowwise() - mean_).array().rowwise() / scale_.array();
  xa.col(d).setOnes();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, n_classes);
  for (Eigen::Index i = 0; i < n; ++i) y(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  weights_ = Eigen::MatrixXd::Zero(d + 1, n_classes);
  Eigen::MatrixXd m = weights_, v = weights_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= options_.iterations; ++t) {
    Eigen::MatrixXd logits = xa * weights_;
    logits.colwise() -= logits.rowwise().maxCoeff();
    Eigen::MatrixXd p = logits.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    Eigen::MatrixXd g = xa.transpose() * (p - y) / static_cast<double>(n);
    g.topRows(d) += options_.l2 * weights_.topRows(d);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    weights_.array() -= options_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

std::vector<int> LinearClassifier::predict(const Eigen::MatrixXd& features) const {
  if (weights_.size() == 0) throw std::logic_error("classifier has not been fit");
  const Eigen::Index d = weights_.rows() - 1;
  if (features.cols() != d) throw std::invalid_argument("feature dimension differs from training");
  const Eigen::MatrixXd xs = (features.rowwise() - mean_).array().rowwise() / scale_.array();
  const Eigen::MatrixXd logits = (xs * weights_.topRows(d)).rowwise() + weights_.row(d);
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(argmax_first(logits.row(i)));
  return out;
}

double LinearClassifier::accuracy(const Eigen::MatrixXd& features, std::span<const int> labels) const {
  const auto pred = predict(features);
  if (pred.empty()) throw std::invalid_argument("no examples to score");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// sampling-based scores

double beta_vae_score(const FactorCodes& fc, const BetaVaeOptions& o, std::uint64_t seed) {
  fc.validate();
  if (fc.factors.num_factors() < 2) throw std::invalid_argument("BetaVAE score needs at least 2 factors");
  if (o.n_train == 0 || o.n_eval == 0 || o.batch_per_vote == 0) {
    throw std::invalid_argument("BetaVAE score sample counts must be positive");
  }
  FactorConditionalSampler sampler(fc.factors, seed);
  const auto& eligible = sampler.eligible_factors();
  if (eligible.size() < 2) throw std::invalid_argument("BetaVAE score needs at least 2 factors with 2+ values");
  std::vector<int> class_of(fc.factors.num_factors(), -1);
  for (std::size_t i = 0; i < eligible.size(); ++i) class_of[static_cast<std::size_t>(eligible[i])] = static_cast<int>(i);

  auto draw = [&](std::size_t count, Eigen::MatrixXd& features, std::vector<int>& labels) {
    features.setZero(static_cast<Eigen::Index>(count), fc.latent_dim());
    labels.resize(count);
    for (std::size_t v = 0; v < count; ++v) {
      const FactorPairs fp = sampler.sample_pairs(o.batch_per_vote);
      for (const auto& [a, b] : fp.pairs) {
        features.row(static_cast<Eigen::Index>(v)) += (fc.codes.row(a) - fc.codes.row(b)).cwiseAbs();
      }
      features.row(static_cast<Eigen::Index>(v)) /= static_cast<double>(o.batch_per_vote);
      labels[v] = class_of[static_cast<std::size_t>(fp.factor)];
    }
  };
  Eigen::MatrixXd x_train, x_eval;
  std::vector<int> y_train, y_eval;
  draw(o.n_train, x_train, y_train);
  draw(o.n_eval, x_eval, y_eval);
  LinearClassifier clf;
  clf.fit(x_train, y_train, static_cast<int>(eligible.size()));
  return clf.accuracy(x_eval, y_eval);
}

double factor_vae_score(const FactorCodes& fc, const FactorVaeOptions& o, std::uint64_t seed) {
  fc.validate();
  if (o.n_train == 0 || o.n_eval == 0 || o.batch_size < 2) {
    throw std::invalid_argument("FactorVAE score needs positive vote counts and batch_size >= 2");
  }
  const Eigen::Index n = fc.codes.rows();
  const Eigen::RowVectorXd mean = fc.codes.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((fc.codes.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (sd(j) >= 1e-6) active.push_back(j);
  if (active.empty()) {
    throw std::invalid_argument("FactorVAE score: all " + std::to_string(sd.size()) +
                                " code dimensions are collapsed (std < 1e-6)");
  }
  FactorConditionalSampler sampler(fc.factors, seed);
  const auto k_count = fc.factors.num_factors();

  auto vote = [&](std::size_t& dim, int& factor) {
    const FactorGroup g = sampler.sample_group(o.batch_size);
    double best = 0.0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const Eigen::Index j = active[a];
      double s = 0.0, s2 = 0.0;
      for (std::size_t i : g.indices) {
        const double z = fc.codes(static_cast<Eigen::Index>(i), j) / sd(j);
        s += z;
        s2 += z * z;
      }
      const double m = s / static_cast<double>(g.indices.size());
      const double var = s2 / static_cast<double>(g.indices.size()) - m * m;
      if (a == 0 || var < best) {
        best = var;
        dim = a;
      }
    }
    factor = g.factor;
  };

  std::vector<std::vector<std::size_t>> table(active.size(), std::vector<std::size_t>(k_count, 0));
  for (std::size_t v = 0; v < o.n_train; ++v) {
    std::size_t d = 0;
    int k = 0;
    vote(d, k);
    ++table[d][static_cast<std::size_t>(k)];
  }
  std::vector<int> predicted(active.size(), 0);
  for (std::size_t d = 0; d < active.size(); ++d) {
    predicted[d] = static_cast<int>(std::max_element(table[d].begin(), table[d].end()) - table[d].begin());
  }
  std::size_t hits = 0;
  for (std::size_t v = 0; v < o.n_eval; ++v) {
    std::size_t d = 0;
    int k = 0;
    vote(d, k);
    hits += predicted[d] == k;
  }
  return static_cast<double>(hits) / static_cast<double>(o.n_eval);
}

// ---------------------------------------------------------------------------
// information-theoretic scores

std::vector<int> quantile_bins(std::span<const double> values, int n_bins) {
  if (n_bins < 2) throw std::invalid_argument("n_bins must be at least 2");
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<int> bins(n);
  std::size_t first_of_run = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (r > 0 && values[order[r]] != values[order[r - 1]]) first_of_run = r;
    bins[order[r]] = static_cast<int>(first_of_run * static_cast<std::size_t>(n_bins) / n);
  }
  return bins;
}

namespace {

std::vector<int> compact_labels(std::span<const int> a, int& n_levels) {
  std::vector<int> levels(a.begin(), a.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  n_levels = static_cast<int>(levels.size());
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<int>(std::lower_bound(levels.begin(), levels.end(), a[i]) - levels.begin());
  }
  return out;
}

}  // namespace

double discrete_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
  if (a.empty()) throw std::invalid_argument("mutual information of empty label vectors");
  int na = 0, nb = 0;
  const auto ca = compact_labels(a, na);
  const auto cb = compact_labels(b, nb);
  std::vector<std::uint64_t> joint(static_cast<std::size_t>(na) * nb, 0), ma(na, 0), mb(nb, 0);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    ++joint[static_cast<std::size_t>(ca[i]) * nb + cb[i]];
    ++ma[ca[i]];
    ++mb[cb[i]];
  }
  const std::uint64_t n = a.size();
  double mi = 0.0;
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      const std::uint64_t c = joint[static_cast<std::size_t>(i) * nb + j];
      if (c == 0) continue;
      const std::uint64_t num = c * n, den = ma[i] * mb[j];
      if (num == den) continue;  // exact independence for this cell
      mi += static_cast<double>(c) / static_cast<double>(n) *
            std::log(static_cast<double>(num) / static_cast<double>(den));
    }
  }
  return std::max(mi, 0.0);
}

double discrete_entropy(std::span<const int> a) {
  if (a.empty()) throw std::invalid_argument("entropy of an empty label vector");
  int levels = 0;
  const auto c = compact_labels(a, levels);
  std::vector<std::uint64_t> counts(levels, 0);
  for (int v : c) ++counts[v];
  double h = 0.0;
  const auto n = static_cast<double>(a.size());
  for (auto k : counts) {
    if (k == a.size()) return 0.0;
    const double p = static_cast<double>(k) / n;
    h -= p * std::log(p);
  }
  return h;
}

Eigen::MatrixXd mutual_information_matrix(const FactorCodes& fc, int n_bins) {
  fc.validate();
  const auto k_count = fc.factors.num_factors();
  std::vector<std::vector<int>> factors(k_count);
  for (std::size_t k = 0; k < k_count; ++k) factors[k] = factor_column(fc.factors, k);
  Eigen::MatrixXd m(fc.latent_dim(), static_cast<Eigen::Index>(k_count));
  std::vector<double> col(fc.size());
  for (Eigen::Index j = 0; j < fc.latent_dim(); ++j) {
    for (std::size_t n = 0; n < fc.size(); ++n) col[n] = fc.codes(static_cast<Eigen::Index>(n), j);
    const auto bins = quantile_bins(col, n_bins);
    for (std::size_t k = 0; k < k_count; ++k) m(j, static_cast<Eigen::Index>(k)) = discrete_mutual_information(bins, factors[k]);
  }
  return m;
}

double mig(const FactorCodes& fc, int n_bins) {
  const Eigen::MatrixXd m = mutual_information_matrix(fc, n_bins);
  double total = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < fc.factors.num_factors(); ++k) {
    const double h = discrete_entropy(factor_column(fc.factors, k));
    if (h <= 0.0) continue;
    std::vector<double> mi(m.rows());
    for (Eigen::Index j = 0; j < m.rows(); ++j) mi[static_cast<std::size_t>(j)] = m(j, static_cast<Eigen::Index>(k));
    std::sort(mi.begin(), mi.end(), std::greater<>());
    const double second = mi.size() > 1 ? mi[1] : 0.0;
    total += std::clamp((mi[0] - second) / h, 0.0, 1.0);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("MIG: every factor has zero entropy");
  return total / used;
}

double modularity(const FactorCodes& fc, int n_bins) {
  const Eigen::MatrixXd m = mutual_information_matrix(fc, n_bins);
  const Eigen::Index k_count = m.cols();
  double total = 0.0;
  int used = 0;
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    const Eigen::Index top = argmax_first(m.row(j));
    const double theta = m(j, top);
    if (!(theta > 0.0)) continue;
    double score = 1.0;
    if (k_count > 1) {
      double dev = 0.0;
      for (Eigen::Index k = 0; k < k_count; ++k)
        if (k != top) dev += m(j, k) * m(j, k);
      score = 1.0 - dev / (theta * theta * static_cast<double>(k_count - 1));
    }
    total += score;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("modularity: mutual information matrix is all zero");
  return std::clamp(total / used, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// DCI

namespace {

/// Least-squares regression trees on pre-binned features, boosted.
class BoostedTrees {
 public:
  BoostedTrees(const std::vector<std::vector<int>>& bins, int n_bins, const DciOptions& o)
      : bins_(bins), n_bins_(n_bins), o_(o) {}

  /// Returns per-feature impurity reduction summed over all trees.
  std::vector<double> fit(std::span<const double> y) {
    const std::size_t n = y.size();
    std::vector<double> f(n, std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n));
    std::vector<double> residual(n);
    importance_.assign(bins_.size(), 0.0);
    std::vector<std::size_t> rows(n);
    for (int t = 0; t < o_.n_trees; ++t) {
      for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - f[i];
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      grow(rows, residual, f, 0);
    }
    return importance_;
  }

 private:
  void grow(std::vector<std::size_t>& rows, const std::vector<double>& r, std::vector<double>& f, int depth) {
    double sum = 0.0;
    for (auto i : rows) sum += r[i];
    const auto count = static_cast<double>(rows.size());
    if (depth < o_.max_depth && rows.size() >= 2) {
      double best_gain = 1e-12;
      std::size_t best_feature = bins_.size();
      int best_cut = -1;
      std::vector<double> hs(n_bins_);
      std::vector<std::size_t> hc(n_bins_);
      for (std::size_t j = 0; j < bins_.size(); ++j) {
        std::fill(hs.begin(), hs.end(), 0.0);
        std::fill(hc.begin(), hc.end(), 0);
        for (auto i : rows) {
          hs[bins_[j][i]] += r[i];
          ++hc[bins_[j][i]];
        }
        double ls = 0.0;
        std::size_t lc = 0;
        for (int b = 0; b + 1 < n_bins_; ++b) {
          ls += hs[b];
          lc += hc[b];
          if (lc == 0 || lc == rows.size()) continue;
          const double rs = sum - ls;
          const auto rc = static_cast<double>(rows.size() - lc);
          const double gain = ls * ls / static_cast<double>(lc) + rs * rs / rc - sum * sum / count;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = j;
            best_cut = b;
          }
        }
      }
      if (best_feature < bins_.size()) {
        importance_[best_feature] += best_gain;
        std::vector<std::size_t> left, right;
        for (auto i : rows) (bins_[best_feature][i] <= best_cut ? left : right).push_back(i);
        grow(left, r, f, depth + 1);
        grow(right, r, f, depth + 1);
        return;
      }
    }
    const double leaf = o_.learning_rate * sum / count;
    for (auto i : rows) f[i] += leaf;
  }

  const std::vector<std::vector<int>>& bins_;
  int n_bins_;
  DciOptions o_;
  std::vector<double> importance_;
};

}  // namespace

Eigen::MatrixXd dci_importance(const FactorCodes& fc, const DciOptions& o) {
  fc.validate();
  if (o.n_trees < 1 || o.max_depth < 1 || !(o.learning_rate > 0.0) || o.split_bins < 2) {
    throw std::invalid_argument("invalid DCI boosting options");
  }
  const Eigen::Index l = fc.latent_dim();
  std::vector<std::vector<int>> bins(static_cast<std::size_t>(l));
  std::vector<double> col(fc.size());
  for (Eigen::Index j = 0; j < l; ++j) {
    for (std::size_t n = 0; n < fc.size(); ++n) col[n] = fc.codes(static_cast<Eigen::Index>(n), j);
    bins[static_cast<std::size_t>(j)] = quantile_bins(col, o.split_bins);
  }
  const auto k_count = fc.factors.num_factors();
  Eigen::MatrixXd importance = Eigen::MatrixXd::Zero(l, static_cast<Eigen::Index>(k_count));
  BoostedTrees trees(bins, o.split_bins, o);
  std::vector<double> y(fc.size());
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t n = 0; n < fc.size(); ++n) y[n] = fc.factors.at(n, k);
    const auto imp = trees.fit(y);
    const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (total <= 0.0) continue;
    for (Eigen::Index j = 0; j < l; ++j) importance(j, static_cast<Eigen::Index>(k)) = imp[static_cast<std::size_t>(j)] / total;
  }
  return importance;
}

double dci_disentanglement(const FactorCodes& fc, const DciOptions& o) {
  const Eigen::MatrixXd r = dci_importance(fc, o);
  const double total = r.sum();
  if (!(total > 0.0)) return 0.0;
  const Eigen::Index k_count = r.cols();
  double score = 0.0;
  for (Eigen::Index j = 0; j < r.rows(); ++j) {
    const double row = r.row(j).sum();
    if (!(row > 0.0)) continue;
    double d = 1.0;
    if (k_count > 1) {
      double h = 0.0;
      for (Eigen::Index k = 0; k < k_count; ++k) {
        const double p = r(j, k) / row;
        if (p > 0.0) h -= p * std::log(p);
      }
      d = 1.0 - h / std::log(static_cast<double>(k_count));
    }
    score += row / total * d;
  }
  return std::clamp(score, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// SAP

Eigen::MatrixXd sap_score_matrix(const FactorCodes& fc, double test_fraction, std::uint64_t seed) {
  fc.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("SAP test fraction must be in (0, 1)");
  const Split split = split_indices(fc.size(), test_fraction, seed);
  if (split.train.size() < 2 || split.heldout.empty()) throw std::invalid_argument("SAP needs more examples");
  const auto k_count = fc.factors.num_factors();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(fc.latent_dim(), static_cast<Eigen::Index>(k_count));
  for (Eigen::Index j = 0; j < fc.latent_dim(); ++j) {
    for (std::size_t k = 0; k < k_count; ++k) {
      double mz = 0.0, my = 0.0;
      for (auto i : split.train) {
        mz += fc.codes(static_cast<Eigen::Index>(i), j);
        my += fc.factors.at(i, k);
      }
      mz /= static_cast<double>(split.train.size());
      my /= static_cast<double>(split.train.size());
      double szz = 0.0, szy = 0.0;
      for (auto i : split.train) {
        const double dz = fc.codes(static_cast<Eigen::Index>(i), j) - mz;
        szz += dz * dz;
        szy += dz * (fc.factors.at(i, k) - my);
      }
      const double slope = szz > 0.0 ? szy / szz : 0.0;
      double ty = 0.0;
      for (auto i : split.heldout) ty += fc.factors.at(i, k);
      ty /= static_cast<double>(split.heldout.size());
      double ss_res = 0.0, ss_tot = 0.0;
      for (auto i : split.heldout) {
        const double y = fc.factors.at(i, k);
        const double pred = my + slope * (fc.codes(static_cast<Eigen::Index>(i), j) - mz);
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - ty) * (y - ty);
      }
      s(j, static_cast<Eigen::Index>(k)) = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 0.0;
    }
  }
  return s;
}

double sap(const FactorCodes& fc, double test_fraction, std::uint64_t seed) {
  const Eigen::MatrixXd s = sap_score_matrix(fc, test_fraction, seed);
  double total = 0.0;
  for (Eigen::Index k = 0; k < s.cols(); ++k) {
    std::vector<double> col(s.col(k).data(), s.col(k).data() + s.rows());
    std::sort(col.begin(), col.end(), std::greater<>());
    total += col[0] - (col.size() > 1 ? col[1] : 0.0);
  }
  return std::clamp(total / static_cast<double>(s.cols()), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// probe and report

ProbeResult linear_probe(const FactorCodes& train, const FactorCodes& test, const LinearClassifier::Options& options) {
  train.validate();
  test.validate();
  if (train.latent_dim() != test.latent_dim()) throw std::invalid_argument("train and test codes differ in width");
  const auto ytr = factor_column(train.factors, 0);
  const auto yte = factor_column(test.factors, 0);
  std::vector<int> seen(ytr);
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  if (seen.size() < 2) throw std::invalid_argument("linear probe needs at least 2 classes in the training split");
  const int n_classes = std::max(*std::max_element(ytr.begin(), ytr.end()), *std::max_element(yte.begin(), yte.end())) + 1;

  LinearClassifier clf(options);
  clf.fit(train.codes, ytr, n_classes);
  ProbeResult r;
  r.n_test = yte.size();
  r.accuracy = clf.accuracy(test.codes, yte);
  for (int y : yte) {
    if (!std::binary_search(seen.begin(), seen.end(), y) &&
        std::find(r.unseen_labels.begin(), r.unseen_labels.end(), y) == r.unseen_labels.end()) {
      r.unseen_labels.push_back(y);
    }
  }
  std::sort(r.unseen_labels.begin(), r.unseen_labels.end());
  return r;
}

MetricReport compute_metrics(const FactorCodes& fc, const MetricConfig& c) {
  fc.validate();
  MetricReport r;
  r.config = c;
  r.n_examples = fc.size();
  r.beta_vae_score = beta_vae_score(fc, c.beta_vae, derive_seed(c.seed, 1));
  r.factor_vae_score = factor_vae_score(fc, c.factor_vae, derive_seed(c.seed, 2));
  const auto rows = subsample(fc.size(), c.max_points, derive_seed(c.seed, 3));
  const FactorCodes sub = rows.size() == fc.size() ? fc : fc.subset(rows);
  r.mig = mig(sub, c.n_bins);
  r.modularity = modularity(sub, c.n_bins);
  r.dci_disentanglement = dci_disentanglement(sub, c.dci);
  r.sap = sap(sub, c.sap_test_fraction, derive_seed(c.seed, 5));
  return r;
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10);
  out << "key,value\n";
  out << "beta_vae_score," << r.beta_vae_score << '\n';
  out << "factor_vae_score," << r.factor_vae_score << '\n';
  out << "mig," << r.mig << '\n';
  out << "dci_disentanglement," << r.dci_disentanglement << '\n';
  out << "modularity," << r.modularity << '\n';
  out << "sap," << r.sap << '\n';
  if (r.probe_accuracy) out << "probe_accuracy," << *r.probe_accuracy << '\n';
  const auto& c = r.config;
  out << "n_examples," << r.n_examples << '\n';
  out << "seed," << c.seed << '\n';
  out << "beta_vae.n_train," << c.beta_vae.n_train << '\n';
  out << "beta_vae.n_eval," << c.beta_vae.n_eval << '\n';
  out << "beta_vae.batch_per_vote," << c.beta_vae.batch_per_vote << '\n';
  out << "factor_vae.n_train," << c.factor_vae.n_train << '\n';
  out << "factor_vae.n_eval," << c.factor_vae.n_eval << '\n';
  out << "factor_vae.batch_size," << c.factor_vae.batch_size << '\n';
  out << "n_bins," << c.n_bins << '\n';
  out << "dci.n_trees," << c.dci.n_trees << '\n';
  out << "dci.max_depth," << c.dci.max_depth << '\n';
  out << "dci.learning_rate," << c.dci.learning_rate << '\n';
  out << "dci.split_bins," << c.dci.split_bins << '\n';
  out << "sap.test_fraction," << c.sap_test_fraction << '\n';
  out << "max_points," << c.max_points << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace bavae
