#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "bavae/rd_analysis.hpp"
#include "doctest.h"

using namespace bavae;
namespace fs = std::filesystem;

namespace {

const FactorDataset& tiny_data() {
  static const FactorDataset ds = generate_synthetic(16, {4, 4, 2});
  return ds;
}

ArchitectureConfig tiny_model(std::uint64_t seed = 0) {
  ArchitectureConfig c;
  c.image_side = 16;
  c.latent_dim = 3;
  c.conv_widths = {4};
  c.fc_width = 16;
  c.seed = seed;
  return c;
}

TrainConfig short_run(std::int64_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 8;
  t.learning_rate = 5e-3;
  t.log_every = steps;
  return t;
}

RDPoint pt(HyperKind k, double v, double rate, double distortion, std::uint64_t seed = 0) {
  return {k, v, rate, distortion, -(rate + distortion), seed};
}

}  // namespace

TEST_CASE("a zeroed encoder head has zero rate") {
  ModelParameters p = init_parameters(tiny_model());
  p.at("enc.head.weight").setZero();
  p.at("enc.head.bias").setZero();
  const RDMeasurement m = measure_rd(p, tiny_data().images, {});
  CHECK(m.rate == 0.0);
  CHECK(m.distortion > 0.0);
  CHECK(m.elbo == doctest::Approx(-m.distortion));
}

TEST_CASE("rate is closed form and independent of the number of draws") {
  const ModelParameters p = init_parameters(tiny_model(1));
  const std::vector<std::size_t> idx{1, 4, 9, 16, 25};
  const RDMeasurement one = measure_rd(p, tiny_data().images, idx, 1, 3);
  const RDMeasurement many = measure_rd(p, tiny_data().images, idx, 16, 3);
  CHECK(one.rate == many.rate);
  CHECK(many.elbo == doctest::Approx(-(many.rate + many.distortion)).epsilon(1e-12));

  const Eigen::MatrixXf x = tiny_data().images.batch(idx);
  const PosteriorBatch q = encode(p, x);
  CHECK(one.rate == doctest::Approx(kl_per_dim(q).colwise().sum().mean()).epsilon(1e-6));
}

TEST_CASE("distortion from one draw differs from sixteen by sampling noise only") {
  const ModelParameters p = init_parameters(tiny_model(1));
  const std::vector<std::size_t> idx{0, 3, 7, 12, 18, 22, 27, 31};
  std::vector<double> single;
  for (std::uint64_t s = 0; s < 20; ++s) single.push_back(measure_rd(p, tiny_data().images, idx, 1, 100 + s).distortion);
  const double mean = std::accumulate(single.begin(), single.end(), 0.0) / 20.0;
  double var = 0.0;
  for (double d : single) var += (d - mean) * (d - mean) / 19.0;
  const double se1 = std::sqrt(var);
  const double d1 = measure_rd(p, tiny_data().images, idx, 1, 7).distortion;
  const double d16 = measure_rd(p, tiny_data().images, idx, 16, 7).distortion;
  CHECK(std::abs(d1 - d16) < 4.0 * se1 * std::sqrt(1.0 + 1.0 / 16.0));
}

TEST_CASE("measure_rd rejects bad inputs") {
  const ModelParameters p = init_parameters(tiny_model());
  ImageSet empty;
  empty.side = 16;
  CHECK_THROWS(measure_rd(p, empty, {}));
  ImageSet wrong = tiny_data().images;
  wrong.side = 8;
  CHECK_THROWS(measure_rd(p, wrong, {}));
  CHECK_THROWS(measure_rd(p, tiny_data().images, {}, 0));
}

TEST_CASE("sandwich check uses log N") {
  const SandwichCheck s = sandwich_check({2.0, 5.0, -7.0}, 100);
  CHECK(s.entropy_upper_proxy == doctest::Approx(std::log(100.0)));
  CHECK(s.h_minus_d == doctest::Approx(std::log(100.0) - 5.0));
  CHECK(s.consistent);
  CHECK_FALSE(sandwich_check({0.1, 0.5, -0.6}, 100).consistent);
}

TEST_CASE("ordering check on hand-made points") {
  SUBCASE("beta: rate falls and distortion rises") {
    const auto r = check_lemma1({pt(HyperKind::beta, 1, 10, 50), pt(HyperKind::beta, 4, 5, 60),
                                 pt(HyperKind::beta, 0.5, 15, 45)});
    CHECK(r.holds);
    CHECK(r.values == std::vector<double>{0.5, 1, 4});
    CHECK(r.violations.empty());
  }
  SUBCASE("C: the reverse") {
    const auto r = check_lemma1({pt(HyperKind::c, 2, 2, 80), pt(HyperKind::c, 6, 6, 60), pt(HyperKind::c, 12, 11, 40)});
    CHECK(r.holds);
  }
  SUBCASE("a tie is a violation") {
    const auto r = check_lemma1({pt(HyperKind::beta, 1, 10, 50), pt(HyperKind::beta, 2, 10, 55)});
    CHECK_FALSE(r.holds);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].quantity == "rate");
  }
  SUBCASE("non-adjacent pairs are checked too") {
    const auto r = check_lemma1(
        {pt(HyperKind::beta, 1, 10, 50), pt(HyperKind::beta, 2, 9, 51), pt(HyperKind::beta, 3, 8, 49.5)});
    CHECK_FALSE(r.holds);
    CHECK(r.violations.size() == 2);
  }
  SUBCASE("medians over seeds") {
    const auto r = check_lemma1({pt(HyperKind::beta, 1, 10, 50, 0), pt(HyperKind::beta, 1, 100, 50, 1),
                                 pt(HyperKind::beta, 1, 11, 50, 2), pt(HyperKind::beta, 2, 9, 60, 0)});
    CHECK(r.median_rate[0] == 11.0);
    CHECK(r.holds);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(check_lemma1({pt(HyperKind::beta, 1, 1, 1), pt(HyperKind::c, 2, 1, 1)}), std::invalid_argument);
    CHECK_THROWS_AS(check_lemma1({pt(HyperKind::beta, 1, 1, 1), pt(HyperKind::beta, 1, 2, 1, 1)}),
                    std::invalid_argument);
  }
  CHECK(format_lemma1_report(check_lemma1({pt(HyperKind::beta, 1, 10, 50), pt(HyperKind::beta, 2, 9, 51)}))
            .find("HOLD") != std::string::npos);
}

TEST_CASE("the verdict does not depend on point order") {
  std::vector<RDPoint> pts;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (double v : {0.5, 1.0, 2.0, 4.0})
    for (std::uint64_t s = 0; s < 3; ++s) pts.push_back(pt(HyperKind::beta, v, u(rng), u(rng), s));
  const auto ref = check_lemma1(pts);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto r = check_lemma1(pts);
    CHECK(r.holds == ref.holds);
    CHECK(r.median_rate == ref.median_rate);
    CHECK(r.violations.size() == ref.violations.size());
  }
}

TEST_CASE("sweep objectives") {
  SweepSpec s;
  s.kind = HyperKind::c;
  s.objective.gamma = 30.0;
  const ObjectiveConfig c = sweep_objective(s, 4.0);
  CHECK(c.kind == ObjectiveKind::bottleneck);
  CHECK(c.gamma == 30.0);
  CHECK(effective_hyperparameter(c, 0) == 4.0);
  CHECK(effective_hyperparameter(c, 100000) == 4.0);
  s.kind = HyperKind::beta;
  const ObjectiveConfig b = sweep_objective(s, 2.5);
  CHECK(b.kind == ObjectiveKind::beta);
  CHECK(b.beta == 2.5);
}

TEST_CASE("a sweep yields one point per cell in (value, seed) order") {
  SweepSpec s;
  s.kind = HyperKind::beta;
  s.values = {4.0, 0.5, 1.0};
  s.seeds = {1, 0};
  s.model = tiny_model();
  s.train = short_run(5);
  s.eval_samples = 2;
  s.workers = 2;
  int seen = 0;
  const SweepResult r = sweep(s, tiny_data().images, [&](const RDPoint&) { ++seen; });
  CHECK(seen == 6);
  CHECK(r.failures.empty());
  REQUIRE(r.points.size() == 6);
  CHECK(r.points[0].hyper_value == 0.5);
  CHECK(r.points[0].seed == 0);
  CHECK(r.points[1].seed == 1);
  CHECK(r.points[5].hyper_value == 4.0);

  s.workers = 1;
  const SweepResult serial = sweep(s, tiny_data().images);
  for (std::size_t i = 0; i < 6; ++i) CHECK(serial.points[i].rate == r.points[i].rate);

  s.values = {1.0};
  CHECK_THROWS_AS(sweep(s, tiny_data().images), std::invalid_argument);
}

TEST_CASE("failed cells are reported rather than aborting the sweep") {
  SweepSpec s;
  s.values = {1.0, 2.0};
  s.seeds = {0};
  s.model = tiny_model();
  s.model.likelihood = {LikelihoodFamily::gaussian, 1e-300};
  s.train = short_run(5);
  const SweepResult r = sweep(s, tiny_data().images);
  CHECK(r.points.empty());
  REQUIRE(r.failures.size() == 2);
  CHECK(r.failures[0].hyper_value == 1.0);
  CHECK_FALSE(r.failures[0].message.empty());
}

TEST_CASE("a heavier rate penalty trades rate for distortion on a small model") {
  SweepSpec s;
  s.values = {0.5, 8.0};
  s.seeds = {0};
  s.model = tiny_model();
  s.train = short_run(300);
  s.heldout_fraction = 0.25;
  const SweepResult r = sweep(s, tiny_data().images);
  REQUIRE(r.points.size() == 2);
  CHECK(r.points[0].rate > r.points[1].rate);
  CHECK(r.points[0].distortion < r.points[1].distortion);
  CHECK(check_lemma1(r.points).holds);
}

TEST_CASE("rd table round trip") {
  const std::vector<RDPoint> pts{pt(HyperKind::beta, 0.5, 12.25, 80.125, 3), pt(HyperKind::c, 6, 6.1, 70.3, 0)};
  const fs::path p = fs::temp_directory_path() / "bavae_test_rd.csv";
  write_rd_table(p, pts);
  const auto back = read_rd_table(p);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].hyper_kind == pts[i].hyper_kind);
    CHECK(back[i].hyper_value == pts[i].hyper_value);
    CHECK(back[i].rate == pts[i].rate);
    CHECK(back[i].distortion == pts[i].distortion);
    CHECK(back[i].elbo == pts[i].elbo);
    CHECK(back[i].seed == pts[i].seed);
  }
  CHECK_THROWS_AS(hyper_kind_from_string("gamma"), std::invalid_argument);
}

namespace {

const FactorDataset& desk_data() {
  static const FactorDataset ds = generate_synthetic(32, {16, 16, 4});
  return ds;
}

TrainConfig desk_run(std::int64_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.log_every = 100;
  return t;
}

}  // namespace

TEST_CASE("desk models: beta 0.5 against beta 8") {
  SweepSpec s;
  s.values = {0.5, 8.0};
  s.seeds = {0};
  s.model = ArchitectureConfig::desk();
  s.train = desk_run(3000);
  const SweepResult r = sweep(s, desk_data().images);
  REQUIRE(r.points.size() == 2);
  MESSAGE("rates " << r.points[0].rate << " " << r.points[1].rate << ", distortions " << r.points[0].distortion << " "
                   << r.points[1].distortion);
  CHECK(r.points[0].rate > r.points[1].rate);
  CHECK(r.points[0].distortion < r.points[1].distortion);
}

TEST_CASE("a zero capacity matches the beta objective with beta = gamma") {
  const Split split = split_indices(desk_data().images.size(), 0.1, 0);
  ObjectiveConfig beta;
  beta.kind = ObjectiveKind::beta;
  beta.beta = 4.0;
  ObjectiveConfig cap;
  cap.kind = ObjectiveKind::bottleneck;
  cap.gamma = 4.0;
  cap.c_schedule = ScheduleSpec::constant(0.0);
  const TrainConfig t = desk_run(1500);
  const auto a = train(ArchitectureConfig::desk(), beta, t, desk_data().images, split.train);
  const auto b = train(ArchitectureConfig::desk(), cap, t, desk_data().images, split.train);
  const RDMeasurement ma = measure_rd(a.params, desk_data().images, split.heldout);
  const RDMeasurement mb = measure_rd(b.params, desk_data().images, split.heldout);
  CHECK(std::abs(ma.rate - mb.rate) < 0.5);
  CHECK(std::abs(ma.distortion - mb.distortion) < 0.5);
}

TEST_CASE("capacity targets order the measured rates") {
  SweepSpec s;
  s.kind = HyperKind::c;
  s.values = {5.0, 25.0, 100.0};
  s.seeds = {0};
  s.model = ArchitectureConfig::desk();
  s.objective.gamma = 100.0;
  s.train = desk_run(1500);
  const SweepResult r = sweep(s, desk_data().images);
  REQUIRE(r.points.size() == 3);
  for (const auto& p : r.points) MESSAGE("C " << p.hyper_value << " -> rate " << p.rate);
  CHECK(r.points[0].rate < r.points[1].rate);
  CHECK(r.points[1].rate < r.points[2].rate);
}
