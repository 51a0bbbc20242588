#include <filesystem>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "bavae/cli.hpp"
#include "bavae/config.hpp"
#include "bavae/rd_analysis.hpp"
#include "doctest.h"

using namespace bavae;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
[dataset]
kind = synthetic
side = 16
factor_sizes = 4,4,2

[model]
image_side = 16
latent_dim = 3
conv_widths = 4
fc_width = 16

[objective]
kind = beta
beta = 4

[train]
steps = 20
batch_size = 8
learning_rate = 0.005
log_every = 5
checkpoint_every = 10

[rd]
eval_samples = 2
heldout_fraction = 0.25

[metrics]
beta_vae_n_train = 200
beta_vae_n_eval = 100
beta_vae_batch_per_vote = 8
factor_vae_n_train = 200
factor_vae_n_eval = 100
factor_vae_batch_size = 8
dci_n_trees = 5
max_points = 32
)";

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "bavae_test_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

struct Run {
  int status;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bavae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config parsing fills every section") {
  const ExperimentConfig c = parse_config(kTiny);
  CHECK(c.dataset.side == 16);
  CHECK(c.dataset.factor_sizes == std::vector<int>{4, 4, 2});
  CHECK(c.model.conv_widths == std::vector<int>{4});
  CHECK(c.objective.kind == ObjectiveKind::beta);
  CHECK(c.objective.beta == 4.0);
  CHECK_FALSE(c.gamma_explicit);
  CHECK(c.train.steps == 20);
  CHECK(c.rd.eval_samples == 2);
  CHECK(c.metrics.dci.n_trees == 5);
}

TEST_CASE("format_config round-trips") {
  const ExperimentConfig c = parse_config(kTiny);
  const ExperimentConfig back = parse_config(format_config(c));
  CHECK(format_config(back) == format_config(c));
  CHECK(back.model == c.model);
  CHECK(back.train.learning_rate == c.train.learning_rate);
}

TEST_CASE("config errors name the offending key") {
  CHECK_THROWS_WITH(parse_config("[model]\nlatent_dims = 3\n"), doctest::Contains("model.latent_dims"));
  CHECK_THROWS_WITH(parse_config("[modle]\nx = 1\n"), doctest::Contains("modle"));
  CHECK_THROWS_WITH(parse_config("[objective]\nkind = beta\nbeta = -1\n"), doctest::Contains("beta"));
  CHECK_THROWS_WITH(parse_config("[train]\nsteps = many\n"), doctest::Contains("train.steps"));
  CHECK_THROWS(parse_config("[dataset]\nkind = imagenet\n"));
  CHECK(parse_config("[objective]\nkind = bottleneck\ngamma = 10\n").gamma_explicit);
}

TEST_CASE("train writes its artifacts and refuses to overwrite") {
  const fs::path dir = fresh_dir("train");
  const fs::path cfg = write_file(dir / "tiny.ini", kTiny);
  const fs::path out = dir / "run";
  const Run r = run_cli({"train", "--config", cfg.string(), "--output", out.string()});
  REQUIRE_MESSAGE(r.status == 0, r.err);
  for (const char* f : {"config.ini", "checkpoint.bin", "checkpoint_step10.bin", "checkpoint_step20.bin",
                        "training_log.ndjson", "kl_per_dim.svg", "elbo_distortion.svg", "summary.csv"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  const TrainingLog log = read_training_log(out / "training_log.ndjson");
  CHECK(log.records.size() == 5);

  const Run again = run_cli({"train", "--config", cfg.string(), "--output", out.string()});
  CHECK(again.status != 0);
  CHECK(again.err.find("error") != std::string::npos);
  const Run forced = run_cli({"train", "--config", cfg.string(), "--output", out.string(), "--force"});
  CHECK(forced.status == 0);
  CHECK(read_training_log(out / "training_log.ndjson") == log);
}

TEST_CASE("metrics and traverse read a trained checkpoint") {
  const fs::path dir = fresh_dir("post");
  const fs::path cfg = write_file(dir / "tiny.ini", kTiny);
  REQUIRE(run_cli({"train", "--config", cfg.string(), "--output", (dir / "run").string()}).status == 0);
  const std::string ck = (dir / "run" / "checkpoint.bin").string();

  const Run m = run_cli({"metrics", "--config", cfg.string(), "--output", (dir / "m").string(), "--checkpoint", ck});
  REQUIRE_MESSAGE(m.status == 0, m.err);
  CHECK(slurp(dir / "m" / "metrics.csv").find("mig") != std::string::npos);

  const Run t = run_cli({"traverse", "--config", cfg.string(), "--output", (dir / "t").string(), "--checkpoint", ck,
                         "--image-index", "3", "--grid", "-1,0,1"});
  REQUIRE_MESSAGE(t.status == 0, t.err);
  for (const char* f : {"per_dim_kl.csv", "traversal.png", "traversal.npy", "grid.csv"})
    CHECK_MESSAGE(fs::exists(dir / "t" / f), f);
  const cv::Mat png = cv::imread((dir / "t" / "traversal.png").string(), cv::IMREAD_UNCHANGED);
  CHECK_FALSE(png.empty());
  CHECK(slurp(dir / "t" / "traversal.npy").find("(3, 3, 16, 16)") != std::string::npos);

  CHECK(run_cli({"traverse", "--config", cfg.string(), "--output", (dir / "t2").string(), "--checkpoint", ck,
                 "--image-index", "32"})
            .status != 0);
  CHECK(run_cli({"metrics", "--config", cfg.string(), "--output", (dir / "m2").string(), "--checkpoint",
                 (dir / "missing.bin").string()})
            .status != 0);
}

TEST_CASE("sweep writes points and an ordering verdict") {
  const fs::path dir = fresh_dir("sweep");
  const fs::path cfg = write_file(dir / "tiny.ini", kTiny);
  const Run r = run_cli({"sweep", "--config", cfg.string(), "--output", (dir / "s").string(), "--hyper", "beta",
                         "--values", "0.5,4", "--seeds", "0,1", "--workers", "2"});
  REQUIRE_MESSAGE(r.status == 0, r.err);
  CHECK(read_rd_table(dir / "s" / "rd_points.csv").size() == 4);
  for (const char* f : {"ordering_verdict.txt", "sandwich.csv", "rd_scatter.svg", "sweep_elbo_distortion.svg"})
    CHECK_MESSAGE(fs::exists(dir / "s" / f), f);
  CHECK(slurp(dir / "s" / "ordering_verdict.txt").find("verdict:") != std::string::npos);

  CHECK(run_cli({"sweep", "--config", cfg.string(), "--output", (dir / "s1").string(), "--values", "1"}).status != 0);
  // A C sweep needs gamma stated in the config.
  CHECK(run_cli({"sweep", "--config", cfg.string(), "--output", (dir / "s2").string(), "--hyper", "c", "--values",
                 "1,2"})
            .status != 0);
  CHECK(run_cli({"sweep", "--config", cfg.string(), "--output", (dir / "s3").string(), "--hyper", "gamma",
                 "--values", "1,2"})
            .status != 0);
}

TEST_CASE("probe on a labeled folder") {
  const fs::path dir = fresh_dir("probe");
  const fs::path root = dir / "images";
  for (int c = 0; c < 2; ++c) {
    fs::create_directories(root / ("class" + std::to_string(c)));
    for (int i = 0; i < 10; ++i) {
      cv::Mat img(16, 16, CV_8UC1, cv::Scalar(0));
      img(cv::Rect(c ? 8 : 0, i % 8, 8, 8)).setTo(255);
      cv::imwrite((root / ("class" + std::to_string(c)) / ("i" + std::to_string(i) + ".png")).string(), img);
    }
  }
  const fs::path train_cfg = write_file(dir / "tiny.ini", kTiny);
  REQUIRE(run_cli({"train", "--config", train_cfg.string(), "--output", (dir / "run").string()}).status == 0);
  const std::string folder_cfg =
      std::string(kTiny).replace(std::string(kTiny).find("kind = synthetic"), 16, "kind = folder\npath = " + root.string());
  const fs::path cfg = write_file(dir / "folder.ini", folder_cfg);
  const std::string ck = (dir / "run" / "checkpoint.bin").string();
  const Run r = run_cli({"probe", "--config", cfg.string(), "--output", (dir / "p").string(), "--checkpoint", ck,
                         "--split", "0.5"});
  REQUIRE_MESSAGE(r.status == 0, r.err);
  CHECK(slurp(dir / "p" / "probe.csv").find("accuracy") != std::string::npos);

  CHECK(run_cli({"probe", "--config", cfg.string(), "--output", (dir / "p2").string(), "--checkpoint", ck,
                 "--split", "1.5"})
            .status != 0);
  CHECK(run_cli({"probe", "--config", train_cfg.string(), "--output", (dir / "p3").string(), "--checkpoint", ck})
            .status != 0);
  CHECK(run_cli({"metrics", "--config", cfg.string(), "--output", (dir / "p4").string(), "--checkpoint", ck}).status !=
        0);
}

TEST_CASE("unknown subcommands and missing options fail cleanly") {
  CHECK(run_cli({"fly"}).status != 0);
  CHECK(run_cli({"train"}).status != 0);
  CHECK(run_cli({"train", "--config", "/nonexistent/x.ini"}).status != 0);
}
