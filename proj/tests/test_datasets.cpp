#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <zlib.h>

#include "bavae/datasets.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace bavae;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bavae_test_datasets" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string npy(const std::string& descr, const std::vector<std::size_t>& shape, const std::string& payload) {
  std::string shp = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) shp += (i ? ", " : "") + std::to_string(shape[i]);
  shp += shape.size() == 1 ? ",)" : ")";
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shp + ", }";
  while ((10 + dict.size() + 1) % 64 != 0) dict += ' ';
  dict += '\n';
  std::string out = "\x93NUMPY";
  out += '\x01';
  out += '\x00';
  out += static_cast<char>(dict.size() & 0xff);
  out += static_cast<char>(dict.size() >> 8);
  return out + dict + payload;
}

void put16(std::string& s, unsigned v) {
  s += static_cast<char>(v & 0xff);
  s += static_cast<char>((v >> 8) & 0xff);
}
void put32(std::string& s, unsigned long v) {
  put16(s, static_cast<unsigned>(v & 0xffff));
  put16(s, static_cast<unsigned>(v >> 16));
}

std::string raw_deflate(const std::string& data) {
  z_stream zs;
  std::memset(&zs, 0, sizeof zs);
  deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY);
  std::string out(deflateBound(&zs, data.size()), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

/// Minimal zip writer: one local header per entry, then the central directory.
void write_zip(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& files, bool deflate) {
  std::string body, cd;
  for (const auto& [name, data] : files) {
    const auto crc = crc32(0, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size()));
    const std::string stored = deflate ? raw_deflate(data) : data;
    const auto offset = body.size();
    std::string h;
    put32(h, 0x04034b50);
    put16(h, 20);
    put16(h, 0);
    put16(h, deflate ? 8 : 0);
    put16(h, 0);
    put16(h, 0);
    put32(h, crc);
    put32(h, stored.size());
    put32(h, data.size());
    put16(h, static_cast<unsigned>(name.size()));
    put16(h, 0);
    body += h + name + stored;
    std::string c;
    put32(c, 0x02014b50);
    put16(c, 20);
    put16(c, 20);
    put16(c, 0);
    put16(c, deflate ? 8 : 0);
    put16(c, 0);
    put16(c, 0);
    put32(c, crc);
    put32(c, stored.size());
    put32(c, data.size());
    put16(c, static_cast<unsigned>(name.size()));
    put16(c, 0);
    put16(c, 0);
    put16(c, 0);
    put16(c, 0);
    put32(c, 0);
    put32(c, offset);
    cd += c + name;
  }
  std::string e;
  put32(e, 0x06054b50);
  put16(e, 0);
  put16(e, 0);
  put16(e, static_cast<unsigned>(files.size()));
  put16(e, static_cast<unsigned>(files.size()));
  put32(e, cd.size());
  put32(e, body.size());
  put16(e, 0);
  std::ofstream(path, std::ios::binary) << body << cd << e;
}

FactorArchiveLayout tiny_layout() {
  FactorArchiveLayout l;
  l.side = 4;
  l.column_names = {"color", "shape", "scale"};
  l.column_sizes = {1, 2, 3};
  return l;
}

/// Six 4x4 binary images over a (1, 2, 3) factor grid; image n lights pixel n.
std::vector<std::pair<std::string, std::string>> tiny_archive(std::uint8_t lit = 1) {
  std::string imgs(6 * 16, '\0');
  for (int n = 0; n < 6; ++n) imgs[n * 16 + n] = static_cast<char>(lit);
  std::string classes;
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 3; ++c)
      for (std::int64_t v : {std::int64_t{0}, std::int64_t{s}, std::int64_t{c}})
        for (int b = 0; b < 8; ++b) classes += static_cast<char>((v >> (8 * b)) & 0xff);
  return {{"imgs.npy", npy("|u1", {6, 4, 4}, imgs)}, {"latents_classes.npy", npy("<i8", {6, 3}, classes)}};
}

double centroid_x(const ImageSet& set, std::size_t n) {
  double sum = 0.0, mass = 0.0;
  for (int y = 0; y < set.side; ++y)
    for (int x = 0; x < set.side; ++x) {
      const double v = set.pixel(n, y * set.side + x);
      sum += v * x;
      mass += v;
    }
  return sum / mass;
}

}  // namespace

TEST_CASE("synthetic squares form a complete factor grid") {
  const FactorDataset ds = generate_synthetic(32, {8, 6, 4});
  CHECK(ds.images.size() == 192);
  CHECK(ds.factors.rows() == 192);
  CHECK(ds.factors.is_full_grid());
  CHECK(ds.factors.names == std::vector<std::string>{"posX", "posY", "scale"});
  for (std::size_t n = 0; n < ds.images.size(); ++n) {
    int lit = 0;
    for (auto v : ds.images.image(n)) {
      CHECK((v == 0 || v == 255));
      lit += v != 0;
    }
    CHECK(lit > 0);
  }
}

TEST_CASE("horizontal position moves the square right") {
  const FactorDataset ds = generate_synthetic(32, {8, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int s = 0; s < 2; ++s) {
      double prev = -1.0;
      for (std::size_t n = 0; n < ds.factors.rows(); ++n) {
        if (ds.factors.at(n, 1) != y || ds.factors.at(n, 2) != s) continue;
        const double cx = centroid_x(ds.images, n);
        CHECK(cx > prev);
        prev = cx;
      }
    }
}

TEST_CASE("synthetic generation is deterministic and validates its arguments") {
  const FactorDataset a = generate_synthetic(32, {4, 4, 2, 3}, 5);
  const FactorDataset b = generate_synthetic(32, {4, 4, 2, 3}, 5);
  CHECK(a.images.data == b.images.data);
  CHECK(a.factors.values == b.factors.values);
  CHECK_THROWS_AS(generate_synthetic(8, {2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(32, {4}), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(16, {40, 40}), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(32, {4, 0}), std::invalid_argument);
}

TEST_CASE("dataset cache round trip") {
  const FactorDataset ds = generate_synthetic(16, {3, 3, 2});
  const fs::path p = temp_dir("cache") / "ds.bin";
  save_dataset_cache(p, ds);
  const FactorDataset back = load_dataset_cache(p);
  CHECK(back.images.side == 16);
  CHECK(back.images.data == ds.images.data);
  CHECK(back.factors.values == ds.factors.values);
  CHECK(back.factors.sizes == ds.factors.sizes);
  CHECK(back.factors.names == ds.factors.names);
  std::ofstream(p, std::ios::binary) << "garbage";
  CHECK_THROWS_AS(load_dataset_cache(p), std::runtime_error);
}

TEST_CASE("factor archives load from stored and deflated entries") {
  for (bool deflate : {false, true}) {
    const fs::path p = temp_dir(deflate ? "npz_deflate" : "npz_stored") / "tiny.npz";
    write_zip(p, tiny_archive(), deflate);
    const FactorDataset ds = load_factor_archive(p, tiny_layout());
    CHECK(ds.images.size() == 6);
    CHECK(ds.factors.names == std::vector<std::string>{"shape", "scale"});
    CHECK(ds.factors.sizes == std::vector<int>{2, 3});
    CHECK(ds.factors.at(4, 0) == 1);
    CHECK(ds.factors.at(4, 1) == 1);
    for (int n = 0; n < 6; ++n) CHECK(ds.images.pixel(static_cast<std::size_t>(n), n) == 1.0f);
  }
}

TEST_CASE("factor archive problems are reported") {
  const fs::path dir = temp_dir("npz_bad");
  SUBCASE("non-binary pixels") {
    write_zip(dir / "a.npz", tiny_archive(7), true);
    CHECK_THROWS_WITH_AS(load_factor_archive(dir / "a.npz", tiny_layout()), doctest::Contains("non-binary"),
                         std::runtime_error);
  }
  SUBCASE("shape mismatch names both shapes") {
    FactorArchiveLayout l = tiny_layout();
    l.side = 5;
    write_zip(dir / "b.npz", tiny_archive(), false);
    CHECK_THROWS_WITH_AS(load_factor_archive(dir / "b.npz", l), doctest::Contains("shape mismatch"), std::runtime_error);
  }
  SUBCASE("missing entry") {
    auto files = tiny_archive();
    files.pop_back();
    write_zip(dir / "c.npz", files, false);
    CHECK_THROWS_WITH_AS(load_factor_archive(dir / "c.npz", tiny_layout()), doctest::Contains("latents_classes"),
                         std::runtime_error);
  }
  SUBCASE("not a zip") {
    std::ofstream(dir / "d.npz") << "plain text";
    CHECK_THROWS_AS(load_factor_archive(dir / "d.npz", tiny_layout()), std::runtime_error);
  }
  SUBCASE("absent file") { CHECK_THROWS_AS(load_dsprites(dir / "none.npz"), std::runtime_error); }
}

TEST_CASE("labeled folders read classes in sorted order") {
  const fs::path root = temp_dir("folder");
  for (const char* cls : {"b_cat", "a_dog"}) {
    fs::create_directories(root / cls);
    for (int i = 0; i < 3; ++i) {
      cv::Mat img(12, 12, CV_8UC1, cv::Scalar(cls[0] == 'a' ? 40 : 200));
      cv::imwrite((root / cls / ("img" + std::to_string(i) + ".png")).string(), img);
    }
  }
  const LabeledImageSet set = load_labeled_folder(root, 6);
  CHECK(set.n_classes == 2);
  CHECK(set.class_names == std::vector<std::string>{"a_dog", "b_cat"});
  CHECK(set.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(set.images.side == 6);
  CHECK(set.images.data[0] == 40);
  CHECK(set.images.data.back() == 200);
  CHECK_THROWS_AS(load_labeled_folder(root / "a_dog", 6), std::runtime_error);
}

TEST_CASE("split is disjoint, covering and reproducible") {
  for (std::size_t n : {0u, 1u, 10u, 1000u}) {
    const Split s = split_indices(n, 0.1, 3);
    CHECK(s.heldout.size() == static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    for (auto i : s.heldout) CHECK(all.insert(i).second);
    CHECK(all.size() == n);
    const Split again = split_indices(n, 0.1, 3);
    CHECK(again.train == s.train);
    CHECK(again.heldout == s.heldout);
  }
  CHECK(split_indices(1000, 0.1, 3).heldout != split_indices(1000, 0.1, 4).heldout);
  CHECK_THROWS_AS(split_indices(10, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(split_indices(10, -0.1, 0), std::invalid_argument);
}

TEST_CASE("pairs share the value of the fixed factor") {
  const FactorTable t = fixtures::full_grid({3, 4, 5});
  FactorConditionalSampler sampler(t, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const FactorPairs p = sampler.sample_pairs(20);
    for (auto [a, b] : p.pairs) CHECK(t.at(a, p.factor) == t.at(b, p.factor));
    const FactorGroup g = sampler.sample_group(10);
    for (auto i : g.indices) CHECK(t.at(i, g.factor) == g.value);
  }
}

TEST_CASE("fixed factors are chosen uniformly and constant factors never") {
  FactorTable t = fixtures::full_grid({3, 1, 4});
  FactorConditionalSampler sampler(t, 2);
  CHECK(sampler.eligible_factors() == std::vector<int>{0, 2});
  const int draws = 6000;
  int first = 0;
  for (int i = 0; i < draws; ++i) first += sampler.sample_group(1).factor == 0;
  const double sigma = std::sqrt(draws * 0.25);
  CHECK(std::abs(first - draws / 2.0) < 3.0 * sigma);
  CHECK_THROWS_AS(FactorConditionalSampler(fixtures::full_grid({1, 1}), 0), std::invalid_argument);
}

TEST_CASE("factor table validation and subsets") {
  FactorTable t = fixtures::full_grid({2, 3});
  CHECK(t.is_full_grid());
  const std::vector<std::size_t> idx{5, 0};
  const FactorTable s = t.subset(idx);
  CHECK(s.rows() == 2);
  CHECK(s.at(0, 1) == 2);
  CHECK_FALSE(s.is_full_grid());
  t.values[0] = 9;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}
