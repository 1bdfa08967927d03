#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"

#include "rarefind/dataset.hpp"
#include "rarefind/error.hpp"

using namespace rarefind;
namespace fs = std::filesystem;
using testing::make_toy;
using testing::TempDir;

namespace {

// Writes a 6x2 dataset by hand with an explicit byte count for the features.
fs::path write_six_by_two(const fs::path& dir, std::size_t feature_bytes) {
  std::vector<float> values = {3, 4, 1, 0, 0, 2, -1, 0, 0, -5, 6, 8};
  {
    std::ofstream f(dir / "f.bin", std::ios::binary);
    f.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(feature_bytes));
  }
  write_u32_file(dir / "l.bin", std::vector<std::uint32_t>{0, 0, 1, 1, 2, 2});
  write_u32_file(dir / "pool.bin", std::vector<std::uint32_t>{0, 2, 4, 5});
  write_u32_file(dir / "test.bin", std::vector<std::uint32_t>{1, 3});
  nlohmann::json m{{"name", "six"},
                   {"dim", 2},
                   {"num_samples", 6},
                   {"features_file", "f.bin"},
                   {"labels_file", "l.bin"},
                   {"split_files", {{"pool", "pool.bin"}, {"test", "test.bin"}}},
                   {"class_names", {"a", "b", "c"}}};
  std::ofstream(dir / "six.json") << m.dump();
  return dir / "six.json";
}

Errc error_code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::invalid_argument;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("6x2 manifest with a 48-byte feature file loads") {
  TempDir dir("six");
  const auto path = write_six_by_two(dir.path, 48);
  const EmbeddedDataset ds = load_dataset(path, false);
  CHECK(ds.size() == 6);
  CHECK(ds.dim() == 2);
  CHECK(ds.features().row(5)[0] == 6.0f);
  CHECK(ds.features().row(5)[1] == 8.0f);
  CHECK(ds.pool().size() == 4);
  CHECK(ds.test().size() == 2);
  CHECK(ds.label(3) == 1);
  CHECK(ds.in_pool(4));
  CHECK_FALSE(ds.in_pool(3));
  CHECK(ds.pool_members(2) == std::vector<SampleId>{4, 5});
}

TEST_CASE("normalization maps (3, 4) to (0.6, 0.8)") {
  TempDir dir("norm");
  const auto path = write_six_by_two(dir.path, 48);
  const EmbeddedDataset ds = load_dataset(path, true);
  CHECK(ds.normalized());
  CHECK(ds.features().row(0)[0] == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(ds.features().row(0)[1] == doctest::Approx(0.8).epsilon(1e-7));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = ds.features().row(i);
    CHECK(std::sqrt(dot(r, r)) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("a 47-byte feature file for 6x2 is a dimension mismatch") {
  TempDir dir("short");
  const auto path = write_six_by_two(dir.path, 47);
  CHECK(error_code_of([&] { load_dataset(path, false); }) == Errc::dimension_mismatch);
}

TEST_CASE("missing files and malformed manifests are reported") {
  TempDir dir("bad");
  CHECK(error_code_of([&] { load_dataset(dir.path / "nope.json"); }) == Errc::not_found);

  std::ofstream(dir.path / "broken.json") << "{ not json";
  CHECK(error_code_of([&] { read_manifest(dir.path / "broken.json"); }) == Errc::format_error);

  nlohmann::json m{{"name", "x"},
                   {"dim", 2},
                   {"num_samples", 1},
                   {"features_file", "f"},
                   {"labels_file", "l"},
                   {"split_files", {{"pool", "p"}}},
                   {"class_names", {"a"}}};
  std::ofstream(dir.path / "nosplit.json") << m.dump();
  CHECK(error_code_of([&] { read_manifest(dir.path / "nosplit.json"); }) == Errc::format_error);

  m["split_files"]["test"] = "t";
  m["image_paths"] = {"a.png", "b.png"};
  std::ofstream(dir.path / "images.json") << m.dump();
  CHECK(error_code_of([&] { read_manifest(dir.path / "images.json"); }) == Errc::format_error);
}

TEST_CASE("make_dataset validation") {
  SUBCASE("non-finite values") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    CHECK(error_code_of([&] { make_toy(2, {0, 1, nan, 2}, {0, 1}); }) == Errc::non_finite);
    const float inf = std::numeric_limits<float>::infinity();
    CHECK(error_code_of([&] { make_toy(2, {0, 1, inf, 2}, {0, 1}); }) == Errc::non_finite);
  }
  SUBCASE("overlapping pool and test") {
    DatasetManifest m{"o", 1, 2, {}, {}, {}, {"a"}, {}};
    CHECK(error_code_of([&] {
            make_dataset(m, {0, 1}, {0, 0}, {{"pool", {0, 1}}, {"test", {1}}}, false);
          }) == Errc::overlapping_splits);
  }
  SUBCASE("split index out of range") {
    DatasetManifest m{"o", 1, 2, {}, {}, {}, {"a"}, {}};
    CHECK(error_code_of([&] {
            make_dataset(m, {0, 1}, {0, 0}, {{"pool", {0, 2}}, {"test", {}}}, false);
          }) == Errc::invalid_index);
  }
  SUBCASE("label outside the class list") {
    DatasetManifest m{"o", 1, 2, {}, {}, {}, {"a"}, {}};
    CHECK(error_code_of([&] {
            make_dataset(m, {0, 1}, {0, 1}, {{"pool", {0}}, {"test", {1}}}, false);
          }) == Errc::format_error);
  }
  SUBCASE("feature count differs from N*d") {
    DatasetManifest m{"o", 2, 2, {}, {}, {}, {"a"}, {}};
    CHECK(error_code_of([&] {
            make_dataset(m, {0, 1, 2}, {0, 0}, {{"pool", {0}}, {"test", {1}}}, false);
          }) == Errc::dimension_mismatch);
  }
}

TEST_CASE("class_stats on pool labels [0,0,0,1]") {
  const auto ds = make_toy(1, {0, 1, 2, 3, 4}, {0, 0, 0, 1, 1}, {4});
  const ClassStats s = class_stats(ds);
  REQUIRE(s.classes.size() == 2);
  CHECK(s.pool_size == 4);
  CHECK(s.classes[0].size == 3);
  CHECK(s.classes[0].frequency == 0.75);
  CHECK(s.classes[1].frequency == 0.25);
  CHECK(s.min == 0.25);
  CHECK(s.max == 0.75);
  CHECK(s.mean == 0.5);
  CHECK(s.median == 0.5);
}

TEST_CASE("class_stats on a single-class pool") {
  const auto ds = make_toy(1, {0, 1, 2}, {0, 0, 0});
  const ClassStats s = class_stats(ds);
  CHECK(s.min == 1.0);
  CHECK(s.max == 1.0);
  CHECK(s.mean == 1.0);
  CHECK(s.median == 1.0);
}

TEST_CASE("class_stats frequencies sum to one") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    const std::size_t classes = 1 + rng.below(20);
    std::vector<float> x(n);
    std::vector<ClassId> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<float>(i);
      labels[i] = static_cast<ClassId>(rng.below(classes));
    }
    const auto s = class_stats(make_toy(1, x, labels));
    double sum = 0.0;
    std::size_t members = 0;
    for (const auto& c : s.classes) {
      sum += c.frequency;
      members += c.size;
      CHECK(c.size > 0);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    CHECK(members == n);
  }
}

TEST_CASE("export then load is bit-identical and loads are deterministic") {
  TempDir dir("roundtrip");
  Rng rng(5);
  std::vector<float> x(40 * 3);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  std::vector<ClassId> labels(40);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<ClassId>(i % 4);
  const auto ds = make_toy(3, x, labels, {1, 5, 9, 13});
  export_dataset(ds, dir.path / "sub" / "toy.json");

  const auto a = load_dataset(dir.path / "sub" / "toy.json", false);
  const auto b = load_dataset(dir.path / "sub" / "toy.json", false);
  CHECK(a == ds);
  CHECK(a == b);
  CHECK(std::equal(a.features().values().begin(), a.features().values().end(), x.begin()));
  CHECK(a.manifest().class_names == ds.manifest().class_names);
  CHECK(fs::file_size(dir.path / "sub" / "toy.features.f32") == 40 * 3 * 4);
}

TEST_CASE("little-endian u32 files") {
  TempDir dir("u32");
  write_u32_file(dir.path / "v.u32", std::vector<std::uint32_t>{1, 0x01020304});
  std::ifstream in(dir.path / "v.u32", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes == std::vector<unsigned char>{1, 0, 0, 0, 4, 3, 2, 1});
  CHECK(read_u32_file(dir.path / "v.u32") == std::vector<std::uint32_t>{1, 0x01020304});
}

TEST_CASE("distance helpers") {
  const std::vector<float> a{1, 2, 3}, b{4, 6, 3};
  CHECK(squared_distance(a, b) == 25.0);
  CHECK(dot(a, b) == 25.0);
}

}
