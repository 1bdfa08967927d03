#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "rarefind/error.hpp"
#include "rarefind/metrics.hpp"

using namespace rarefind;
namespace fs = std::filesystem;
using testing::make_toy;
using testing::TempDir;

namespace {

// Coverage counted straight from the definition: per run, the set of cluster
// labels touched by P, divided by K; then averaged over runs.
double coverage_oracle(const std::vector<SampleId>& members,
                       const std::vector<std::vector<std::uint32_t>>& assignments, std::size_t k,
                       const std::vector<SampleId>& discovered) {
  double total = 0.0;
  for (const auto& run : assignments) {
    std::set<std::uint32_t> touched;
    for (SampleId p : discovered) {
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (members[i] == p) touched.insert(run[i]);
      }
    }
    total += static_cast<double>(touched.size()) / static_cast<double>(k);
  }
  return total / static_cast<double>(assignments.size());
}

struct RandomClusters {
  std::vector<SampleId> members;
  std::vector<std::vector<std::uint32_t>> assignments;
  std::size_t k;
};

RandomClusters random_clusters(Rng& rng, std::size_t max_size) {
  RandomClusters rc;
  const std::size_t n = 1 + rng.below(max_size);
  std::set<SampleId> ids;
  while (ids.size() < n) ids.insert(static_cast<SampleId>(rng.below(10000)));
  rc.members.assign(ids.begin(), ids.end());
  rc.k = 1 + rng.below(n);
  const std::size_t runs = 1 + rng.below(10);
  for (std::size_t r = 0; r < runs; ++r) {
    std::vector<std::uint32_t> a(n);
    for (std::size_t i = 0; i < n; ++i) {
      // The first k members pin every label so that no cluster is empty.
      a[i] = static_cast<std::uint32_t>(i < rc.k ? i : rng.below(rc.k));
    }
    rng.shuffle(std::span(a));
    rc.assignments.push_back(std::move(a));
  }
  return rc;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("coverage equals a brute-force count") {
  Rng rng(100);
  for (int trial = 0; trial < 500; ++trial) {
    const auto rc = random_clusters(rng, 64);
    const ClusterSets cs(3, rc.k, rc.k, rc.members, rc.assignments);
    std::vector<SampleId> p;
    for (SampleId m : rc.members) {
      if (rng.below(3) == 0) p.push_back(m);
    }
    REQUIRE(coverage(p, cs) == coverage_oracle(rc.members, rc.assignments, rc.k, p));
  }
}

TEST_CASE("coverage is monotone and bounded") {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto rc = random_clusters(rng, 64);
    const ClusterSets cs(0, rc.k, rc.k, rc.members, rc.assignments);
    std::vector<SampleId> p;
    for (SampleId m : rc.members) {
      if (rng.below(2) == 0) p.push_back(m);
    }
    const double before = coverage(p, cs);
    p.push_back(rc.members[rng.below(rc.members.size())]);
    const double after = coverage(p, cs);
    REQUIRE(after >= before);
    REQUIRE(before >= 0.0);
    REQUIRE(after <= 1.0);
  }
}

TEST_CASE("coverage edge values") {
  const std::vector<SampleId> members{2, 4, 6, 8};
  const ClusterSets cs(1, 2, 2, members, {{0, 1, 0, 1}, {0, 0, 1, 1}});
  CHECK(coverage(std::vector<SampleId>{}, cs) == 0.0);
  CHECK(coverage(members, cs) == 1.0);
  CHECK(coverage(std::vector<SampleId>{2, 4}, cs) == 0.75);
  CHECK(coverage(std::vector<SampleId>{2, 6}, cs) == 0.75);
  CHECK(coverage(std::vector<SampleId>{2, 8}, cs) == 1.0);
  CHECK_THROWS_AS(coverage(std::vector<SampleId>{3}, cs), Error);

  const ClusterSets one(1, 2, 2, members, {{0, 1, 0, 1}});
  CHECK(coverage(std::vector<SampleId>{2, 6}, one) == 0.5);
}

TEST_CASE("small classes fall back to singletons") {
  std::vector<float> x(20);
  std::vector<ClassId> labels(20, 1);
  for (std::size_t i = 0; i < 20; ++i) x[i] = static_cast<float>(i);
  for (std::size_t i = 0; i < 8; ++i) labels[i * 2] = 0;
  const auto ds = make_toy(1, x, labels);

  CoverageConfig cfg;
  const auto cs = build_class_clusters(ds, 0, cfg);
  CHECK(cs.class_size() == 8);
  CHECK(cs.effective_k() == 8);
  CHECK(cs.requested_k() == 32);
  CHECK(coverage(std::vector<SampleId>{0, 2, 4}, cs) == 0.375);

  std::vector<float> x5{0, 1, 2, 3, 4, 5};
  const auto ds5 = make_toy(1, x5, {0, 0, 0, 0, 0, 1});
  const auto cs5 = build_class_clusters(ds5, 0, cfg);
  CHECK(cs5.effective_k() == 5);
  for (std::size_t r = 0; r < cs5.runs(); ++r) {
    const auto a = cs5.assignment(r);
    CHECK(std::set<std::uint32_t>(a.begin(), a.end()).size() == 5);
  }
}

TEST_CASE("separated blobs form one cluster each") {
  Rng rng(6);
  std::vector<float> x;
  for (int i = 0; i < 80; ++i) {
    const float c = i < 40 ? -10.0f : 10.0f;
    x.push_back(c + static_cast<float>(rng.normal()));
    x.push_back(static_cast<float>(rng.normal()));
  }
  const auto ds = make_toy(2, x, std::vector<ClassId>(80, 0));
  CoverageConfig cfg;
  cfg.K = 2;
  const auto cs = build_class_clusters(ds, 0, cfg);
  REQUIRE(cs.effective_k() == 2);
  for (std::size_t r = 0; r < cs.runs(); ++r) {
    const auto a = cs.assignment(r);
    for (std::size_t i = 0; i < 80; ++i) CHECK((a[i] == a[0]) == (i < 40));
  }
  CHECK(build_class_clusters(ds, 0, cfg) == cs);
}

TEST_CASE("kmeans keeps every cluster non-empty") {
  // Many duplicates make empty clusters likely during Lloyd iterations.
  std::vector<float> x;
  for (int i = 0; i < 60; ++i) x.push_back(i < 50 ? 0.0f : static_cast<float>(i));
  const auto ds = make_toy(1, x, std::vector<ClassId>(60, 0));
  std::vector<SampleId> rows(60);
  std::iota(rows.begin(), rows.end(), 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto res = kmeans(ds.features(), rows, 8, 100, seed);
    std::set<std::uint32_t> used(res.assignment.begin(), res.assignment.end());
    CHECK(used.size() == 8);
  }
}

TEST_CASE("cluster files round-trip and serve as a cache") {
  TempDir dir("clusters");
  const auto ds = testing::make_blobs(4, {50, 70}, 2.0, 1.0, 3);
  CoverageConfig cfg;
  cfg.K = 5;
  cfg.kmeans_runs = 3;
  const auto built = build_class_clusters(ds, 1, cfg);
  built.save(dir.path / "c.clusters");
  CHECK(ClusterSets::load(dir.path / "c.clusters") == built);

  const auto first = cached_class_clusters(ds, 1, cfg, dir.path / "cache");
  CHECK(first == built);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "cache")) {
    ++files;
    CHECK(e.path().extension() == ".clusters");
  }
  CHECK(files == 1);
  CHECK(cached_class_clusters(ds, 1, cfg, dir.path / "cache") == built);

  std::ofstream(dir.path / "junk.clusters") << "nope";
  CHECK_THROWS_AS(ClusterSets::load(dir.path / "junk.clusters"), Error);
}

TEST_CASE("discovery rate and batch ratios") {
  CHECK(discovery_rate(0, 40) == 0.0);
  CHECK(discovery_rate(40, 40) == 1.0);
  for (std::size_t p = 0; p <= 40; ++p) CHECK(discovery_rate(p, 40) == doctest::Approx(p / 40.0));

  const std::vector<std::uint8_t> eight{1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  CHECK(positive_ratio(eight) == 0.8);
  const std::vector<std::vector<std::uint8_t>> log{eight, {1, 1, 1, 1}, {0, 0, 0}};
  CHECK(batch_positive_ratio(log) == std::vector<double>{0.8, 1.0, 0.0});
}

TEST_CASE("f1") {
  CHECK(f1_score({2, 1, 1, 0}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f1_score({0, 0, 5, 5}) == 0.0);
  CHECK(f1_score({5, 0, 0, 5}) == 1.0);

  // Class 0 on the left, class 1 on the right; every sample is in test.
  const auto ds = make_toy(1, {-2, -1, 1, 2, -3, 3}, {0, 0, 1, 1, 0, 1}, {0, 1, 2, 3});
  ClassifierModel left;
  left.weights = {-1.0f};
  CHECK(f1_heldout(left, ds, 0) == 1.0);
  ClassifierModel never;
  never.weights = {0.0f};
  never.bias = -1.0f;
  CHECK(f1_heldout(never, ds, 0) == 0.0);
}

TEST_CASE("config validation") {
  CoverageConfig c;
  c.K = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.K = 4;
  c.kmeans_runs = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

}
