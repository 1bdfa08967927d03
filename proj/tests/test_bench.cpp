#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"

#include "rarefind/bench.hpp"
#include "rarefind/error.hpp"

using namespace rarefind;
namespace fs = std::filesystem;
using testing::TempDir;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_classes = 8;
  s.min_class_size = 10;
  s.max_class_size = 120;
  s.dim = 16;
  s.modes_per_class = 3;
  s.classes_per_family = 4;
  s.seed = 3;
  return s;
}

ExperimentConfig small_config(std::vector<Strategy> strategies, std::size_t q, std::size_t t) {
  ExperimentConfig c;
  c.strategies = std::move(strategies);
  c.Q = q;
  c.session.max_iterations = t;
  c.coverage.K = 8;
  c.coverage.kmeans_runs = 3;
  c.seed = 11;
  c.coverage.seed = 11;
  c.workers = 1;
  return c;
}

// Groups points whose chains of pairwise distances stay below `radius`.
std::vector<std::size_t> components(const FeatureMatrix& x, std::span<const SampleId> rows,
                                    double radius) {
  const std::size_t n = rows.size();
  std::vector<std::size_t> comp(n, n);
  std::size_t next = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] != n) continue;
    std::vector<std::size_t> stack{s};
    comp[s] = next;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < n; ++j) {
        if (comp[j] == n && squared_distance(x.row(rows[i]), x.row(rows[j])) < radius * radius) {
          comp[j] = next;
          stack.push_back(j);
        }
      }
    }
    ++next;
  }
  return comp;
}

ResultTable hand_table() {
  ResultTable t;
  t.class_sizes = {{0, 5}, {1, 20}, {2, 100}};
  const double cov[3] = {0.2, 0.5, 0.9};
  for (ClassId c = 0; c < 3; ++c) {
    for (std::size_t q = 1; q <= 2; ++q) {
      for (std::size_t it = 1; it <= 2; ++it) {
        t.rows.push_back({Strategy::ma, c, q, it, cov[c] + 0.01 * static_cast<double>(q), 0.1 * it,
                          0.5, 0.25});
      }
    }
  }
  return t;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("power-law class sizes") {
  SyntheticSpec s;
  const auto sizes = s.class_sizes();
  CHECK(sizes.size() == 50);
  CHECK(sizes.front() == 500);
  CHECK(sizes.back() == 5);
  CHECK(std::is_sorted(sizes.rbegin(), sizes.rend()));
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  CHECK(total > 9000);
  CHECK(total < 11000);
}

TEST_CASE("two classes of 900 and 100 give frequencies 0.9 and 0.1") {
  SyntheticSpec s;
  s.num_classes = 2;
  s.max_class_size = 900;
  s.min_class_size = 100;
  s.test_fraction = 0.0;
  s.dim = 4;
  const auto ds = synthesize(s);
  const auto stats = class_stats(ds);
  REQUIRE(stats.classes.size() == 2);
  CHECK(stats.classes[0].frequency == 0.9);
  CHECK(stats.classes[1].frequency == 0.1);
}

TEST_CASE("synthetic split is stratified") {
  const auto ds = synthesize(small_spec());
  const auto sizes = small_spec().class_sizes();
  for (ClassId c = 0; c < sizes.size(); ++c) {
    const auto pool = ds.pool_members(c).size();
    CHECK(pool >= 1);
    CHECK(pool == sizes[c] - static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(sizes[c]))));
  }
}

TEST_CASE("same spec and seed give byte-identical files") {
  TempDir a("synth_a"), b("synth_b");
  generate_synthetic(small_spec(), a.path / "s.json");
  generate_synthetic(small_spec(), b.path / "s.json");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a.path)) {
    ++files;
    CHECK(slurp(e.path()) == slurp(b.path / e.path().filename()));
  }
  CHECK(files == 5);
  auto other = small_spec();
  other.seed = 4;
  generate_synthetic(other, b.path / "s.json");
  CHECK(slurp(a.path / "s.features.f32") != slurp(b.path / "s.features.f32"));
  CHECK(load_dataset(a.path / "s.json") == synthesize(small_spec()));
}

TEST_CASE("each mode of a 3-mode class becomes one cluster") {
  SyntheticSpec s;
  s.num_classes = 1;
  s.min_class_size = s.max_class_size = 90;
  s.dim = 16;
  s.modes_per_class = 3;
  s.mode_spread = 1.5;
  s.noise = 0.05;
  s.test_fraction = 0.0;
  const auto ds = synthesize(s, false);
  const auto members = ds.pool_members(0);
  const auto truth = components(ds.features(), members, 0.4);
  REQUIRE(std::set<std::size_t>(truth.begin(), truth.end()).size() == 3);

  CoverageConfig cfg;
  cfg.K = 3;
  const auto cs = build_class_clusters(ds, 0, cfg);
  for (std::size_t r = 0; r < cs.runs(); ++r) {
    const auto a = cs.assignment(r);
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = 0; j < members.size(); ++j) {
        REQUIRE((a[i] == a[j]) == (truth[i] == truth[j]));
      }
    }
  }
}

TEST_CASE("spec parsing and validation") {
  const auto s = parse_synthetic_spec(R"({"num_classes": 4, "dim": 8, "seed": 9})");
  CHECK(s.num_classes == 4);
  CHECK(s.dim == 8);
  CHECK(s.seed == 9);
  CHECK(s.max_class_size == 500);
  CHECK_THROWS_AS(parse_synthetic_spec(R"({"num_classes": 0})"), Error);
  CHECK_THROWS_AS(parse_synthetic_spec(R"({"min_class_size": 10, "max_class_size": 5})"), Error);
  CHECK_THROWS_AS(parse_synthetic_spec("[1"), Error);
}

TEST_CASE("one class, one query, one iteration gives one row") {
  const auto ds = synthesize(small_spec());
  auto cfg = small_config({Strategy::ma}, 1, 1);
  cfg.class_filter.mode = ClassFilter::Mode::list;
  cfg.class_filter.classes = {2};
  const auto table = run_experiment(ds, cfg);
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0].class_id == 2);
  CHECK(table.rows[0].query == 1);
  CHECK(table.rows[0].iteration == 1);
  CHECK(table.rows[0].strategy == Strategy::ma);
}

TEST_CASE("paired queries do not depend on the strategy list") {
  const auto ds = synthesize(small_spec());
  const auto alone = run_experiment(ds, small_config({Strategy::ma}, 2, 3));
  const auto together = run_experiment(ds, small_config({Strategy::mp, Strategy::ma}, 2, 3));
  std::vector<ResultRow> ma_rows;
  for (const auto& r : together.rows) {
    if (r.strategy == Strategy::ma) ma_rows.push_back(r);
  }
  CHECK(ma_rows == alone.rows);

  const auto cfg = small_config({Strategy::ma}, 2, 3);
  const Query a = paired_query(ds, 1, 2, cfg);
  const Query b = paired_query(ds, 1, 2, cfg);
  CHECK(a.positive_ids == b.positive_ids);
  CHECK(a.negative_ids == b.negative_ids);
  CHECK(paired_query(ds, 1, 1, cfg).positive_ids != a.positive_ids);
}

TEST_CASE("runs are reproducible across worker counts") {
  const auto ds = synthesize(small_spec());
  auto cfg = small_config({Strategy::random, Strategy::pfma, Strategy::coreset}, 2, 4);
  const auto one = to_csv(run_experiment(ds, cfg));
  cfg.workers = 3;
  const auto three = to_csv(run_experiment(ds, cfg));
  CHECK(one == three);
}

TEST_CASE("classes too small for the query are skipped with a reason") {
  auto spec = small_spec();
  spec.min_class_size = 1;
  spec.test_fraction = 0.0;
  const auto ds = synthesize(spec);
  auto cfg = small_config({Strategy::ma}, 1, 1);
  cfg.session.num_positive = 2;
  cfg.compute_f1 = false;  // no test split
  const auto table = run_experiment(ds, cfg);
  REQUIRE(table.skipped.size() == 1);
  CHECK(table.skipped[0].class_id == 7);
  CHECK_FALSE(table.skipped[0].reason.empty());

  cfg.class_filter.mode = ClassFilter::Mode::size_range;
  cfg.class_filter.min_size = 100000;
  CHECK_THROWS_AS(run_experiment(ds, cfg), Error);
}

TEST_CASE("per-iteration means equal raw means") {
  const auto ds = synthesize(small_spec());
  const auto table = run_experiment(ds, small_config({Strategy::ma, Strategy::random}, 2, 3));
  for (const auto& a : mean_per_iteration(table)) {
    double cov = 0.0, pos = 0.0, f1 = 0.0;
    std::size_t n = 0;
    for (const auto& r : table.rows) {
      if (r.strategy == a.strategy && r.iteration == a.iteration) {
        cov += r.cov;
        pos += r.pos;
        f1 += r.f1;
        ++n;
      }
    }
    CHECK(a.rows == n);
    CHECK(std::abs(a.cov - cov / n) <= 1e-12);
    CHECK(std::abs(a.pos - pos / n) <= 1e-12);
    CHECK(std::abs(a.f1 - f1 / n) <= 1e-12);
    CHECK(std::abs(mean_metric_at(table, a.strategy, a.iteration, &ResultRow::cov) - cov / n) <= 1e-12);
  }
}

TEST_CASE("size bins") {
  const auto t = hand_table();
  SUBCASE("one class per bin equals the class mean") {
    const std::vector<std::size_t> bins{0, 10, 50, 200};
    const auto agg = bin_by_class_size(t, bins, 2);
    REQUIRE(agg.size() == 3);
    CHECK(agg[0].classes == 1);
    CHECK(agg[0].cov == doctest::Approx(0.215).epsilon(1e-12));
    CHECK(agg[1].cov == doctest::Approx(0.515).epsilon(1e-12));
    CHECK(agg[2].cov == doctest::Approx(0.915).epsilon(1e-12));
  }
  SUBCASE("a class on an edge goes to the bin starting there") {
    const std::vector<std::size_t> bins{0, 20, 1000};
    const auto agg = bin_by_class_size(t, bins, 1);
    CHECK(agg[0].classes == 1);
    CHECK(agg[1].classes == 2);
    CHECK(agg[1].cov == doctest::Approx((0.515 + 0.915) / 2).epsilon(1e-12));
  }
  SUBCASE("empty bins are flagged") {
    const std::vector<std::size_t> bins{0, 5, 6, 20};
    const auto agg = bin_by_class_size(t, bins, 1);
    CHECK(agg[0].empty);
    CHECK_FALSE(agg[1].empty);
    CHECK(agg[2].empty);
  }
  const std::vector<std::size_t> bad{10, 5};
  CHECK_THROWS_AS(bin_by_class_size(t, bad, 1), Error);
  const std::vector<std::size_t> ok{0, 10};
  CHECK_THROWS_AS(bin_by_class_size(t, ok, 9), Error);
}

TEST_CASE("median batch ratio") {
  ResultTable t;
  for (double v : {0.1, 0.9, 0.5, 0.3}) t.rows.push_back({Strategy::mp, 0, 1, 1, 0, 0, v, 0});
  CHECK(median_batch_ratio(t, Strategy::mp) == doctest::Approx(0.4));
  t.rows.push_back({Strategy::mp, 0, 1, 1, 0, 0, 1.0, 0});
  CHECK(median_batch_ratio(t, Strategy::mp) == 0.5);
  CHECK_THROWS_AS(median_batch_ratio(t, Strategy::ma), Error);
}

TEST_CASE("CSV and JSONL export") {
  ResultTable one;
  one.rows.push_back({Strategy::ma_s, 3, 1, 2, 0.1, 1.0 / 3.0, 0.7, 0.0});
  const auto csv = to_csv(one);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.substr(0, csv.find('\n')) == kCsvHeader);
  CHECK(parse_csv(csv).rows == one.rows);

  const auto t = hand_table();
  CHECK(parse_csv(to_csv(t)).rows == t.rows);

  const auto jsonl = to_jsonl(one);
  const auto row = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  std::set<std::string> keys;
  for (const auto& [k, v] : row.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"strategy", "class", "query", "iteration", "cov", "pos",
                                      "batch_ratio", "f1"});
  CHECK(row["strategy"] == "ma-s");
  CHECK(row["pos"].get<double>() == 1.0 / 3.0);

  CHECK_THROWS_AS(parse_csv("strategy,class\n"), Error);
  CHECK_THROWS_AS(parse_csv(std::string(kCsvHeader) + "\nma,1,1\n"), Error);
  CHECK(parse_export_format("jsonl") == ExportFormat::jsonl);
  CHECK_THROWS_AS(parse_export_format("xml"), Error);
}

TEST_CASE("experiment config parsing") {
  const auto cfg = parse_experiment_config(R"({
    "dataset": "data/s.json",
    "strategies": ["ma", "pfma", "ma-d"],
    "Q": 3,
    "class_filter": {"mode": "size_range", "min": 10, "max": 50},
    "session": {"budget": 5, "max_iterations": 7, "num_negative": 4,
                "classifier": {"C": 2.5, "class_weighting": "balanced"},
                "diversifier": {"step": 3, "pool_size": 20}},
    "coverage": {"K": 16, "kmeans_runs": 4},
    "size_bins": [0, 20, 100],
    "output_dir": "out",
    "cluster_cache": "cache",
    "seed": 8
  })", "/base");
  CHECK(cfg.dataset == fs::path("/base/data/s.json"));
  CHECK(cfg.strategies == std::vector<Strategy>{Strategy::ma, Strategy::pfma, Strategy::ma_d});
  CHECK(cfg.Q == 3);
  CHECK(cfg.class_filter.mode == ClassFilter::Mode::size_range);
  CHECK(cfg.class_filter.max_size == 50);
  CHECK(cfg.session.budget == 5);
  CHECK(cfg.session.max_iterations == 7);
  CHECK(cfg.session.num_negative == 4);
  CHECK(cfg.session.classifier.C == 2.5);
  CHECK(cfg.session.classifier.class_weighting == ClassWeighting::balanced);
  CHECK(cfg.session.diversifier.step == 3);
  CHECK(cfg.coverage.K == 16);
  CHECK(cfg.coverage.seed == 8);
  CHECK(cfg.size_bins == std::vector<std::size_t>{0, 20, 100});
  CHECK(cfg.output_dir == fs::path("/base/out"));
  CHECK(cfg.cluster_cache == fs::path("/base/cache"));

  CHECK_THROWS_AS(parse_experiment_config(R"({"strategies": ["ma"]})"), Error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"dataset": "x", "strategies": ["nope"]})"), Error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"dataset": "x", "strategies": []})"), Error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"dataset": "x", "strategies": ["ma"], "Q": 0})"), Error);
  CHECK_THROWS_AS(
      parse_experiment_config(R"({"dataset": "x", "strategies": ["ma"], "size_bins": [5, 5]})"),
      Error);
}

TEST_CASE("experiment outputs") {
  TempDir dir("outputs");
  const auto ds = synthesize(small_spec());
  auto cfg = small_config({Strategy::ma, Strategy::mp}, 1, 3);
  cfg.size_bins = {0, 30, 1000};
  cfg.report_iterations = {1, 3};
  cfg.output_dir = dir.path / "out";
  const auto table = run_experiment(ds, cfg);
  write_experiment_outputs(table, cfg);
  CHECK(read_csv(dir.path / "out" / "results.csv").rows == table.rows);
  const auto summary = nlohmann::json::parse(slurp(dir.path / "out" / "summary.json"));
  CHECK(summary["per_size_bin"].size() == 2 * 2 * 2);
  CHECK(summary["median_batch_ratio"].contains("mp"));
  std::ifstream jl(dir.path / "out" / "results.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(jl, line);) ++lines;
  CHECK(lines == table.rows.size());
}

}
