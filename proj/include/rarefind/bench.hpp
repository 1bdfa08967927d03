#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rarefind/dataset.hpp"
#include "rarefind/metrics.hpp"
#include "rarefind/session.hpp"
#include "rarefind/strategies.hpp"

namespace rarefind {

/// Desk-scale long-tailed dataset: each class is a Gaussian mixture and
/// class sizes decay with rank as
///   size(r) = min + (max - min) * (1 - r / (num_classes - 1))^size_exponent.
/// Classes are grouped into families that share a direction so that every
/// class has confusable neighbours.
struct SyntheticSpec {
  std::string name = "synthetic";
  std::size_t num_classes = 50;
  double size_exponent = 1.5;
  std::size_t min_class_size = 5;
  std::size_t max_class_size = 500;
  std::size_t dim = 64;
  std::size_t modes_per_class = 5;
  std::size_t classes_per_family = 5;
  double family_spread = 1.0;  // class-centre offset from its family direction
  double mode_spread = 0.6;    // mode offset from its class centre
  double noise = 0.35;         // sample offset from its mode
  double test_fraction = 0.2;
  std::uint64_t seed = 42;

  void validate() const;
  std::vector<std::size_t> class_sizes() const;
};

SyntheticSpec parse_synthetic_spec(std::string_view json_text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

/// Generates the dataset in memory (features are L2-normalized when
/// `normalize` is set, like load_dataset).
EmbeddedDataset synthesize(const SyntheticSpec& spec, bool normalize = true);

/// Generates the dataset and writes it (raw features) next to `manifest_path`.
EmbeddedDataset generate_synthetic(const SyntheticSpec& spec,
                                   const std::filesystem::path& manifest_path);

struct ClassFilter {
  enum class Mode { all, size_range, list };
  Mode mode = Mode::all;
  std::size_t min_size = 0;
  std::size_t max_size = std::numeric_limits<std::size_t>::max();
  std::vector<ClassId> classes;
};

struct ExperimentConfig {
  std::filesystem::path dataset;
  bool normalize = true;
  std::vector<Strategy> strategies;
  std::size_t Q = 10;
  ClassFilter class_filter;
  SessionConfig session;
  CoverageConfig coverage;
  std::vector<std::size_t> size_bins;
  std::vector<std::size_t> report_iterations{5, 15, 25};
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> cluster_cache;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0: hardware concurrency
  bool compute_f1 = true;

  void validate() const;
};

/// Relative paths inside the document are resolved against `base_dir`.
ExperimentConfig parse_experiment_config(std::string_view json_text,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ResultRow {
  Strategy strategy = Strategy::ma;
  ClassId class_id = 0;
  std::size_t query = 0;      // 1-based
  std::size_t iteration = 0;  // 1-based
  double cov = 0.0;
  double pos = 0.0;
  double batch_ratio = 0.0;
  double f1 = 0.0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct SkippedClass {
  ClassId class_id = 0;
  std::size_t size = 0;
  std::string reason;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::map<ClassId, std::size_t> class_sizes;  // pool sizes of evaluated classes
  std::vector<SkippedClass> skipped;
  double eligible_fraction = 0.0;  // evaluated classes with size >= K
};

/// The query used for (class, q); shared by every strategy.
Query paired_query(const EmbeddedDataset& dataset, ClassId class_id, std::size_t query_index,
                   const ExperimentConfig& config);

ResultTable run_experiment(const EmbeddedDataset& dataset, const ExperimentConfig& config);
ResultTable run_experiment(const ExperimentConfig& config);

struct IterationAggregate {
  Strategy strategy = Strategy::ma;
  std::size_t iteration = 0;
  std::size_t rows = 0;
  double cov = 0.0;
  double pos = 0.0;
  double batch_ratio = 0.0;
  double f1 = 0.0;
};

/// Mean of every metric over (class, query) per strategy and iteration.
std::vector<IterationAggregate> mean_per_iteration(const ResultTable& table);

struct BinAggregate {
  Strategy strategy = Strategy::ma;
  std::size_t lower = 0;  // inclusive
  std::size_t upper = 0;  // exclusive
  std::size_t classes = 0;
  bool empty = true;
  double cov = 0.0;
  double pos = 0.0;
  double batch_ratio = 0.0;
  double f1 = 0.0;
};

/// Per strategy and class-size bin [edge_i, edge_i+1): metrics at
/// `iteration`, averaged over queries per class and then uniformly over
/// classes. Empty bins are reported with `empty` set.
std::vector<BinAggregate> bin_by_class_size(const ResultTable& table,
                                            std::span<const std::size_t> bins,
                                            std::size_t iteration);

/// Mean cov (or another metric) at one iteration for one strategy.
double mean_metric_at(const ResultTable& table, Strategy strategy, std::size_t iteration,
                      double ResultRow::*metric);

/// Median over every logged batch of the strategy.
double median_batch_ratio(const ResultTable& table, Strategy strategy);

enum class ExportFormat { csv, jsonl };
ExportFormat parse_export_format(std::string_view token);

inline constexpr std::string_view kCsvHeader = "strategy,class,query,iteration,cov,pos,batch_ratio,f1";

std::string to_csv(const ResultTable& table);
std::string to_jsonl(const ResultTable& table);
void export_table(const ResultTable& table, ExportFormat format, const std::filesystem::path& path);
ResultTable parse_csv(std::string_view text);
ResultTable read_csv(const std::filesystem::path& path);

/// Writes results.csv, results.jsonl and summary.json into config.output_dir.
void write_experiment_outputs(const ResultTable& table, const ExperimentConfig& config);

}  // namespace rarefind
