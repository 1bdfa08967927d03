#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rarefind/classifier.hpp"
#include "rarefind/dataset.hpp"

namespace rarefind {

struct CoverageConfig {
  std::size_t K = 32;
  std::size_t kmeans_runs = 10;
  std::size_t kmeans_max_iters = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct KMeansResult {
  std::vector<double> centroids;      // k x dim, row-major
  std::vector<std::uint32_t> assignment;  // aligned with the input rows
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding on the given rows. Runs until
/// the assignment stops changing or `max_iters` is reached. A cluster that
/// goes empty takes over the point farthest from its centroid, so every
/// cluster is non-empty on return (requires rows.size() >= k).
KMeansResult kmeans(const FeatureMatrix& features, std::span<const SampleId> rows, std::size_t k,
                    std::size_t max_iters, std::uint64_t seed);

/// Per-run partitions of one class's pool members.
class ClusterSets {
 public:
  ClusterSets() = default;
  ClusterSets(ClassId class_id, std::size_t requested_k, std::size_t effective_k,
              std::vector<SampleId> members, std::vector<std::vector<std::uint32_t>> assignments);

  ClassId class_id() const { return class_id_; }
  std::size_t requested_k() const { return requested_k_; }
  std::size_t effective_k() const { return effective_k_; }
  std::size_t runs() const { return assignments_.size(); }
  std::size_t class_size() const { return members_.size(); }
  const std::vector<SampleId>& members() const { return members_; }
  std::span<const std::uint32_t> assignment(std::size_t run) const { return assignments_.at(run); }

  /// Position of `id` in members(), or npos when the id is not a member.
  std::size_t member_index(SampleId id) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  void save(const std::filesystem::path& path) const;
  static ClusterSets load(const std::filesystem::path& path);

  friend bool operator==(const ClusterSets&, const ClusterSets&) = default;

 private:
  ClassId class_id_ = 0;
  std::size_t requested_k_ = 0;
  std::size_t effective_k_ = 0;
  std::vector<SampleId> members_;
  std::vector<std::vector<std::uint32_t>> assignments_;
};

/// Clusters a class's pool members `kmeans_runs` times. Classes smaller
/// than K get one singleton cluster per member.
ClusterSets build_class_clusters(const EmbeddedDataset& dataset, ClassId class_id,
                                 const CoverageConfig& config);

/// Loads cached clusters from `cache_dir` when a matching file exists,
/// otherwise builds and stores them.
ClusterSets cached_class_clusters(const EmbeddedDataset& dataset, ClassId class_id,
                                  const CoverageConfig& config,
                                  const std::filesystem::path& cache_dir);

/// Fraction of clusters hit by at least one discovered positive, averaged
/// over clustering runs.
double coverage(std::span<const SampleId> discovered, const ClusterSets& clusters);

/// |P| / k_C.
double discovery_rate(std::size_t discovered, std::size_t class_size);

/// Positives in a batch divided by the batch size (0 for an empty batch).
double positive_ratio(std::span<const std::uint8_t> labels);
std::vector<double> batch_positive_ratio(std::span<const std::vector<std::uint8_t>> batch_labels);

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

/// Binary f1; 0 when precision + recall is 0.
double f1_score(const ConfusionCounts& counts);

/// f1 of `model` on the test split with `class_id` as the positive class and
/// prediction = score >= 0.5.
double f1_heldout(const ClassifierModel& model, const EmbeddedDataset& dataset, ClassId class_id);

}  // namespace rarefind
