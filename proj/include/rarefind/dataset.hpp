#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rarefind {

using SampleId = std::uint32_t;
using ClassId = std::uint32_t;

inline constexpr std::string_view kPoolSplit = "pool";
inline constexpr std::string_view kTestSplit = "test";

/// On-disk description of a dataset. Relative file paths are resolved
/// against the directory holding the manifest.
struct DatasetManifest {
  std::string name;
  std::size_t dim = 0;
  std::size_t num_samples = 0;
  std::filesystem::path features_file;
  std::filesystem::path labels_file;
  std::map<std::string, std::filesystem::path> split_files;
  std::vector<std::string> class_names;
  std::vector<std::string> image_paths;

  std::size_t num_classes() const { return class_names.size(); }
};

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& manifest_path);

/// Dense row-major float matrix.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<float> values);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }

  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  std::span<const float> values() const { return values_; }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

double squared_distance(std::span<const float> a, std::span<const float> b);
double dot(std::span<const float> a, std::span<const float> b);

/// Immutable feature matrix with oracle labels and resolved splits.
///
/// Labels are ground truth used to simulate an annotator and to evaluate.
/// Selection code only ever receives `features()`.
class EmbeddedDataset {
 public:
  EmbeddedDataset(DatasetManifest manifest, FeatureMatrix features, std::vector<ClassId> labels,
                  std::map<std::string, std::vector<SampleId>> splits, bool normalized);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::string& name() const { return manifest_.name; }
  const FeatureMatrix& features() const { return features_; }
  std::size_t size() const { return features_.rows(); }
  std::size_t dim() const { return features_.dim(); }
  bool normalized() const { return normalized_; }

  std::span<const SampleId> split(std::string_view name) const;
  std::span<const SampleId> pool() const { return split(kPoolSplit); }
  std::span<const SampleId> test() const { return split(kTestSplit); }
  const std::map<std::string, std::vector<SampleId>>& splits() const { return splits_; }
  bool in_pool(SampleId id) const { return id < in_pool_.size() && in_pool_[id]; }

  ClassId label(SampleId id) const { return labels_.at(id); }
  std::span<const ClassId> labels() const { return labels_; }

  /// Pool members of one class, ascending.
  std::vector<SampleId> pool_members(ClassId class_id) const;

  friend bool operator==(const EmbeddedDataset& a, const EmbeddedDataset& b) {
    return a.features_ == b.features_ && a.labels_ == b.labels_ && a.splits_ == b.splits_;
  }

 private:
  DatasetManifest manifest_;
  FeatureMatrix features_;
  std::vector<ClassId> labels_;
  std::map<std::string, std::vector<SampleId>> splits_;
  std::vector<bool> in_pool_;
  bool normalized_;
};

/// Validates and assembles a dataset from in-memory parts.
EmbeddedDataset make_dataset(DatasetManifest manifest, std::vector<float> features,
                             std::vector<ClassId> labels,
                             std::map<std::string, std::vector<SampleId>> splits, bool normalize);

/// Loads a dataset described by a manifest. Rows are L2-normalized when
/// `normalize` is set.
EmbeddedDataset load_dataset(const std::filesystem::path& manifest_path, bool normalize = true);

/// Writes features, labels, splits and the manifest. File names are taken
/// from the dataset's manifest (relative to the manifest directory) or
/// defaulted when empty.
void export_dataset(const EmbeddedDataset& dataset, const std::filesystem::path& manifest_path);

void normalize_rows(std::span<float> values, std::size_t dim);

struct ClassFrequency {
  ClassId class_id = 0;
  std::size_t size = 0;
  double frequency = 0.0;
};

struct ClassStats {
  std::vector<ClassFrequency> classes;
  std::size_t pool_size = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double median = 0.0;
};

/// Per-class sizes and frequencies over the pool split. Only classes with at
/// least one pool member are listed.
ClassStats class_stats(const EmbeddedDataset& dataset);

// Little-endian binary helpers shared by the stores in this project.
std::vector<float> read_f32_file(const std::filesystem::path& path);
std::vector<std::uint32_t> read_u32_file(const std::filesystem::path& path);
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);
void write_u32_file(const std::filesystem::path& path, std::span<const std::uint32_t> values);

}  // namespace rarefind
