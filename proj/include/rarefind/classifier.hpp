#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "rarefind/dataset.hpp"

namespace rarefind {

enum class ClassWeighting { uniform, balanced };

struct ClassifierConfig {
  double C = 1.0;
  std::size_t max_epochs = 1000;
  double tolerance = 1e-4;
  ClassWeighting class_weighting = ClassWeighting::uniform;
  std::uint64_t seed = 0;

  void validate() const;
};

/// The annotated set: (sample id, binary label) in insertion order.
class LabeledPool {
 public:
  struct Entry {
    SampleId id;
    bool positive;
  };

  /// Adds or relabels a sample. Returns true when an existing label was
  /// overwritten; the entry keeps its original position.
  bool add(SampleId id, bool positive);

  bool contains(SampleId id) const { return index_.contains(id); }
  std::optional<bool> label_of(SampleId id) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t positives() const { return positives_; }
  std::size_t negatives() const { return entries_.size() - positives_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<SampleId, std::size_t> index_;
  std::size_t positives_ = 0;
};

/// Linear scorer f(x) = logistic(w.x + bias).
struct ClassifierModel {
  std::vector<float> weights;
  float bias = 0.0f;
  std::size_t train_size = 0;

  double margin(std::span<const float> x) const;

  /// Writes dim little-endian float32 weights followed by the bias.
  void save(const std::filesystem::path& path) const;
  static ClassifierModel load(const std::filesystem::path& path, std::size_t dim);
};

/// Maps a raw margin to [0, 1]. Returns >= 0.5 exactly when margin >= 0.
double logistic(double margin);

/// One training example handed to the solver.
struct TrainingRow {
  std::span<const float> x;
  bool positive;
};

/// L2-regularized L1-hinge linear SVM fitted by dual coordinate descent.
/// The bias is learned as the weight of a constant feature equal to 1.
ClassifierModel train_rows(std::span<const TrainingRow> rows, std::size_t dim,
                           const ClassifierConfig& config);

ClassifierModel train(const LabeledPool& pool, const FeatureMatrix& features,
                      const ClassifierConfig& config);

std::vector<double> margins(const ClassifierModel& model, std::span<const SampleId> rows,
                            const FeatureMatrix& features);

/// Scores in [0, 1] for the given rows.
std::vector<double> predict(const ClassifierModel& model, std::span<const SampleId> rows,
                            const FeatureMatrix& features);

}  // namespace rarefind
