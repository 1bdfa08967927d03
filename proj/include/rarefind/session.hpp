#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rarefind/classifier.hpp"
#include "rarefind/dataset.hpp"
#include "rarefind/metrics.hpp"
#include "rarefind/strategies.hpp"

namespace rarefind {

struct SessionConfig {
  Strategy strategy = Strategy::pfma;
  std::size_t budget = 10;          // b
  std::size_t max_iterations = 25;  // T
  std::size_t num_positive = 1;     // N_p
  std::size_t num_negative = 5;     // N_n
  ClassifierConfig classifier;
  DiversifierConfig diversifier;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Query {
  std::vector<SampleId> positive_ids;
  std::vector<SampleId> negative_ids;
  std::optional<ClassId> target_class;
};

/// Draws N_p positives uniformly from the class's pool members and N_n
/// negatives uniformly from the pool members of every other class.
Query sample_initial_query(const EmbeddedDataset& dataset, ClassId class_id,
                           std::size_t num_positive, std::size_t num_negative, std::uint64_t seed);

struct IterationRecord {
  std::size_t t = 0;
  std::vector<SampleId> batch;
  std::vector<double> values;
  std::vector<std::uint8_t> labels;
  double batch_ratio = 0.0;
};

struct SessionState {
  std::size_t t = 0;
  LabeledPool labeled;                  // D_l
  std::vector<SampleId> discovered;     // P_t in acquisition order, query positives first
  std::size_t query_positives = 0;
  MarginHistory margins;
  std::optional<ClassifierModel> model;
  std::vector<SampleId> unlabeled;      // pool \ D_l, ascending
  std::vector<IterationRecord> log;
  std::vector<std::string> events;
  std::optional<SelectionBatch> pending;
  bool exhausted = false;

  std::span<const SampleId> discovered_from_feedback() const {
    return std::span(discovered).subspan(query_positives);
  }
};

/// Returns one label (1 relevant, 0 not) per batch id, in batch order.
using Annotator = std::function<std::vector<std::uint8_t>(const SelectionBatch&)>;

/// Ground-truth annotator: relevant iff the sample belongs to `target`.
Annotator oracle_annotator(const EmbeddedDataset& dataset, ClassId target);

SessionState init_session(const EmbeddedDataset& dataset, const Query& query,
                          const SessionConfig& config);

/// Steps 1-3 of an iteration: retrain on D_l, score D \ D_l and select the
/// batch. The batch is stored in `state.pending` and returned.
const SelectionBatch& propose_batch(SessionState& state, const EmbeddedDataset& dataset,
                                    const SessionConfig& config);

/// Step 4: absorbs labels for the pending batch and advances t. Throws
/// without touching the state when the label count does not match.
void absorb_labels(SessionState& state, std::span<const std::uint8_t> labels);

/// True once t == T or the pool is exhausted.
bool session_finished(const SessionState& state, const SessionConfig& config);

/// One full iteration. An exhausted pool leaves the state terminal.
void run_iteration(SessionState& state, const EmbeddedDataset& dataset,
                   const SessionConfig& config, const Annotator& annotator);

struct IterationMetrics {
  std::size_t t = 0;
  double cov = 0.0;
  double pos = 0.0;
  double batch_ratio = 0.0;
  double f1 = 0.0;
};

/// Evaluation hooks for a session on a known target class.
struct SessionEvaluator {
  const ClusterSets& clusters;
  ClassId class_id;
  bool compute_f1 = true;
};

IterationMetrics evaluate_iteration(const SessionState& state, const EmbeddedDataset& dataset,
                                    const SessionEvaluator& evaluator);

struct SessionResult {
  SessionState state;
  std::vector<IterationMetrics> metrics;
};

/// Runs iterations until t == T or the pool is exhausted. Metrics are
/// recorded after every iteration when an evaluator is given; f1 uses the
/// classifier trained at the start of that iteration.
SessionResult run_session(const EmbeddedDataset& dataset, const Query& query,
                          const SessionConfig& config, const Annotator& annotator,
                          const SessionEvaluator* evaluator = nullptr);

}  // namespace rarefind
