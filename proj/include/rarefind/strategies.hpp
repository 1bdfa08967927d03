#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rarefind/classifier.hpp"
#include "rarefind/dataset.hpp"

namespace rarefind {

/// Selection strategies. Token strings are part of the CLI and HTTP API.
enum class Strategy { random, ma, mp, pfma, alamp, dal, coreset, ma_s, ma_d, mp_s, mp_d };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view token);
std::span<const Strategy> all_strategies();

struct CriterionScores {
  std::vector<SampleId> sample_ids;
  std::vector<double> values;
  Strategy tag = Strategy::ma;
};

struct DiversifierConfig {
  std::size_t step = 5;        // S
  std::size_t pool_size = 50;  // B

  void validate(std::size_t budget) const;
};

/// Previous-iteration binary margin |2f - 1| per still-unlabeled sample.
using MarginHistory = std::unordered_map<SampleId, double>;

struct SelectionBatch {
  std::vector<SampleId> ids;
  std::vector<double> values;
  std::size_t iteration = 0;
};

// Elementwise criteria on a classifier score f in [0, 1].
inline double ma_value(double f) { return 1.0 - (f > 0.5 ? f - 0.5 : 0.5 - f); }
inline double mp_value(double f) { return f; }
inline double pfma_value(double f) { return f >= 0.5 ? ma_value(f) : f; }
inline double binary_margin(double f) { return f >= 0.5 ? 2.0 * f - 1.0 : 1.0 - 2.0 * f; }
/// Normalized margin drop between consecutive iterations; 0 when both are 0.
double alamp_value(double previous_margin, double current_margin);

CriterionScores score_ma(std::span<const SampleId> ids, std::span<const double> f);
CriterionScores score_mp(std::span<const SampleId> ids, std::span<const double> f);
CriterionScores score_pfma(std::span<const SampleId> ids, std::span<const double> f);

/// Falls back to MA values when `history` is empty (first iteration).
CriterionScores score_alamp(std::span<const SampleId> ids, std::span<const double> f,
                            const MarginHistory& history);

/// Values are a seeded random permutation rank: the first-ranked sample gets
/// the largest value.
CriterionScores score_random(std::span<const SampleId> unlabeled, std::uint64_t seed);

inline constexpr std::size_t kDalSubsampleFactor = 50;

/// Labeled-vs-unlabeled discrimination. Trains the linear classifier on
/// labeled samples (class 0) against a seeded subsample of unlabeled samples
/// (class 1, capped at 50x the labeled count); the value is the predicted
/// probability of "unlabeled".
CriterionScores score_dal(const LabeledPool& pool, std::span<const SampleId> unlabeled,
                          const FeatureMatrix& features, const ClassifierConfig& config,
                          std::uint64_t seed);

/// k-center greedy over unlabeled samples, distances to labeled and already
/// selected samples. Ties go to the smaller sample id.
SelectionBatch select_coreset(const LabeledPool& pool, std::span<const SampleId> unlabeled,
                              const FeatureMatrix& features, std::size_t budget);

/// Sorts by descending value, ties by ascending sample id.
CriterionScores rank(CriterionScores scores);

/// Top `budget` samples of `scores` (descending, ties by ascending id),
/// skipping ids already present in `exclude`.
SelectionBatch select_top(const CriterionScores& scores, std::size_t budget,
                          const LabeledPool* exclude = nullptr);

/// Picks ranks 0, S, 2S, ... of an already ranked list; when the list runs
/// out, fills from the best skipped ranks.
SelectionBatch diversify_step(const CriterionScores& ranked, std::size_t step, std::size_t budget);

/// Farthest-first traversal within the top `pool_size` ranked samples,
/// seeded with rank 0. Ties go to the smaller sample id.
SelectionBatch diversify_distance(const CriterionScores& ranked, const FeatureMatrix& features,
                                  std::size_t pool_size, std::size_t budget);

/// Everything a strategy may look at in one iteration. Oracle labels are not
/// reachable from here.
struct SelectionContext {
  const FeatureMatrix& features;
  const LabeledPool& labeled;
  std::span<const SampleId> unlabeled;  // ascending
  std::span<const double> scores;       // classifier f, aligned with `unlabeled`
  const MarginHistory& history;
  const ClassifierConfig& classifier;
  const DiversifierConfig& diversifier;
  std::uint64_t seed;
  std::size_t iteration;
};

/// Scores the unlabeled pool with `strategy` and returns the batch to annotate.
SelectionBatch select_batch(Strategy strategy, const SelectionContext& ctx, std::size_t budget);

/// Whether the strategy needs classifier scores over the unlabeled pool.
bool uses_classifier_scores(Strategy strategy);

}  // namespace rarefind
