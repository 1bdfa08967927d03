#include "rarefind/strategies.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Core>

#include "rarefind/error.hpp"
#include "rarefind/random.hpp"

namespace rarefind {

namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 11> kTokens{{
    {Strategy::random, "random"},
    {Strategy::ma, "ma"},
    {Strategy::mp, "mp"},
    {Strategy::pfma, "pfma"},
    {Strategy::alamp, "alamp"},
    {Strategy::dal, "dal"},
    {Strategy::coreset, "coreset"},
    {Strategy::ma_s, "ma-s"},
    {Strategy::ma_d, "ma-d"},
    {Strategy::mp_s, "mp-s"},
    {Strategy::mp_d, "mp-d"},
}};

constexpr std::array<Strategy, 11> kAll{Strategy::random, Strategy::ma,      Strategy::mp,
                                        Strategy::pfma,   Strategy::alamp,   Strategy::dal,
                                        Strategy::coreset, Strategy::ma_s,   Strategy::ma_d,
                                        Strategy::mp_s,   Strategy::mp_d};

void check_probabilities(std::span<const double> f) {
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!(f[i] >= 0.0 && f[i] <= 1.0)) {
      throw Error(Errc::invalid_argument, "classifier score " + std::to_string(f[i]) +
                                              " at position " + std::to_string(i) +
                                              " is outside [0, 1]");
    }
  }
}

void check_aligned(std::span<const SampleId> ids, std::span<const double> f) {
  if (ids.size() != f.size()) {
    throw Error(Errc::dimension_mismatch, "ids and scores differ in length");
  }
}

template <typename Fn>
CriterionScores elementwise(std::span<const SampleId> ids, std::span<const double> f, Strategy tag,
                            Fn&& fn) {
  check_aligned(ids, f);
  check_probabilities(f);
  CriterionScores out;
  out.tag = tag;
  out.sample_ids.assign(ids.begin(), ids.end());
  out.values.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out.values[i] = fn(f[i]);
  return out;
}

// Strict weak order: higher value first, then smaller id.
struct RankOrder {
  const CriterionScores& s;
  bool operator()(std::size_t a, std::size_t b) const {
    if (s.values[a] != s.values[b]) return s.values[a] > s.values[b];
    return s.sample_ids[a] < s.sample_ids[b];
  }
};

CriterionScores rank_top(const CriterionScores& scores, std::size_t limit) {
  const std::size_t n = scores.sample_ids.size();
  limit = std::min(limit, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(limit), order.end(),
                    RankOrder{scores});
  CriterionScores out;
  out.tag = scores.tag;
  out.sample_ids.reserve(limit);
  out.values.reserve(limit);
  for (std::size_t i = 0; i < limit; ++i) {
    out.sample_ids.push_back(scores.sample_ids[order[i]]);
    out.values.push_back(scores.values[order[i]]);
  }
  return out;
}

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrix gather(const FeatureMatrix& features, std::span<const SampleId> ids) {
  RowMatrix m(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(features.dim()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = features.row(ids[i]);
    std::copy(row.begin(), row.end(), m.row(static_cast<Eigen::Index>(i)).data());
  }
  return m;
}

// Squared distance from each row of `candidates` to its nearest reference point.
std::vector<double> nearest_squared_distance(const RowMatrix& candidates,
                                             const Eigen::VectorXf& candidate_norms,
                                             const FeatureMatrix& features,
                                             std::span<const SampleId> references) {
  const auto n = static_cast<std::size_t>(candidates.rows());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  if (references.empty() || n == 0) return best;

  const RowMatrix refs = gather(features, references);
  const Eigen::VectorXf ref_norms = refs.rowwise().squaredNorm();
  constexpr Eigen::Index kBlock = 2048;
  for (Eigen::Index start = 0; start < candidates.rows(); start += kBlock) {
    const Eigen::Index len = std::min(kBlock, candidates.rows() - start);
    // Column i holds the inner products of candidate start + i with every reference.
    const Eigen::MatrixXf cross = refs * candidates.middleRows(start, len).transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
      float m = std::numeric_limits<float>::infinity();
      Eigen::Index arg = 0;
      for (Eigen::Index j = 0; j < cross.rows(); ++j) {
        const float dist = candidate_norms[start + i] + ref_norms[j] - 2.0f * cross(j, i);
        if (dist < m) {
          m = dist;
          arg = j;
        }
      }
      // The expanded form loses precision for near-coincident points; redo
      // the winner exactly so duplicates sit at distance 0.
      const auto row = candidates.row(start + i);
      best[static_cast<std::size_t>(start + i)] = squared_distance(
          std::span<const float>(row.data(), static_cast<std::size_t>(row.size())),
          features.row(references[static_cast<std::size_t>(arg)]));
    }
  }
  return best;
}

}  // namespace

std::string_view to_string(Strategy s) {
  for (const auto& [k, token] : kTokens) {
    if (k == s) return token;
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view token) {
  for (const auto& [k, t] : kTokens) {
    if (t == token) return k;
  }
  throw Error(Errc::unknown_strategy, "unknown strategy \"" + std::string(token) + "\"");
}

std::span<const Strategy> all_strategies() { return kAll; }

void DiversifierConfig::validate(std::size_t budget) const {
  if (step < 1) throw Error(Errc::invalid_argument, "diversifier step S must be >= 1");
  if (pool_size < budget) {
    throw Error(Errc::invalid_argument, "diversifier pool size B must be >= budget b");
  }
}

double alamp_value(double previous_margin, double current_margin) {
  const double denom = previous_margin + current_margin;
  if (denom == 0.0) return 0.0;
  return (previous_margin - current_margin) / denom;
}

CriterionScores score_ma(std::span<const SampleId> ids, std::span<const double> f) {
  return elementwise(ids, f, Strategy::ma, ma_value);
}

CriterionScores score_mp(std::span<const SampleId> ids, std::span<const double> f) {
  return elementwise(ids, f, Strategy::mp, mp_value);
}

CriterionScores score_pfma(std::span<const SampleId> ids, std::span<const double> f) {
  return elementwise(ids, f, Strategy::pfma, pfma_value);
}

CriterionScores score_alamp(std::span<const SampleId> ids, std::span<const double> f,
                            const MarginHistory& history) {
  if (history.empty()) {
    auto out = score_ma(ids, f);
    out.tag = Strategy::alamp;
    return out;
  }
  check_aligned(ids, f);
  check_probabilities(f);
  CriterionScores out;
  out.tag = Strategy::alamp;
  out.sample_ids.assign(ids.begin(), ids.end());
  out.values.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto it = history.find(ids[i]);
    if (it == history.end()) {
      throw Error(Errc::invalid_argument,
                  "no previous margin for sample " + std::to_string(ids[i]));
    }
    out.values[i] = alamp_value(it->second, binary_margin(f[i]));
  }
  return out;
}

CriterionScores score_random(std::span<const SampleId> unlabeled, std::uint64_t seed) {
  if (unlabeled.empty()) throw Error(Errc::empty_split, "random selection over an empty pool");
  const std::size_t n = unlabeled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  CriterionScores out;
  out.tag = Strategy::random;
  out.sample_ids.assign(unlabeled.begin(), unlabeled.end());
  out.values.resize(n);
  for (std::size_t r = 0; r < n; ++r) out.values[order[r]] = static_cast<double>(n - r);
  return out;
}

CriterionScores score_dal(const LabeledPool& pool, std::span<const SampleId> unlabeled,
                          const FeatureMatrix& features, const ClassifierConfig& config,
                          std::uint64_t seed) {
  if (pool.empty() || unlabeled.empty()) {
    throw Error(Errc::empty_split, "DAL needs at least one labeled and one unlabeled sample");
  }
  std::vector<SampleId> sample(unlabeled.begin(), unlabeled.end());
  const std::size_t cap = kDalSubsampleFactor * pool.size();
  if (sample.size() > cap) {
    Rng rng(seed);
    // Partial Fisher-Yates: the first `cap` slots become a uniform subsample.
    for (std::size_t i = 0; i < cap; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(sample.size() - i));
      std::swap(sample[i], sample[j]);
    }
    sample.resize(cap);
  }

  std::vector<TrainingRow> rows;
  rows.reserve(pool.size() + sample.size());
  for (const auto& e : pool.entries()) rows.push_back({features.row(e.id), false});
  for (SampleId id : sample) rows.push_back({features.row(id), true});
  const ClassifierModel model = train_rows(rows, features.dim(), config);

  CriterionScores out;
  out.tag = Strategy::dal;
  out.sample_ids.assign(unlabeled.begin(), unlabeled.end());
  out.values = predict(model, unlabeled, features);
  return out;
}

SelectionBatch select_coreset(const LabeledPool& pool, std::span<const SampleId> unlabeled,
                              const FeatureMatrix& features, std::size_t budget) {
  if (unlabeled.empty()) throw Error(Errc::empty_split, "CoreSet selection over an empty pool");
  std::vector<SampleId> labeled;
  labeled.reserve(pool.size());
  for (const auto& e : pool.entries()) labeled.push_back(e.id);

  const RowMatrix candidates = gather(features, unlabeled);
  const Eigen::VectorXf norms = candidates.rowwise().squaredNorm();
  std::vector<double> nearest = nearest_squared_distance(candidates, norms, features, labeled);
  std::vector<bool> taken(unlabeled.size(), false);
  SelectionBatch batch;
  const std::size_t count = std::min(budget, unlabeled.size());
  Eigen::VectorXf dist;
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t pick = unlabeled.size();
    for (std::size_t i = 0; i < unlabeled.size(); ++i) {
      if (taken[i]) continue;
      if (pick == unlabeled.size() || nearest[i] > nearest[pick] ||
          (nearest[i] == nearest[pick] && unlabeled[i] < unlabeled[pick])) {
        pick = i;
      }
    }
    taken[pick] = true;
    batch.ids.push_back(unlabeled[pick]);
    batch.values.push_back(std::sqrt(nearest[pick]));
    const auto p = static_cast<Eigen::Index>(pick);
    dist.noalias() = (candidates.rowwise() - candidates.row(p)).rowwise().squaredNorm();
    for (std::size_t i = 0; i < unlabeled.size(); ++i) {
      if (!taken[i]) nearest[i] = std::min(nearest[i], static_cast<double>(dist[static_cast<Eigen::Index>(i)]));
    }
  }
  return batch;
}

CriterionScores rank(CriterionScores scores) {
  const std::size_t n = scores.sample_ids.size();
  return rank_top(scores, n);
}

SelectionBatch select_top(const CriterionScores& scores, std::size_t budget,
                          const LabeledPool* exclude) {
  if (scores.sample_ids.size() != scores.values.size()) {
    throw Error(Errc::dimension_mismatch, "criterion ids and values differ in length");
  }
  CriterionScores candidates;
  const CriterionScores* source = &scores;
  if (exclude != nullptr) {
    candidates.tag = scores.tag;
    for (std::size_t i = 0; i < scores.sample_ids.size(); ++i) {
      if (!exclude->contains(scores.sample_ids[i])) {
        candidates.sample_ids.push_back(scores.sample_ids[i]);
        candidates.values.push_back(scores.values[i]);
      }
    }
    source = &candidates;
  }
  const CriterionScores top = rank_top(*source, budget);
  return SelectionBatch{top.sample_ids, top.values, 0};
}

SelectionBatch diversify_step(const CriterionScores& ranked, std::size_t step,
                              std::size_t budget) {
  if (step < 1) throw Error(Errc::invalid_argument, "step S must be >= 1");
  const std::size_t n = ranked.sample_ids.size();
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> picks;
  for (std::size_t r = 0; r < n && picks.size() < budget; r += step) {
    picks.push_back(r);
    taken[r] = true;
  }
  for (std::size_t r = 0; r < n && picks.size() < budget; ++r) {
    if (!taken[r]) picks.push_back(r);
  }
  SelectionBatch batch;
  for (std::size_t r : picks) {
    batch.ids.push_back(ranked.sample_ids[r]);
    batch.values.push_back(ranked.values[r]);
  }
  return batch;
}

SelectionBatch diversify_distance(const CriterionScores& ranked, const FeatureMatrix& features,
                                  std::size_t pool_size, std::size_t budget) {
  const std::size_t n = std::min(pool_size, ranked.sample_ids.size());
  SelectionBatch batch;
  if (n == 0 || budget == 0) return batch;

  std::vector<bool> taken(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = 0;
  const std::size_t count = std::min(budget, n);
  for (std::size_t k = 0; k < count; ++k) {
    if (k > 0) {
      pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        if (pick == n || nearest[i] > nearest[pick] ||
            (nearest[i] == nearest[pick] && ranked.sample_ids[i] < ranked.sample_ids[pick])) {
          pick = i;
        }
      }
    }
    taken[pick] = true;
    batch.ids.push_back(ranked.sample_ids[pick]);
    batch.values.push_back(ranked.values[pick]);
    const auto chosen = features.row(ranked.sample_ids[pick]);
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) {
        nearest[i] = std::min(nearest[i], squared_distance(features.row(ranked.sample_ids[i]), chosen));
      }
    }
  }
  return batch;
}

bool uses_classifier_scores(Strategy strategy) {
  switch (strategy) {
    case Strategy::random:
    case Strategy::dal:
    case Strategy::coreset:
      return false;
    default:
      return true;
  }
}

SelectionBatch select_batch(Strategy strategy, const SelectionContext& ctx, std::size_t budget) {
  SelectionBatch batch;
  const auto& div = ctx.diversifier;
  switch (strategy) {
    case Strategy::random:
      batch = select_top(score_random(ctx.unlabeled, derive_seed(ctx.seed, ctx.iteration)), budget);
      break;
    case Strategy::ma:
      batch = select_top(score_ma(ctx.unlabeled, ctx.scores), budget);
      break;
    case Strategy::mp:
      batch = select_top(score_mp(ctx.unlabeled, ctx.scores), budget);
      break;
    case Strategy::pfma:
      batch = select_top(score_pfma(ctx.unlabeled, ctx.scores), budget);
      break;
    case Strategy::alamp:
      batch = select_top(score_alamp(ctx.unlabeled, ctx.scores, ctx.history), budget);
      break;
    case Strategy::dal:
      batch = select_top(score_dal(ctx.labeled, ctx.unlabeled, ctx.features, ctx.classifier,
                                   derive_seed(ctx.seed, ctx.iteration, 1)),
                         budget);
      break;
    case Strategy::coreset:
      batch = select_coreset(ctx.labeled, ctx.unlabeled, ctx.features, budget);
      break;
    case Strategy::ma_s:
    case Strategy::mp_s: {
      auto scores = strategy == Strategy::ma_s ? score_ma(ctx.unlabeled, ctx.scores)
                                               : score_mp(ctx.unlabeled, ctx.scores);
      scores.tag = strategy;
      // Step picks and the best-rank refill both live inside the top S*b ranks.
      batch = diversify_step(rank_top(scores, div.step * budget), div.step, budget);
      break;
    }
    case Strategy::ma_d:
    case Strategy::mp_d: {
      auto scores = strategy == Strategy::ma_d ? score_ma(ctx.unlabeled, ctx.scores)
                                               : score_mp(ctx.unlabeled, ctx.scores);
      scores.tag = strategy;
      batch = diversify_distance(rank_top(scores, div.pool_size), ctx.features, div.pool_size,
                                 budget);
      break;
    }
  }
  batch.iteration = ctx.iteration;
  return batch;
}

}  // namespace rarefind
