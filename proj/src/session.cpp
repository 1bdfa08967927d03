#include "rarefind/session.hpp"

#include <algorithm>
#include <string>

#include "rarefind/error.hpp"
#include "rarefind/random.hpp"

namespace rarefind {

void SessionConfig::validate() const {
  if (budget < 1) throw Error(Errc::invalid_argument, "budget b must be >= 1");
  if (max_iterations < 1) throw Error(Errc::invalid_argument, "max_iterations T must be >= 1");
  if (num_positive < 1) throw Error(Errc::invalid_argument, "N_p must be >= 1");
  classifier.validate();
  if (strategy == Strategy::ma_s || strategy == Strategy::mp_s || strategy == Strategy::ma_d ||
      strategy == Strategy::mp_d) {
    diversifier.validate(budget);
  }
}

namespace {

std::vector<SampleId> draw_without_replacement(std::vector<SampleId> from, std::size_t count,
                                               Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(from.size() - i));
    std::swap(from[i], from[j]);
  }
  from.resize(count);
  return from;
}

}  // namespace

Query sample_initial_query(const EmbeddedDataset& dataset, ClassId class_id,
                           std::size_t num_positive, std::size_t num_negative,
                           std::uint64_t seed) {
  std::vector<SampleId> members;
  std::vector<SampleId> others;
  for (SampleId id : dataset.pool()) {
    (dataset.label(id) == class_id ? members : others).push_back(id);
  }
  if (members.size() < num_positive) {
    throw Error(Errc::class_too_small, "class " + std::to_string(class_id) + " has " +
                                           std::to_string(members.size()) +
                                           " pool members, query needs " +
                                           std::to_string(num_positive));
  }
  if (others.size() < num_negative) {
    throw Error(Errc::class_too_small, "only " + std::to_string(others.size()) +
                                           " non-target pool samples, query needs " +
                                           std::to_string(num_negative));
  }
  Rng rng(seed);
  Query q;
  q.positive_ids = draw_without_replacement(std::move(members), num_positive, rng);
  q.negative_ids = draw_without_replacement(std::move(others), num_negative, rng);
  q.target_class = class_id;
  return q;
}

Annotator oracle_annotator(const EmbeddedDataset& dataset, ClassId target) {
  return [&dataset, target](const SelectionBatch& batch) {
    std::vector<std::uint8_t> labels;
    labels.reserve(batch.ids.size());
    for (SampleId id : batch.ids) labels.push_back(dataset.label(id) == target ? 1 : 0);
    return labels;
  };
}

SessionState init_session(const EmbeddedDataset& dataset, const Query& query,
                          const SessionConfig& config) {
  config.validate();
  SessionState state;
  auto check = [&](SampleId id) {
    if (id >= dataset.size() || !dataset.in_pool(id)) {
      throw Error(Errc::invalid_index,
                  "query sample " + std::to_string(id) + " is not in the pool split");
    }
    if (state.labeled.contains(id)) {
      throw Error(Errc::invalid_argument,
                  "query sample " + std::to_string(id) + " appears more than once");
    }
  };
  for (SampleId id : query.positive_ids) {
    check(id);
    state.labeled.add(id, true);
    state.discovered.push_back(id);
  }
  for (SampleId id : query.negative_ids) {
    check(id);
    state.labeled.add(id, false);
  }
  state.query_positives = state.discovered.size();
  for (SampleId id : dataset.pool()) {
    if (!state.labeled.contains(id)) state.unlabeled.push_back(id);
  }
  state.exhausted = state.unlabeled.empty();
  return state;
}

bool session_finished(const SessionState& state, const SessionConfig& config) {
  return state.exhausted || state.t >= config.max_iterations;
}

const SelectionBatch& propose_batch(SessionState& state, const EmbeddedDataset& dataset,
                                    const SessionConfig& config) {
  if (state.pending) throw Error(Errc::invalid_argument, "a batch is already awaiting labels");
  if (state.t >= config.max_iterations) {
    throw Error(Errc::invalid_argument, "session already ran T iterations");
  }
  if (state.unlabeled.empty()) throw Error(Errc::empty_split, "unlabeled pool is exhausted");

  const FeatureMatrix& features = dataset.features();
  ClassifierModel model = train(state.labeled, features, config.classifier);

  std::vector<double> scores;
  if (uses_classifier_scores(config.strategy)) {
    scores = predict(model, state.unlabeled, features);
  }
  const std::size_t iteration = state.t + 1;
  const SelectionContext ctx{features,
                             state.labeled,
                             state.unlabeled,
                             scores,
                             state.margins,
                             config.classifier,
                             config.diversifier,
                             config.seed,
                             iteration};
  SelectionBatch batch = select_batch(config.strategy, ctx, config.budget);

  MarginHistory history;
  if (config.strategy == Strategy::alamp) {
    history.reserve(state.unlabeled.size());
    for (std::size_t i = 0; i < state.unlabeled.size(); ++i) {
      history.emplace(state.unlabeled[i], binary_margin(scores[i]));
    }
    for (SampleId id : batch.ids) history.erase(id);
  }

  state.model = std::move(model);
  state.margins = std::move(history);
  state.pending = std::move(batch);
  return *state.pending;
}

void absorb_labels(SessionState& state, std::span<const std::uint8_t> labels) {
  if (!state.pending) throw Error(Errc::invalid_argument, "no batch is awaiting labels");
  const SelectionBatch& batch = *state.pending;
  if (labels.size() != batch.ids.size()) {
    throw Error(Errc::label_mismatch, "got " + std::to_string(labels.size()) +
                                          " labels for a batch of " +
                                          std::to_string(batch.ids.size()));
  }

  IterationRecord record;
  record.t = batch.iteration;
  record.batch = batch.ids;
  record.values = batch.values;
  record.labels.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    const bool positive = labels[i] != 0;
    if (state.labeled.add(batch.ids[i], positive)) {
      state.events.push_back("relabeled sample " + std::to_string(batch.ids[i]));
    }
    if (positive) state.discovered.push_back(batch.ids[i]);
  }
  record.batch_ratio = positive_ratio(labels);

  std::vector<SampleId> taken(batch.ids);
  std::sort(taken.begin(), taken.end());
  std::erase_if(state.unlabeled, [&](SampleId id) {
    return std::binary_search(taken.begin(), taken.end(), id);
  });

  state.t = batch.iteration;
  state.log.push_back(std::move(record));
  state.pending.reset();
  state.exhausted = state.unlabeled.empty();
}

void run_iteration(SessionState& state, const EmbeddedDataset& dataset,
                   const SessionConfig& config, const Annotator& annotator) {
  if (state.unlabeled.empty()) {
    state.exhausted = true;
    return;
  }
  const SelectionBatch& batch = propose_batch(state, dataset, config);
  const auto labels = annotator(batch);
  if (labels.size() != batch.ids.size()) {
    state.pending.reset();
    throw Error(Errc::label_mismatch, "annotator returned " + std::to_string(labels.size()) +
                                          " labels for a batch of " +
                                          std::to_string(batch.ids.size()));
  }
  absorb_labels(state, labels);
}

IterationMetrics evaluate_iteration(const SessionState& state, const EmbeddedDataset& dataset,
                                    const SessionEvaluator& evaluator) {
  IterationMetrics m;
  m.t = state.t;
  m.cov = coverage(state.discovered, evaluator.clusters);
  m.pos = discovery_rate(state.discovered.size(), evaluator.clusters.class_size());
  m.batch_ratio = state.log.empty() ? 0.0 : state.log.back().batch_ratio;
  if (evaluator.compute_f1 && state.model) {
    m.f1 = f1_heldout(*state.model, dataset, evaluator.class_id);
  }
  return m;
}

SessionResult run_session(const EmbeddedDataset& dataset, const Query& query,
                          const SessionConfig& config, const Annotator& annotator,
                          const SessionEvaluator* evaluator) {
  SessionResult result{init_session(dataset, query, config), {}};
  while (!session_finished(result.state, config)) {
    const std::size_t logged = result.state.log.size();
    run_iteration(result.state, dataset, config, annotator);
    if (evaluator != nullptr && result.state.log.size() > logged) {
      result.metrics.push_back(evaluate_iteration(result.state, dataset, *evaluator));
    }
  }
  return result;
}

}  // namespace rarefind
