#include "rarefind/service.hpp"

#include <algorithm>
#include <charconv>
#include <random>
#include <set>
#include <sstream>

#include "rarefind/error.hpp"
#include "rarefind/random.hpp"

namespace rarefind {

namespace fs = std::filesystem;
using nlohmann::json;

json ServiceError::body() const {
  return json{{"code", code_}, {"message", what()}, {"details", details_}};
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::awaiting_labels: return "awaiting_labels";
    case Phase::ready: return "ready";
    case Phase::finished: return "finished";
  }
  return "unknown";
}

struct FeedbackService::Session {
  std::mutex mutex;
  std::string id;
  std::string dataset_name;
  std::shared_ptr<const EmbeddedDataset> dataset;
  SessionConfig config;
  Query query;
  ClassId target = 0;
  std::shared_ptr<const ClusterSets> clusters;
  SessionState state;
  std::vector<IterationMetrics> metrics;
  Phase phase = Phase::ready;
};

namespace {

ServiceError unprocessable(std::string code, const std::string& message, json details = json::object()) {
  return ServiceError(422, std::move(code), message, std::move(details));
}

std::vector<SampleId> read_ids(const json& request, const char* key, std::size_t n) {
  if (!request.contains(key)) return {};
  const json& arr = request[key];
  if (!arr.is_array()) throw unprocessable("invalid_ids", std::string(key) + " must be an array");
  std::vector<SampleId> ids;
  json bad = json::array();
  for (const auto& v : arr) {
    if (v.is_number_unsigned() && v.get<std::uint64_t>() < n) {
      ids.push_back(static_cast<SampleId>(v.get<std::uint64_t>()));
    } else {
      bad.push_back(v);
    }
  }
  if (!bad.empty()) {
    throw unprocessable("invalid_ids", std::string(key) + " contains ids outside the dataset",
                        json{{"field", key}, {"ids", bad}});
  }
  return ids;
}

template <typename T>
void override_if(const json& doc, const char* key, T& out) {
  if (!doc.contains(key) || doc[key].is_null()) return;
  try {
    out = doc[key].get<T>();
  } catch (const json::exception&) {
    throw unprocessable("invalid_config", std::string("config field ") + key + " has the wrong type",
                        json{{"field", key}});
  }
}

SessionConfig session_config(const SessionConfig& defaults, const json& request) {
  SessionConfig c = defaults;
  if (request.contains("strategy")) {
    if (!request["strategy"].is_string()) {
      throw unprocessable("unknown_strategy", "strategy must be a string");
    }
    try {
      c.strategy = parse_strategy(request["strategy"].get<std::string>());
    } catch (const Error& e) {
      throw unprocessable("unknown_strategy", e.what(), json{{"strategy", request["strategy"]}});
    }
  }
  if (request.contains("config")) {
    const json& cfg = request["config"];
    if (!cfg.is_object()) throw unprocessable("invalid_config", "config must be an object");
    override_if(cfg, "budget", c.budget);
    override_if(cfg, "max_iterations", c.max_iterations);
    override_if(cfg, "seed", c.seed);
    override_if(cfg, "C", c.classifier.C);
    override_if(cfg, "max_epochs", c.classifier.max_epochs);
    override_if(cfg, "tolerance", c.classifier.tolerance);
    override_if(cfg, "step", c.diversifier.step);
    override_if(cfg, "pool_size", c.diversifier.pool_size);
    if (cfg.contains("class_weighting")) {
      const auto w = cfg["class_weighting"];
      if (w == "uniform") c.classifier.class_weighting = ClassWeighting::uniform;
      else if (w == "balanced") c.classifier.class_weighting = ClassWeighting::balanced;
      else throw unprocessable("invalid_config", "class_weighting must be uniform or balanced");
    }
  }
  c.classifier.seed = c.seed;
  try {
    c.validate();
  } catch (const Error& e) {
    throw unprocessable("invalid_config", e.what());
  }
  return c;
}

json batch_json(const SelectionBatch& batch, const EmbeddedDataset* oracle, ClassId target) {
  json items = json::array();
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    json item{{"id", batch.ids[i]}, {"score", batch.values[i]}};
    if (oracle != nullptr) item["suggested"] = oracle->label(batch.ids[i]) == target;
    items.push_back(std::move(item));
  }
  return json{{"iteration", batch.iteration}, {"items", std::move(items)}};
}

json metrics_json(const std::vector<IterationMetrics>& metrics) {
  json out = json::array();
  for (const auto& m : metrics) {
    out.push_back({{"t", m.t}, {"cov", m.cov}, {"pos", m.pos}, {"batch_ratio", m.batch_ratio},
                   {"f1", m.f1}});
  }
  return out;
}

}  // namespace

FeedbackService::FeedbackService(ServiceConfig config) : config_(std::move(config)) {
  std::random_device rd;
  id_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  if (config_.event_log) {
    if (config_.event_log->has_parent_path()) fs::create_directories(config_.event_log->parent_path());
    log_.open(*config_.event_log, std::ios::app);
    if (!log_) throw Error(Errc::io_error, "cannot open event log " + config_.event_log->string());
  }
}

FeedbackService::~FeedbackService() = default;

void FeedbackService::add_dataset(std::shared_ptr<const EmbeddedDataset> dataset,
                                  fs::path image_root) {
  const std::string name = dataset->name();
  datasets_[name] = DatasetEntry{std::move(dataset), std::move(image_root)};
}

const FeedbackService::DatasetEntry& FeedbackService::dataset_entry(const std::string& name) const {
  auto it = datasets_.find(name);
  if (it == datasets_.end()) {
    throw ServiceError(404, "unknown_dataset", "no dataset named \"" + name + "\"",
                       json{{"dataset", name}});
  }
  return it->second;
}

std::shared_ptr<FeedbackService::Session> FeedbackService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    throw ServiceError(404, "unknown_session", "no session \"" + id + "\"", json{{"session", id}});
  }
  return it->second;
}

std::shared_ptr<const ClusterSets> FeedbackService::clusters_for(const DatasetEntry& entry,
                                                                 ClassId class_id) {
  const auto key = std::make_pair(entry.dataset->name(), class_id);
  {
    std::lock_guard lock(clusters_mutex_);
    if (auto it = clusters_.find(key); it != clusters_.end()) return it->second;
  }
  // Built outside the lock; a concurrent duplicate build yields the same result.
  auto built = std::make_shared<const ClusterSets>(
      build_class_clusters(*entry.dataset, class_id, config_.coverage));
  std::lock_guard lock(clusters_mutex_);
  return clusters_.try_emplace(key, std::move(built)).first->second;
}

std::string FeedbackService::new_session_id() {
  std::lock_guard lock(id_mutex_);
  char buf[17];
  const std::uint64_t v = derive_seed(id_salt_, ++id_counter_);
  auto [end, ec] = std::to_chars(buf, buf + 16, v, 16);
  return "s" + std::string(static_cast<std::size_t>(16 - (end - buf)), '0') + std::string(buf, end);
}

void FeedbackService::log_event(const json& event) {
  if (replaying_ || !log_.is_open()) return;
  std::lock_guard lock(log_mutex_);
  log_ << event.dump() << '\n';
  log_.flush();
}

json FeedbackService::create_session(const json& request) {
  return create_with_id(new_session_id(), request);
}

json FeedbackService::create_with_id(const std::string& id, const json& request) {
  if (!request.is_object()) throw ServiceError(400, "bad_request", "request body must be an object");
  if (!request.contains("dataset") || !request["dataset"].is_string()) {
    throw unprocessable("invalid_request", "dataset name is required");
  }
  const DatasetEntry& entry = dataset_entry(request["dataset"].get<std::string>());
  const EmbeddedDataset& ds = *entry.dataset;

  auto session = std::make_shared<Session>();
  session->id = id;
  session->dataset_name = ds.name();
  session->dataset = entry.dataset;
  session->config = session_config(config_.defaults, request);
  session->query.positive_ids = read_ids(request, "positive_ids", ds.size());
  session->query.negative_ids = read_ids(request, "negative_ids", ds.size());
  if (session->query.positive_ids.empty() || session->query.negative_ids.empty()) {
    throw unprocessable("single_class_query",
                        "the query needs at least one positive and one negative id");
  }

  json not_in_pool = json::array();
  json repeated = json::array();
  std::set<SampleId> seen;
  for (const auto* ids : {&session->query.positive_ids, &session->query.negative_ids}) {
    for (SampleId s : *ids) {
      if (!ds.in_pool(s)) not_in_pool.push_back(s);
      if (!seen.insert(s).second) repeated.push_back(s);
    }
  }
  if (!not_in_pool.empty()) {
    throw unprocessable("invalid_ids", "query ids must belong to the pool split",
                        json{{"ids", not_in_pool}});
  }
  if (!repeated.empty()) {
    throw unprocessable("invalid_ids", "query ids must be distinct and positives disjoint from negatives",
                        json{{"ids", repeated}});
  }

  if (request.contains("target_class")) {
    const json& tc = request["target_class"];
    if (!tc.is_number_unsigned() || tc.get<std::uint64_t>() >= ds.manifest().num_classes()) {
      throw unprocessable("invalid_request", "target_class is not a class of the dataset");
    }
    session->target = static_cast<ClassId>(tc.get<std::uint64_t>());
  } else {
    session->target = ds.label(session->query.positive_ids.front());
  }
  session->query.target_class = session->target;
  session->clusters = clusters_for(entry, session->target);

  session->state = init_session(ds, session->query, session->config);
  propose_batch(session->state, ds, session->config);
  session->phase = Phase::awaiting_labels;

  json response;
  {
    std::lock_guard session_lock(session->mutex);
    {
      std::unique_lock lock(sessions_mutex_);
      if (!sessions_.try_emplace(id, session).second) {
        throw ServiceError(409, "duplicate_session", "session \"" + id + "\" already exists");
      }
    }
    log_event(json{{"event", "create"}, {"session", id}, {"request", request}});
    response = json{{"session", json::object()}, {"batch", json::object()}};
    response["session"] = {{"session_id", id},
                           {"dataset", session->dataset_name},
                           {"strategy", std::string(to_string(session->config.strategy))},
                           {"phase", std::string(to_string(session->phase))},
                           {"t", session->state.pending->iteration}};
    response["batch"] = batch_json(*session->state.pending, config_.demo ? &ds : nullptr,
                                   session->target);
  }
  return response;
}

namespace {

json handle_json(const std::string& id, const std::string& dataset, Strategy strategy, Phase phase,
                 const SessionState& state) {
  const std::size_t t = state.pending ? state.pending->iteration : state.t;
  return json{{"session_id", id},
              {"dataset", dataset},
              {"strategy", std::string(to_string(strategy))},
              {"phase", std::string(to_string(phase))},
              {"t", t}};
}

}  // namespace

json FeedbackService::get_batch(const std::string& session_id) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  if (s->phase != Phase::awaiting_labels || !s->state.pending) {
    throw ServiceError(409, "wrong_phase", "no batch is outstanding",
                       json{{"phase", std::string(to_string(s->phase))}});
  }
  return json{{"session", handle_json(s->id, s->dataset_name, s->config.strategy, s->phase, s->state)},
              {"batch", batch_json(*s->state.pending, config_.demo ? s->dataset.get() : nullptr,
                                   s->target)}};
}

json FeedbackService::submit_labels(const std::string& session_id, const json& request) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  if (s->phase != Phase::awaiting_labels || !s->state.pending) {
    throw ServiceError(409, "wrong_phase", "no batch is awaiting labels",
                       json{{"phase", std::string(to_string(s->phase))}});
  }
  if (!request.is_object()) throw ServiceError(400, "bad_request", "request body must be an object");
  const SelectionBatch& batch = *s->state.pending;
  const EmbeddedDataset& ds = *s->dataset;

  std::vector<std::uint8_t> labels(batch.ids.size(), 0);
  if (request.contains("auto") && request["auto"] == true) {
    if (!config_.demo) {
      throw unprocessable("demo_only", "automatic labels are only available in demo mode");
    }
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
      labels[i] = ds.label(batch.ids[i]) == s->target ? 1 : 0;
    }
  } else {
    if (!request.contains("labels") || !request["labels"].is_array()) {
      throw unprocessable("label_mismatch", "labels must be an array of {id, relevant}");
    }
    std::map<SampleId, std::size_t> position;
    for (std::size_t i = 0; i < batch.ids.size(); ++i) position[batch.ids[i]] = i;
    std::vector<bool> given(batch.ids.size(), false);
    json unexpected = json::array();
    json duplicate = json::array();
    json malformed = json::array();
    for (const auto& entry : request["labels"]) {
      if (!entry.is_object() || !entry.contains("id") || !entry["id"].is_number_unsigned() ||
          !entry.contains("relevant") || !entry["relevant"].is_boolean()) {
        malformed.push_back(entry);
        continue;
      }
      const auto raw = entry["id"].get<std::uint64_t>();
      auto it = raw <= std::numeric_limits<SampleId>::max()
                    ? position.find(static_cast<SampleId>(raw))
                    : position.end();
      if (it == position.end()) {
        unexpected.push_back(raw);
        continue;
      }
      if (given[it->second]) {
        duplicate.push_back(raw);
        continue;
      }
      given[it->second] = true;
      labels[it->second] = entry["relevant"].get<bool>() ? 1 : 0;
    }
    json missing = json::array();
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
      if (!given[i]) missing.push_back(batch.ids[i]);
    }
    if (!malformed.empty() || !unexpected.empty() || !duplicate.empty() || !missing.empty()) {
      throw unprocessable("label_mismatch", "labels must cover the outstanding batch exactly once",
                          json{{"unexpected", unexpected},
                               {"duplicate", duplicate},
                               {"missing", missing},
                               {"malformed", malformed}});
    }
  }

  json logged = json::array();
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    logged.push_back({{"id", batch.ids[i]}, {"relevant", labels[i] != 0}});
  }

  absorb_labels(s->state, labels);
  const SessionEvaluator evaluator{*s->clusters, s->target, true};
  s->metrics.push_back(evaluate_iteration(s->state, ds, evaluator));
  log_event(json{{"event", "labels"}, {"session", s->id}, {"labels", logged}});

  json response;
  if (session_finished(s->state, s->config)) {
    s->phase = Phase::finished;
    const auto found = s->state.discovered_from_feedback();
    const json discovered = std::vector<SampleId>(found.begin(), found.end());
    response["report"] = {{"iterations", metrics_json(s->metrics)},
                          {"discovered", discovered},
                          {"exhausted", s->state.exhausted}};
  } else {
    s->phase = Phase::ready;
    propose_batch(s->state, ds, s->config);
    s->phase = Phase::awaiting_labels;
    response["batch"] = batch_json(*s->state.pending, config_.demo ? &ds : nullptr, s->target);
  }
  response["session"] = handle_json(s->id, s->dataset_name, s->config.strategy, s->phase, s->state);
  return response;
}

json FeedbackService::get_state(const std::string& session_id) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  json log = json::array();
  for (const auto& r : s->state.log) {
    json labels = json::array();
    for (auto l : r.labels) labels.push_back(l != 0);
    log.push_back({{"t", r.t}, {"batch", r.batch}, {"scores", r.values}, {"labels", labels},
                   {"batch_ratio", r.batch_ratio}});
  }
  const auto found = s->state.discovered_from_feedback();
    const json discovered = std::vector<SampleId>(found.begin(), found.end());
  json state{{"session", handle_json(s->id, s->dataset_name, s->config.strategy, s->phase, s->state)},
             {"config",
              {{"budget", s->config.budget},
               {"max_iterations", s->config.max_iterations},
               {"seed", s->config.seed},
               {"C", s->config.classifier.C}}},
             {"query", {{"positive_ids", s->query.positive_ids},
                        {"negative_ids", s->query.negative_ids}}},
             {"target_class", s->target},
             {"log", log},
             {"metrics", metrics_json(s->metrics)},
             {"discovered", discovered},
             {"events", s->state.events},
             {"batch", nullptr}};
  if (s->state.pending) {
    state["batch"] = batch_json(*s->state.pending, config_.demo ? s->dataset.get() : nullptr,
                                s->target);
  }
  return state;
}

json FeedbackService::list_datasets() const {
  json out = json::array();
  for (const auto& [name, entry] : datasets_) {
    const auto& m = entry.dataset->manifest();
    out.push_back({{"name", name},
                   {"dim", m.dim},
                   {"num_samples", m.num_samples},
                   {"pool_size", entry.dataset->pool().size()},
                   {"class_names", m.class_names},
                   {"has_images", !m.image_paths.empty()}});
  }
  return json{{"datasets", out}};
}

std::optional<fs::path> FeedbackService::image_path(const std::string& dataset,
                                                    std::string_view sample_id) const {
  const DatasetEntry& entry = dataset_entry(dataset);
  const auto& paths = entry.dataset->manifest().image_paths;
  std::uint64_t id = 0;
  auto [ptr, ec] = std::from_chars(sample_id.data(), sample_id.data() + sample_id.size(), id);
  if (ec != std::errc{} || ptr != sample_id.data() + sample_id.size() ||
      id >= entry.dataset->size()) {
    throw ServiceError(404, "unknown_sample", "no sample \"" + std::string(sample_id) + "\"");
  }
  if (paths.empty() || paths[id].empty()) return std::nullopt;
  const fs::path p = paths[id];
  return p.is_absolute() || entry.image_root.empty() ? p : entry.image_root / p;
}

std::size_t FeedbackService::replay(const fs::path& event_log) {
  std::ifstream in(event_log);
  if (!in) return 0;
  replaying_ = true;
  std::size_t applied = 0;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json event = json::parse(line);
      const auto kind = event.at("event").get<std::string>();
      const auto id = event.at("session").get<std::string>();
      if (kind == "create") {
        create_with_id(id, event.at("request"));
      } else if (kind == "labels") {
        submit_labels(id, json{{"labels", event.at("labels")}});
      } else {
        throw Error(Errc::format_error, "unknown event \"" + kind + "\"");
      }
      ++applied;
    }
  } catch (const json::exception& e) {
    replaying_ = false;
    throw Error(Errc::format_error, "event log line " + std::to_string(applied + 1) + ": " + e.what());
  } catch (...) {
    replaying_ = false;
    throw;
  }
  replaying_ = false;
  return applied;
}

std::size_t FeedbackService::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

}  // namespace rarefind
