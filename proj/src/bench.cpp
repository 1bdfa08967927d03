#include "rarefind/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "rarefind/error.hpp"
#include "rarefind/random.hpp"

namespace rarefind {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Synthetic long-tailed data

void SyntheticSpec::validate() const {
  if (num_classes < 1) throw Error(Errc::invalid_argument, "num_classes must be >= 1");
  if (dim < 2) throw Error(Errc::invalid_argument, "dim must be >= 2");
  if (min_class_size < 1) throw Error(Errc::invalid_argument, "class sizes must be >= 1");
  if (max_class_size < min_class_size) {
    throw Error(Errc::invalid_argument, "max_class_size must be >= min_class_size");
  }
  if (modes_per_class < 1) throw Error(Errc::invalid_argument, "modes_per_class must be >= 1");
  if (classes_per_family < 1) throw Error(Errc::invalid_argument, "classes_per_family must be >= 1");
  if (!(size_exponent > 0.0)) throw Error(Errc::invalid_argument, "size_exponent must be > 0");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw Error(Errc::invalid_argument, "test_fraction must be in [0, 1)");
  }
  if (family_spread < 0.0 || mode_spread < 0.0 || noise < 0.0) {
    throw Error(Errc::invalid_argument, "spreads must be non-negative");
  }
  std::size_t total = 0;
  for (auto s : class_sizes()) total += s;
  if (total > std::numeric_limits<SampleId>::max()) {
    throw Error(Errc::invalid_argument, "synthetic dataset exceeds the 32-bit id range");
  }
  if (test_fraction > 0.0 && total < 2) {
    throw Error(Errc::invalid_argument, "pool and test splits cannot both be non-empty");
  }
}

std::vector<std::size_t> SyntheticSpec::class_sizes() const {
  std::vector<std::size_t> sizes(num_classes);
  const double span = static_cast<double>(max_class_size - min_class_size);
  for (std::size_t r = 0; r < num_classes; ++r) {
    const double x = num_classes == 1 ? 0.0
                                      : static_cast<double>(r) / static_cast<double>(num_classes - 1);
    sizes[r] = min_class_size +
               static_cast<std::size_t>(std::llround(span * std::pow(1.0 - x, size_exponent)));
  }
  return sizes;
}

namespace {

template <typename T>
void read_if(const json& doc, const char* key, T& out) {
  if (doc.contains(key) && !doc[key].is_null()) out = doc[key].get<T>();
}

json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::format_error, std::string(what) + ": " + e.what());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::not_found, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(Errc::io_error, "write failed on " + path.string());
}

// Offset of `base` by `scale` times a random direction of unit expected norm.
std::vector<double> jitter(std::span<const double> base, double scale, Rng& rng) {
  std::vector<double> out(base.begin(), base.end());
  const double s = scale / std::sqrt(static_cast<double>(base.size()));
  for (double& v : out) v += s * rng.normal();
  return out;
}

void unit(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

}  // namespace

SyntheticSpec parse_synthetic_spec(std::string_view text) {
  const json doc = parse_json(text, "synthetic spec");
  SyntheticSpec s;
  try {
    read_if(doc, "name", s.name);
    read_if(doc, "num_classes", s.num_classes);
    read_if(doc, "size_exponent", s.size_exponent);
    read_if(doc, "min_class_size", s.min_class_size);
    read_if(doc, "max_class_size", s.max_class_size);
    read_if(doc, "dim", s.dim);
    read_if(doc, "modes_per_class", s.modes_per_class);
    read_if(doc, "classes_per_family", s.classes_per_family);
    read_if(doc, "family_spread", s.family_spread);
    read_if(doc, "mode_spread", s.mode_spread);
    read_if(doc, "noise", s.noise);
    read_if(doc, "test_fraction", s.test_fraction);
    read_if(doc, "seed", s.seed);
  } catch (const json::exception& e) {
    throw Error(Errc::format_error, std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticSpec load_synthetic_spec(const fs::path& path) {
  return parse_synthetic_spec(read_text(path));
}

EmbeddedDataset synthesize(const SyntheticSpec& spec, bool normalize) {
  spec.validate();
  const auto sizes = spec.class_sizes();
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  const std::size_t d = spec.dim;
  const std::size_t families = (spec.num_classes + spec.classes_per_family - 1) /
                               spec.classes_per_family;

  Rng geometry(derive_seed(spec.seed, 0));
  std::vector<std::vector<double>> family_dirs(families);
  const std::vector<double> origin(d, 0.0);
  for (auto& dir : family_dirs) {
    dir = jitter(origin, 1.0, geometry);
    unit(dir);
  }

  // Samples are generated class by class, then shuffled so that sample ids
  // carry no class information.
  std::vector<float> grouped(n * d);
  std::vector<ClassId> grouped_labels(n);
  std::size_t row = 0;
  for (ClassId c = 0; c < spec.num_classes; ++c) {
    Rng rng(derive_seed(spec.seed, 1, c));
    auto centre = jitter(family_dirs[c % families], spec.family_spread, rng);
    unit(centre);
    std::vector<std::vector<double>> modes(spec.modes_per_class);
    for (auto& m : modes) {
      m = jitter(centre, spec.mode_spread, rng);
      unit(m);
    }
    for (std::size_t i = 0; i < sizes[c]; ++i, ++row) {
      const auto x = jitter(modes[i % modes.size()], spec.noise, rng);
      for (std::size_t k = 0; k < d; ++k) grouped[row * d + k] = static_cast<float>(x[k]);
      grouped_labels[row] = c;
    }
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffler(derive_seed(spec.seed, 2));
  shuffler.shuffle(std::span(perm));
  std::vector<float> features(n * d);
  std::vector<ClassId> labels(n);
  std::vector<std::vector<SampleId>> by_class(spec.num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(grouped.begin() + static_cast<std::ptrdiff_t>(perm[i] * d), d,
                features.begin() + static_cast<std::ptrdiff_t>(i * d));
    labels[i] = grouped_labels[perm[i]];
    by_class[labels[i]].push_back(static_cast<SampleId>(i));
  }

  std::map<std::string, std::vector<SampleId>> splits;
  auto& pool = splits[std::string(kPoolSplit)];
  auto& test = splits[std::string(kTestSplit)];
  Rng splitter(derive_seed(spec.seed, 3));
  for (auto& members : by_class) {
    splitter.shuffle(std::span(members));
    auto n_test = static_cast<std::size_t>(
        std::llround(spec.test_fraction * static_cast<double>(members.size())));
    n_test = std::min(n_test, members.size() - 1);
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    pool.insert(pool.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }

  DatasetManifest m;
  m.name = spec.name;
  m.dim = d;
  m.num_samples = n;
  for (std::size_t c = 0; c < spec.num_classes; ++c) m.class_names.push_back("class_" + std::to_string(c));
  return make_dataset(std::move(m), std::move(features), std::move(labels), std::move(splits),
                      normalize);
}

EmbeddedDataset generate_synthetic(const SyntheticSpec& spec, const fs::path& manifest_path) {
  EmbeddedDataset raw = synthesize(spec, false);
  export_dataset(raw, manifest_path);
  return raw;
}

// ---------------------------------------------------------------------------
// Experiment configuration

void ExperimentConfig::validate() const {
  if (Q < 1) throw Error(Errc::invalid_argument, "Q must be >= 1");
  if (strategies.empty()) throw Error(Errc::invalid_argument, "no strategies configured");
  for (std::size_t i = 1; i < size_bins.size(); ++i) {
    if (size_bins[i] <= size_bins[i - 1]) {
      throw Error(Errc::invalid_argument, "size_bins must be strictly ascending");
    }
  }
  session.validate();
  coverage.validate();
}

ExperimentConfig parse_experiment_config(std::string_view text, const fs::path& base_dir) {
  const json doc = parse_json(text, "experiment config");
  ExperimentConfig c;
  try {
    c.dataset = doc.at("dataset").get<std::string>();
    if (c.dataset.is_relative() && !base_dir.empty()) c.dataset = base_dir / c.dataset;
    read_if(doc, "normalize", c.normalize);
    for (const auto& token : doc.at("strategies")) {
      c.strategies.push_back(parse_strategy(token.get<std::string>()));
    }
    read_if(doc, "Q", c.Q);
    if (doc.contains("class_filter")) {
      const auto& f = doc["class_filter"];
      const auto mode = f.value("mode", std::string("all"));
      if (mode == "all") {
        c.class_filter.mode = ClassFilter::Mode::all;
      } else if (mode == "size_range") {
        c.class_filter.mode = ClassFilter::Mode::size_range;
        read_if(f, "min", c.class_filter.min_size);
        read_if(f, "max", c.class_filter.max_size);
      } else if (mode == "list") {
        c.class_filter.mode = ClassFilter::Mode::list;
        c.class_filter.classes = f.at("classes").get<std::vector<ClassId>>();
      } else {
        throw Error(Errc::format_error, "unknown class_filter mode \"" + mode + "\"");
      }
    }
    if (doc.contains("session")) {
      const auto& s = doc["session"];
      read_if(s, "budget", c.session.budget);
      read_if(s, "max_iterations", c.session.max_iterations);
      read_if(s, "num_positive", c.session.num_positive);
      read_if(s, "num_negative", c.session.num_negative);
      if (s.contains("classifier")) {
        const auto& k = s["classifier"];
        read_if(k, "C", c.session.classifier.C);
        read_if(k, "max_epochs", c.session.classifier.max_epochs);
        read_if(k, "tolerance", c.session.classifier.tolerance);
        read_if(k, "seed", c.session.classifier.seed);
        if (k.contains("class_weighting")) {
          const auto w = k["class_weighting"].get<std::string>();
          if (w == "uniform") c.session.classifier.class_weighting = ClassWeighting::uniform;
          else if (w == "balanced") c.session.classifier.class_weighting = ClassWeighting::balanced;
          else throw Error(Errc::format_error, "unknown class_weighting \"" + w + "\"");
        }
      }
      if (s.contains("diversifier")) {
        read_if(s["diversifier"], "step", c.session.diversifier.step);
        read_if(s["diversifier"], "pool_size", c.session.diversifier.pool_size);
      }
    }
    if (doc.contains("coverage")) {
      const auto& k = doc["coverage"];
      read_if(k, "K", c.coverage.K);
      read_if(k, "kmeans_runs", c.coverage.kmeans_runs);
      read_if(k, "kmeans_max_iters", c.coverage.kmeans_max_iters);
    }
    read_if(doc, "size_bins", c.size_bins);
    read_if(doc, "report_iterations", c.report_iterations);
    if (doc.contains("output_dir")) {
      c.output_dir = doc["output_dir"].get<std::string>();
      if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = base_dir / c.output_dir;
    }
    if (doc.contains("cluster_cache") && !doc["cluster_cache"].is_null()) {
      fs::path p = doc["cluster_cache"].get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.cluster_cache = p;
    }
    read_if(doc, "seed", c.seed);
    read_if(doc, "workers", c.workers);
    read_if(doc, "compute_f1", c.compute_f1);
  } catch (const json::exception& e) {
    throw Error(Errc::format_error, std::string("experiment config: ") + e.what());
  }
  c.coverage.seed = c.seed;
  c.session.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return parse_experiment_config(read_text(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Running the protocol

Query paired_query(const EmbeddedDataset& dataset, ClassId class_id, std::size_t query_index,
                   const ExperimentConfig& config) {
  return sample_initial_query(dataset, class_id, config.session.num_positive,
                              config.session.num_negative,
                              derive_seed(config.seed, 0x5155455259ULL, class_id, query_index));
}

namespace {

template <typename Job>
void run_jobs(std::size_t count, std::size_t workers, Job&& job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

ResultTable run_experiment(const EmbeddedDataset& dataset, const ExperimentConfig& config) {
  config.validate();
  const ClassStats stats = class_stats(dataset);

  ResultTable table;
  std::vector<ClassId> classes;
  const std::size_t pool_size = dataset.pool().size();
  for (const auto& cls : stats.classes) {
    const auto& f = config.class_filter;
    bool keep = true;
    if (f.mode == ClassFilter::Mode::size_range) {
      keep = cls.size >= f.min_size && cls.size <= f.max_size;
    } else if (f.mode == ClassFilter::Mode::list) {
      keep = std::find(f.classes.begin(), f.classes.end(), cls.class_id) != f.classes.end();
    }
    if (!keep) continue;
    if (cls.size < config.session.num_positive + 1) {
      table.skipped.push_back({cls.class_id, cls.size,
                               "class has fewer than N_p + 1 pool members"});
      continue;
    }
    if (pool_size - cls.size < config.session.num_negative) {
      table.skipped.push_back({cls.class_id, cls.size, "not enough negatives for the query"});
      continue;
    }
    classes.push_back(cls.class_id);
    table.class_sizes[cls.class_id] = cls.size;
  }
  if (classes.empty()) {
    throw Error(Errc::invalid_argument, "class filter matches no evaluable class");
  }
  std::size_t eligible = 0;
  for (ClassId c : classes) eligible += table.class_sizes[c] >= config.coverage.K ? 1 : 0;
  table.eligible_fraction = static_cast<double>(eligible) / static_cast<double>(classes.size());

  std::vector<ClusterSets> clusters(classes.size());
  run_jobs(classes.size(), config.workers, [&](std::size_t i) {
    clusters[i] = config.cluster_cache
                      ? cached_class_clusters(dataset, classes[i], config.coverage,
                                              *config.cluster_cache)
                      : build_class_clusters(dataset, classes[i], config.coverage);
  });

  // One job per (class, query); each runs every strategy on the same query.
  const std::size_t jobs = classes.size() * config.Q;
  std::vector<std::vector<std::vector<ResultRow>>> cells(
      jobs, std::vector<std::vector<ResultRow>>(config.strategies.size()));
  run_jobs(jobs, config.workers, [&](std::size_t j) {
    const std::size_t ci = j / config.Q;
    const std::size_t q = j % config.Q + 1;
    const ClassId class_id = classes[ci];
    const Query query = paired_query(dataset, class_id, q, config);
    const SessionEvaluator evaluator{clusters[ci], class_id, config.compute_f1};
    const Annotator annotator = oracle_annotator(dataset, class_id);
    for (std::size_t s = 0; s < config.strategies.size(); ++s) {
      SessionConfig session = config.session;
      session.strategy = config.strategies[s];
      session.seed = derive_seed(config.seed, class_id, q);
      const SessionResult result = run_session(dataset, query, session, annotator, &evaluator);
      auto& out = cells[j][s];
      for (const auto& m : result.metrics) {
        out.push_back({session.strategy, class_id, q, m.t, m.cov, m.pos, m.batch_ratio, m.f1});
      }
    }
  });

  for (std::size_t s = 0; s < config.strategies.size(); ++s) {
    for (std::size_t j = 0; j < jobs; ++j) {
      table.rows.insert(table.rows.end(), cells[j][s].begin(), cells[j][s].end());
    }
  }
  return table;
}

ResultTable run_experiment(const ExperimentConfig& config) {
  const EmbeddedDataset dataset = load_dataset(config.dataset, config.normalize);
  return run_experiment(dataset, config);
}

// ---------------------------------------------------------------------------
// Aggregation

std::vector<IterationAggregate> mean_per_iteration(const ResultTable& table) {
  std::map<std::pair<Strategy, std::size_t>, IterationAggregate> acc;
  std::vector<Strategy> order;
  for (const auto& r : table.rows) {
    auto [it, inserted] = acc.try_emplace({r.strategy, r.iteration});
    if (inserted) {
      it->second.strategy = r.strategy;
      it->second.iteration = r.iteration;
      if (std::find(order.begin(), order.end(), r.strategy) == order.end()) order.push_back(r.strategy);
    }
    auto& a = it->second;
    ++a.rows;
    a.cov += r.cov;
    a.pos += r.pos;
    a.batch_ratio += r.batch_ratio;
    a.f1 += r.f1;
  }
  std::vector<IterationAggregate> out;
  for (Strategy s : order) {
    for (auto& [key, a] : acc) {
      if (key.first != s) continue;
      const auto n = static_cast<double>(a.rows);
      a.cov /= n;
      a.pos /= n;
      a.batch_ratio /= n;
      a.f1 /= n;
      out.push_back(a);
    }
  }
  return out;
}

std::vector<BinAggregate> bin_by_class_size(const ResultTable& table,
                                            std::span<const std::size_t> bins,
                                            std::size_t iteration) {
  for (std::size_t i = 1; i < bins.size(); ++i) {
    if (bins[i] <= bins[i - 1]) {
      throw Error(Errc::invalid_argument, "size bins must be strictly ascending");
    }
  }
  const bool present = std::any_of(table.rows.begin(), table.rows.end(),
                                   [&](const ResultRow& r) { return r.iteration == iteration; });
  if (!present) {
    throw Error(Errc::invalid_argument,
                "iteration " + std::to_string(iteration) + " is not in the result table");
  }

  struct ClassMean {
    std::size_t n = 0;
    double cov = 0, pos = 0, batch_ratio = 0, f1 = 0;
  };
  std::vector<Strategy> order;
  std::map<std::pair<Strategy, ClassId>, ClassMean> per_class;
  for (const auto& r : table.rows) {
    if (std::find(order.begin(), order.end(), r.strategy) == order.end()) order.push_back(r.strategy);
    if (r.iteration != iteration) continue;
    auto& m = per_class[{r.strategy, r.class_id}];
    ++m.n;
    m.cov += r.cov;
    m.pos += r.pos;
    m.batch_ratio += r.batch_ratio;
    m.f1 += r.f1;
  }

  std::vector<BinAggregate> out;
  for (Strategy s : order) {
    for (std::size_t b = 0; b + 1 < bins.size(); ++b) {
      BinAggregate agg;
      agg.strategy = s;
      agg.lower = bins[b];
      agg.upper = bins[b + 1];
      for (const auto& [key, m] : per_class) {
        if (key.first != s) continue;
        auto size_it = table.class_sizes.find(key.second);
        if (size_it == table.class_sizes.end()) continue;
        const std::size_t size = size_it->second;
        if (size < agg.lower || size >= agg.upper) continue;
        const auto n = static_cast<double>(m.n);
        ++agg.classes;
        agg.cov += m.cov / n;
        agg.pos += m.pos / n;
        agg.batch_ratio += m.batch_ratio / n;
        agg.f1 += m.f1 / n;
      }
      agg.empty = agg.classes == 0;
      if (!agg.empty) {
        const auto n = static_cast<double>(agg.classes);
        agg.cov /= n;
        agg.pos /= n;
        agg.batch_ratio /= n;
        agg.f1 /= n;
      }
      out.push_back(agg);
    }
  }
  return out;
}

double mean_metric_at(const ResultTable& table, Strategy strategy, std::size_t iteration,
                      double ResultRow::*metric) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : table.rows) {
    if (r.strategy == strategy && r.iteration == iteration) {
      sum += r.*metric;
      ++n;
    }
  }
  if (n == 0) {
    throw Error(Errc::invalid_argument, "no rows for strategy " + std::string(to_string(strategy)) +
                                            " at iteration " + std::to_string(iteration));
  }
  return sum / static_cast<double>(n);
}

double median_batch_ratio(const ResultTable& table, Strategy strategy) {
  std::vector<double> values;
  for (const auto& r : table.rows) {
    if (r.strategy == strategy) values.push_back(r.batch_ratio);
  }
  if (values.empty()) {
    throw Error(Errc::invalid_argument,
                "no rows for strategy " + std::string(to_string(strategy)));
  }
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

// ---------------------------------------------------------------------------
// Export

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error(Errc::format_error, "cannot format number");
  out.append(buf, end);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(Errc::format_error, "bad number \"" + std::string(s) + "\"");
  }
  return v;
}

std::size_t parse_size(std::string_view s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(Errc::format_error, "bad integer \"" + std::string(s) + "\"");
  }
  return v;
}

json row_json(const ResultRow& r) {
  return json{{"strategy", std::string(to_string(r.strategy))},
              {"class", r.class_id},
              {"query", r.query},
              {"iteration", r.iteration},
              {"cov", r.cov},
              {"pos", r.pos},
              {"batch_ratio", r.batch_ratio},
              {"f1", r.f1}};
}

}  // namespace

ExportFormat parse_export_format(std::string_view token) {
  if (token == "csv") return ExportFormat::csv;
  if (token == "jsonl") return ExportFormat::jsonl;
  throw Error(Errc::invalid_argument, "unknown export format \"" + std::string(token) + "\"");
}

std::string to_csv(const ResultTable& table) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : table.rows) {
    out += to_string(r.strategy);
    out += ',' + std::to_string(r.class_id) + ',' + std::to_string(r.query) + ',' +
           std::to_string(r.iteration) + ',';
    append_number(out, r.cov);
    out += ',';
    append_number(out, r.pos);
    out += ',';
    append_number(out, r.batch_ratio);
    out += ',';
    append_number(out, r.f1);
    out += '\n';
  }
  return out;
}

std::string to_jsonl(const ResultTable& table) {
  std::string out;
  for (const auto& r : table.rows) {
    out += row_json(r).dump();
    out += '\n';
  }
  return out;
}

void export_table(const ResultTable& table, ExportFormat format, const fs::path& path) {
  if (table.rows.empty()) throw Error(Errc::invalid_argument, "refusing to export an empty table");
  write_text(path, format == ExportFormat::csv ? to_csv(table) : to_jsonl(table));
}

ResultTable parse_csv(std::string_view text) {
  ResultTable table;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line_no == 1) {
      if (line != kCsvHeader) throw Error(Errc::format_error, "unexpected CSV header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    while (true) {
      const auto comma = line.find(',');
      cols.push_back(line.substr(0, comma));
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
    if (cols.size() != 8) {
      throw Error(Errc::format_error, "CSV line " + std::to_string(line_no) + " has " +
                                          std::to_string(cols.size()) + " columns");
    }
    ResultRow r;
    r.strategy = parse_strategy(cols[0]);
    r.class_id = static_cast<ClassId>(parse_size(cols[1]));
    r.query = parse_size(cols[2]);
    r.iteration = parse_size(cols[3]);
    r.cov = parse_double(cols[4]);
    r.pos = parse_double(cols[5]);
    r.batch_ratio = parse_double(cols[6]);
    r.f1 = parse_double(cols[7]);
    table.rows.push_back(r);
  }
  if (line_no == 0) throw Error(Errc::format_error, "empty CSV");
  return table;
}

ResultTable read_csv(const fs::path& path) { return parse_csv(read_text(path)); }

void write_experiment_outputs(const ResultTable& table, const ExperimentConfig& config) {
  const fs::path dir = config.output_dir.empty() ? fs::path(".") : config.output_dir;
  export_table(table, ExportFormat::csv, dir / "results.csv");
  export_table(table, ExportFormat::jsonl, dir / "results.jsonl");

  json summary;
  json strategies = json::array();
  for (Strategy s : config.strategies) strategies.push_back(std::string(to_string(s)));
  summary["strategies"] = strategies;
  summary["eligible_fraction"] = table.eligible_fraction;
  summary["K"] = config.coverage.K;
  json skipped = json::array();
  for (const auto& s : table.skipped) {
    skipped.push_back({{"class", s.class_id}, {"size", s.size}, {"reason", s.reason}});
  }
  summary["skipped_classes"] = skipped;

  json per_iter = json::array();
  for (const auto& a : mean_per_iteration(table)) {
    per_iter.push_back({{"strategy", std::string(to_string(a.strategy))},
                        {"iteration", a.iteration},
                        {"rows", a.rows},
                        {"cov", a.cov},
                        {"pos", a.pos},
                        {"batch_ratio", a.batch_ratio},
                        {"f1", a.f1}});
  }
  summary["per_iteration"] = per_iter;

  json per_bin = json::array();
  if (config.size_bins.size() >= 2) {
    for (std::size_t it : config.report_iterations) {
      if (it > config.session.max_iterations) continue;
      for (const auto& b : bin_by_class_size(table, config.size_bins, it)) {
        per_bin.push_back({{"strategy", std::string(to_string(b.strategy))},
                           {"iteration", it},
                           {"lower", b.lower},
                           {"upper", b.upper},
                           {"classes", b.classes},
                           {"empty", b.empty},
                           {"cov", b.cov},
                           {"pos", b.pos},
                           {"batch_ratio", b.batch_ratio},
                           {"f1", b.f1}});
      }
    }
  }
  summary["per_size_bin"] = per_bin;

  json ratios = json::object();
  for (Strategy s : config.strategies) {
    ratios[std::string(to_string(s))] = median_batch_ratio(table, s);
  }
  summary["median_batch_ratio"] = ratios;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace rarefind
