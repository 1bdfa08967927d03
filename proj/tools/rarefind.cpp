// Command-line front end: dataset checks, benchmark runs and the feedback server.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rarefind/bench.hpp"
#include "rarefind/dataset.hpp"
#include "rarefind/error.hpp"
#include "rarefind/service.hpp"

namespace fs = std::filesystem;
using namespace rarefind;

namespace {

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

int dataset_validate(const fs::path& manifest) {
  const EmbeddedDataset ds = load_dataset(manifest, false);
  const ClassStats stats = class_stats(ds);
  std::printf("ok: %s, %zu samples, d=%zu, %zu classes (%zu in pool), pool=%zu test=%zu\n",
              ds.name().c_str(), ds.size(), ds.dim(), ds.manifest().num_classes(),
              stats.classes.size(), ds.pool().size(), ds.test().size());
  return 0;
}

int dataset_stats(const fs::path& manifest, bool summary_only) {
  const EmbeddedDataset ds = load_dataset(manifest, false);
  const ClassStats stats = class_stats(ds);
  if (!summary_only) {
    std::printf("class,name,size,frequency\n");
    for (const auto& c : stats.classes) {
      std::printf("%u,%s,%zu,%.6f\n", c.class_id, ds.manifest().class_names[c.class_id].c_str(),
                  c.size, c.frequency);
    }
  }
  std::fprintf(summary_only ? stdout : stderr,
               "pool=%zu classes=%zu frequency min=%.6g max=%.6g mean=%.6g median=%.6g imbalance=%.1f\n",
               stats.pool_size, stats.classes.size(), stats.min, stats.max, stats.mean,
               stats.median, stats.min > 0 ? stats.max / stats.min : 0.0);
  return 0;
}

int bench_synth(const std::string& spec_path, const fs::path& out) {
  const SyntheticSpec spec = spec_path.empty() ? SyntheticSpec{} : load_synthetic_spec(spec_path);
  const EmbeddedDataset ds = generate_synthetic(spec, out);
  std::printf("wrote %s: %zu samples, d=%zu, %zu classes\n", out.string().c_str(), ds.size(),
              ds.dim(), ds.manifest().num_classes());
  return 0;
}

int bench_run(const fs::path& config_path, int workers, const std::string& output_dir) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (workers >= 0) config.workers = static_cast<std::size_t>(workers);
  if (!output_dir.empty()) config.output_dir = output_dir;
  const ResultTable table = run_experiment(config);
  write_experiment_outputs(table, config);

  for (const auto& s : table.skipped) {
    std::fprintf(stderr, "skipped class %u (size %zu): %s\n", s.class_id, s.size, s.reason.c_str());
  }
  std::printf("%-8s", "strategy");
  for (std::size_t it : config.report_iterations) std::printf("   cov_%-3zu", it);
  std::printf("  median_ratio\n");
  for (Strategy s : config.strategies) {
    std::printf("%-8s", std::string(to_string(s)).c_str());
    for (std::size_t it : config.report_iterations) {
      if (it > config.session.max_iterations) {
        std::printf("  %7s", "-");
        continue;
      }
      std::printf("  %7.3f", mean_metric_at(table, s, it, &ResultRow::cov));
    }
    std::printf("  %12.3f\n", median_batch_ratio(table, s));
  }
  std::printf("eligible classes (size >= K): %.1f%%\nresults in %s\n",
              100.0 * table.eligible_fraction,
              (config.output_dir.empty() ? fs::path(".") : config.output_dir).string().c_str());
  return 0;
}

int bench_export(const fs::path& in, const std::string& format, const fs::path& out) {
  export_table(read_csv(in), parse_export_format(format), out);
  return 0;
}

struct ServeOptions {
  std::vector<std::string> datasets;
  std::string host = "127.0.0.1";
  int port = 8080;
  bool demo = false;
  std::string event_log;
  std::size_t budget = 10;
  std::size_t iterations = 25;
};

int serve(const ServeOptions& opts) {
  ServiceConfig config;
  config.demo = opts.demo;
  config.defaults.budget = opts.budget;
  config.defaults.max_iterations = opts.iterations;
  if (!opts.event_log.empty()) config.event_log = opts.event_log;
  FeedbackService service(config);
  for (const auto& path : opts.datasets) {
    auto ds = std::make_shared<const EmbeddedDataset>(load_dataset(path, true));
    std::fprintf(stderr, "loaded %s (%zu samples)\n", ds->name().c_str(), ds->size());
    service.add_dataset(std::move(ds), fs::path(path).parent_path());
  }
  if (config.event_log) {
    const auto n = service.replay(*config.event_log);
    if (n > 0) std::fprintf(stderr, "replayed %zu events, %zu sessions\n", n, service.session_count());
  }
  HttpServer server(service);
  const int port = server.bind(opts.host, opts.port);
  if (port < 0) {
    std::fprintf(stderr, "cannot bind %s:%d\n", opts.host.c_str(), opts.port);
    return 1;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::fprintf(stderr, "listening on http://%s:%d%s\n", opts.host.c_str(), port,
               opts.demo ? " (demo mode)" : "");
  const bool ok = server.listen();
  g_server = nullptr;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rarefind: rare-class retrieval with relevance feedback"};
  app.require_subcommand(1);

  auto* dataset = app.add_subcommand("dataset", "Inspect embedded datasets");
  dataset->require_subcommand(1);
  std::string manifest;
  auto* validate = dataset->add_subcommand("validate", "Load a manifest and check every file");
  validate->add_option("manifest", manifest, "Manifest JSON")->required();
  bool summary_only = false;
  auto* stats = dataset->add_subcommand("stats", "Per-class pool sizes as CSV");
  stats->add_option("manifest", manifest, "Manifest JSON")->required();
  stats->add_flag("--summary", summary_only, "Only print the summary line");

  auto* bench = app.add_subcommand("bench", "Benchmark harness");
  bench->require_subcommand(1);
  std::string spec_path, out_path;
  auto* synth = bench->add_subcommand("synth", "Generate the synthetic long-tailed dataset");
  synth->add_option("--spec", spec_path, "Synthetic spec JSON (defaults when omitted)");
  synth->add_option("--out", out_path, "Output manifest path")->required();
  std::string config_path, output_dir;
  int workers = -1;
  auto* run = bench->add_subcommand("run", "Run an experiment");
  run->add_option("--config", config_path, "Experiment config JSON")->required();
  run->add_option("--workers", workers, "Worker threads (0: all cores)");
  run->add_option("--output-dir", output_dir, "Override the config's output_dir");
  std::string in_path, format = "jsonl";
  auto* exp = bench->add_subcommand("export", "Convert a results CSV");
  exp->add_option("--in", in_path, "results.csv")->required();
  exp->add_option("--format", format, "csv or jsonl");
  exp->add_option("--out", out_path, "Output path")->required();

  ServeOptions serve_opts;
  auto* srv = app.add_subcommand("serve", "Run the feedback HTTP service");
  srv->add_option("--dataset", serve_opts.datasets, "Manifest to serve (repeatable)")->required();
  srv->add_option("--host", serve_opts.host, "Bind address");
  srv->add_option("--port", serve_opts.port, "Port (0 picks a free one)");
  srv->add_flag("--demo", serve_opts.demo, "Oracle labels for demos and tests");
  srv->add_option("--event-log", serve_opts.event_log, "Append-only session log (replayed on start)");
  srv->add_option("--budget", serve_opts.budget, "Default batch size b");
  srv->add_option("--iterations", serve_opts.iterations, "Default number of iterations T");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return dataset_validate(manifest);
    if (stats->parsed()) return dataset_stats(manifest, summary_only);
    if (synth->parsed()) return bench_synth(spec_path, out_path);
    if (run->parsed()) return bench_run(config_path, workers, output_dir);
    if (exp->parsed()) return bench_export(in_path, format, out_path);
    if (srv->parsed()) return serve(serve_opts);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
