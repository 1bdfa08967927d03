#include "rarefind/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <numeric>
#include <string>

#include "rarefind/error.hpp"
#include "rarefind/random.hpp"

namespace rarefind {

namespace fs = std::filesystem;

void CoverageConfig::validate() const {
  if (K < 1) throw Error(Errc::invalid_argument, "coverage K must be >= 1");
  if (kmeans_runs < 1) throw Error(Errc::invalid_argument, "kmeans_runs must be >= 1");
  if (kmeans_max_iters < 1) throw Error(Errc::invalid_argument, "kmeans_max_iters must be >= 1");
}

namespace {

double squared_distance_to(std::span<const float> x, const double* centroid) {
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = static_cast<double>(x[k]) - centroid[k];
    acc += d * d;
  }
  return acc;
}

std::vector<double> kmeanspp_seeds(const FeatureMatrix& features, std::span<const SampleId> rows,
                                   std::size_t k, Rng& rng) {
  const std::size_t n = rows.size();
  const std::size_t dim = features.dim();
  std::vector<double> centroids(k * dim);
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  auto place = [&](std::size_t c, std::size_t i) {
    chosen[i] = true;
    const auto x = features.row(rows[i]);
    std::copy(x.begin(), x.end(), centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
    for (std::size_t j = 0; j < n; ++j) {
      d2[j] = std::min(d2[j], squared_distance_to(features.row(rows[j]), &centroids[c * dim]));
    }
  };

  place(0, static_cast<std::size_t>(rng.below(n)));
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t j = 0; j < n; ++j) {
        if (d2[j] <= 0.0) continue;
        pick = j;
        target -= d2[j];
        if (target < 0.0) break;
      }
    } else {
      // Every remaining point coincides with a seed: pick uniformly among
      // those not yet used.
      std::size_t remaining = 0;
      for (bool used : chosen) remaining += used ? 0 : 1;
      auto skip = static_cast<std::size_t>(rng.below(remaining));
      for (std::size_t j = 0; j < n; ++j) {
        if (chosen[j]) continue;
        if (skip-- == 0) {
          pick = j;
          break;
        }
      }
    }
    place(c, pick);
  }
  return centroids;
}

void assign_nearest(const FeatureMatrix& features, std::span<const SampleId> rows,
                    const std::vector<double>& centroids, std::size_t k,
                    std::vector<std::uint32_t>& assignment, std::vector<double>& dist) {
  const std::size_t dim = features.dim();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto x = features.row(rows[i]);
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance_to(x, &centroids[c * dim]);
      if (d < best) {
        best = d;
        best_c = static_cast<std::uint32_t>(c);
      }
    }
    assignment[i] = best_c;
    dist[i] = best;
  }
}

// Moves the farthest point of a multi-member cluster into each empty cluster.
void reseed_empty(std::vector<std::uint32_t>& assignment, std::vector<double>& dist,
                  std::size_t k) {
  std::vector<std::size_t> sizes(k, 0);
  for (auto c : assignment) ++sizes[c];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t far = assignment.size();
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (sizes[assignment[i]] < 2) continue;
      if (far == assignment.size() || dist[i] > dist[far]) far = i;
    }
    --sizes[assignment[far]];
    assignment[far] = static_cast<std::uint32_t>(c);
    dist[far] = 0.0;
    ++sizes[c];
  }
}

void update_centroids(const FeatureMatrix& features, std::span<const SampleId> rows,
                      const std::vector<std::uint32_t>& assignment, std::size_t k,
                      std::vector<double>& centroids) {
  const std::size_t dim = features.dim();
  std::vector<std::size_t> counts(k, 0);
  std::fill(centroids.begin(), centroids.end(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto x = features.row(rows[i]);
    double* c = &centroids[assignment[i] * dim];
    for (std::size_t j = 0; j < dim; ++j) c[j] += x[j];
    ++counts[assignment[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < dim; ++j) centroids[c * dim + j] /= static_cast<double>(counts[c]);
  }
}

std::string cache_file_name(const EmbeddedDataset& dataset, ClassId class_id,
                            const CoverageConfig& config) {
  std::string name = dataset.name();
  for (char& ch : name) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return name + ".c" + std::to_string(class_id) + ".k" + std::to_string(config.K) + ".s" +
         std::to_string(config.seed) + ".clusters";
}

constexpr std::uint32_t kClusterMagic = 0x53434652;  // "RFCS" little-endian
constexpr std::uint32_t kClusterVersion = 1;

}  // namespace

KMeansResult kmeans(const FeatureMatrix& features, std::span<const SampleId> rows, std::size_t k,
                    std::size_t max_iters, std::uint64_t seed) {
  if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
  if (rows.size() < k) {
    throw Error(Errc::invalid_argument, "k-means needs at least k=" + std::to_string(k) +
                                            " points, got " + std::to_string(rows.size()));
  }
  Rng rng(seed);
  KMeansResult result;
  result.centroids = kmeanspp_seeds(features, rows, k, rng);
  result.assignment.assign(rows.size(), 0);
  std::vector<double> dist(rows.size());

  assign_nearest(features, rows, result.centroids, k, result.assignment, dist);
  reseed_empty(result.assignment, dist, k);
  update_centroids(features, rows, result.assignment, k, result.centroids);

  std::vector<std::uint32_t> next(rows.size());
  for (result.iterations = 1; result.iterations <= max_iters; ++result.iterations) {
    assign_nearest(features, rows, result.centroids, k, next, dist);
    reseed_empty(next, dist, k);
    if (next == result.assignment) break;
    result.assignment.swap(next);
    update_centroids(features, rows, result.assignment, k, result.centroids);
  }
  result.iterations = std::min(result.iterations, max_iters);
  return result;
}

ClusterSets::ClusterSets(ClassId class_id, std::size_t requested_k, std::size_t effective_k,
                         std::vector<SampleId> members,
                         std::vector<std::vector<std::uint32_t>> assignments)
    : class_id_(class_id),
      requested_k_(requested_k),
      effective_k_(effective_k),
      members_(std::move(members)),
      assignments_(std::move(assignments)) {
  if (!std::is_sorted(members_.begin(), members_.end())) {
    throw Error(Errc::invalid_argument, "cluster members must be sorted");
  }
  for (const auto& run : assignments_) {
    if (run.size() != members_.size()) {
      throw Error(Errc::dimension_mismatch, "cluster assignment length differs from class size");
    }
    for (auto c : run) {
      if (c >= effective_k_) throw Error(Errc::invalid_index, "cluster index out of range");
    }
  }
}

std::size_t ClusterSets::member_index(SampleId id) const {
  auto it = std::lower_bound(members_.begin(), members_.end(), id);
  if (it == members_.end() || *it != id) return npos;
  return static_cast<std::size_t>(it - members_.begin());
}

void ClusterSets::save(const fs::path& path) const {
  std::vector<std::uint32_t> buf{kClusterMagic,
                                 kClusterVersion,
                                 class_id_,
                                 static_cast<std::uint32_t>(requested_k_),
                                 static_cast<std::uint32_t>(effective_k_),
                                 static_cast<std::uint32_t>(assignments_.size()),
                                 static_cast<std::uint32_t>(members_.size())};
  buf.insert(buf.end(), members_.begin(), members_.end());
  for (const auto& run : assignments_) buf.insert(buf.end(), run.begin(), run.end());
  write_u32_file(path, buf);
}

ClusterSets ClusterSets::load(const fs::path& path) {
  const auto buf = read_u32_file(path);
  if (buf.size() < 7 || buf[0] != kClusterMagic || buf[1] != kClusterVersion) {
    throw Error(Errc::format_error, path.string() + " is not a cluster-set file");
  }
  const std::size_t runs = buf[5];
  const std::size_t n = buf[6];
  if (buf.size() != 7 + n + runs * n) {
    throw Error(Errc::format_error, path.string() + " is truncated");
  }
  std::vector<SampleId> members(buf.begin() + 7, buf.begin() + 7 + static_cast<std::ptrdiff_t>(n));
  std::vector<std::vector<std::uint32_t>> assignments(runs);
  for (std::size_t r = 0; r < runs; ++r) {
    auto first = buf.begin() + static_cast<std::ptrdiff_t>(7 + n + r * n);
    assignments[r].assign(first, first + static_cast<std::ptrdiff_t>(n));
  }
  return ClusterSets(buf[2], buf[3], buf[4], std::move(members), std::move(assignments));
}

ClusterSets build_class_clusters(const EmbeddedDataset& dataset, ClassId class_id,
                                 const CoverageConfig& config) {
  config.validate();
  std::vector<SampleId> members = dataset.pool_members(class_id);
  if (members.empty()) {
    throw Error(Errc::empty_split, "class " + std::to_string(class_id) + " has no pool members");
  }
  const std::size_t n = members.size();
  std::vector<std::vector<std::uint32_t>> assignments;
  assignments.reserve(config.kmeans_runs);
  if (n < config.K) {
    std::vector<std::uint32_t> singletons(n);
    std::iota(singletons.begin(), singletons.end(), 0U);
    assignments.assign(config.kmeans_runs, singletons);
    return ClusterSets(class_id, config.K, n, std::move(members), std::move(assignments));
  }
  for (std::size_t r = 0; r < config.kmeans_runs; ++r) {
    auto result = kmeans(dataset.features(), members, config.K, config.kmeans_max_iters,
                         derive_seed(config.seed, class_id, r));
    assignments.push_back(std::move(result.assignment));
  }
  return ClusterSets(class_id, config.K, config.K, std::move(members), std::move(assignments));
}

ClusterSets cached_class_clusters(const EmbeddedDataset& dataset, ClassId class_id,
                                  const CoverageConfig& config, const fs::path& cache_dir) {
  const fs::path path = cache_dir / cache_file_name(dataset, class_id, config);
  if (fs::exists(path)) {
    try {
      ClusterSets cached = ClusterSets::load(path);
      if (cached.class_id() == class_id && cached.requested_k() == config.K &&
          cached.runs() == config.kmeans_runs && cached.members() == dataset.pool_members(class_id)) {
        return cached;
      }
    } catch (const Error&) {
      // Unreadable or stale cache entry; rebuild below.
    }
  }
  ClusterSets built = build_class_clusters(dataset, class_id, config);
  fs::create_directories(cache_dir);
  built.save(path);
  return built;
}

double coverage(std::span<const SampleId> discovered, const ClusterSets& clusters) {
  if (clusters.runs() == 0 || clusters.effective_k() == 0) return 0.0;
  std::vector<std::size_t> positions;
  positions.reserve(discovered.size());
  for (SampleId id : discovered) {
    const std::size_t idx = clusters.member_index(id);
    if (idx == ClusterSets::npos) {
      throw Error(Errc::invalid_argument, "sample " + std::to_string(id) +
                                              " is not a pool member of class " +
                                              std::to_string(clusters.class_id()));
    }
    positions.push_back(idx);
  }
  double total = 0.0;
  std::vector<bool> hit(clusters.effective_k());
  for (std::size_t r = 0; r < clusters.runs(); ++r) {
    std::fill(hit.begin(), hit.end(), false);
    const auto assign = clusters.assignment(r);
    std::size_t hits = 0;
    for (std::size_t idx : positions) {
      if (!hit[assign[idx]]) {
        hit[assign[idx]] = true;
        ++hits;
      }
    }
    total += static_cast<double>(hits) / static_cast<double>(clusters.effective_k());
  }
  return total / static_cast<double>(clusters.runs());
}

double discovery_rate(std::size_t discovered, std::size_t class_size) {
  if (class_size == 0) throw Error(Errc::invalid_argument, "class size must be >= 1");
  return static_cast<double>(discovered) / static_cast<double>(class_size);
}

double positive_ratio(std::span<const std::uint8_t> labels) {
  if (labels.empty()) return 0.0;
  std::size_t pos = 0;
  for (auto l : labels) pos += l != 0 ? 1 : 0;
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

std::vector<double> batch_positive_ratio(std::span<const std::vector<std::uint8_t>> batch_labels) {
  std::vector<double> out;
  out.reserve(batch_labels.size());
  for (const auto& labels : batch_labels) out.push_back(positive_ratio(labels));
  return out;
}

double f1_score(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp);
  const double precision = c.tp + c.fp == 0 ? 0.0 : tp / static_cast<double>(c.tp + c.fp);
  const double recall = c.tp + c.fn == 0 ? 0.0 : tp / static_cast<double>(c.tp + c.fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double f1_heldout(const ClassifierModel& model, const EmbeddedDataset& dataset, ClassId class_id) {
  const auto test = dataset.test();
  if (test.empty()) throw Error(Errc::empty_split, "test split is empty");
  const auto m = margins(model, test, dataset.features());
  ConfusionCounts counts;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool predicted = logistic(m[i]) >= 0.5;
    const bool actual = dataset.label(test[i]) == class_id;
    if (predicted && actual) ++counts.tp;
    else if (predicted) ++counts.fp;
    else if (actual) ++counts.fn;
    else ++counts.tn;
  }
  return f1_score(counts);
}

}  // namespace rarefind
