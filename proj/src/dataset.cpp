#include "rarefind/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "rarefind/error.hpp"

namespace rarefind {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::not_found: return "not_found";
    case Errc::io_error: return "io_error";
    case Errc::format_error: return "format_error";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::non_finite: return "non_finite";
    case Errc::overlapping_splits: return "overlapping_splits";
    case Errc::empty_split: return "empty_split";
    case Errc::single_class_pool: return "single_class_pool";
    case Errc::invalid_index: return "invalid_index";
    case Errc::class_too_small: return "class_too_small";
    case Errc::label_mismatch: return "label_mismatch";
    case Errc::unknown_strategy: return "unknown_strategy";
  }
  return "unknown";
}

namespace {

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return value;
  }
}

template <typename T>
std::vector<T> read_le_file(const fs::path& path) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw Error(Errc::not_found, "cannot open " + path.string() + ": " + ec.message());
  if (size % sizeof(T) != 0) {
    throw Error(Errc::dimension_mismatch,
                path.string() + ": size " + std::to_string(size) + " is not a multiple of " +
                    std::to_string(sizeof(T)));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<T> values(size / sizeof(T));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(Errc::io_error, "short read on " + path.string());
  for (auto& v : values) v = byteswap_if_big(v);
  return values;
}

template <typename T>
void write_le_file(const fs::path& path, std::span<const T> values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      v = byteswap_if_big(v);
      out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
  }
  if (!out) throw Error(Errc::io_error, "write failed on " + path.string());
}

fs::path resolve(const fs::path& base_dir, const fs::path& p) {
  return p.is_absolute() ? p : base_dir / p;
}

std::uintmax_t file_size_or_throw(const fs::path& path) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw Error(Errc::not_found, "cannot open " + path.string() + ": " + ec.message());
  return size;
}

}  // namespace

std::vector<float> read_f32_file(const fs::path& path) { return read_le_file<float>(path); }
std::vector<std::uint32_t> read_u32_file(const fs::path& path) {
  return read_le_file<std::uint32_t>(path);
}
void write_f32_file(const fs::path& path, std::span<const float> values) {
  write_le_file<float>(path, values);
}
void write_u32_file(const fs::path& path, std::span<const std::uint32_t> values) {
  write_le_file<std::uint32_t>(path, values);
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::not_found, "cannot open manifest " + manifest_path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(Errc::format_error, manifest_path.string() + ": " + e.what());
  }

  DatasetManifest m;
  try {
    m.name = doc.at("name").get<std::string>();
    const auto dim = doc.at("dim").get<std::int64_t>();
    const auto n = doc.at("num_samples").get<std::int64_t>();
    if (dim < 1) throw Error(Errc::format_error, "manifest dim must be >= 1");
    if (n < 1) throw Error(Errc::format_error, "manifest num_samples must be >= 1");
    m.dim = static_cast<std::size_t>(dim);
    m.num_samples = static_cast<std::size_t>(n);
    m.features_file = doc.at("features_file").get<std::string>();
    m.labels_file = doc.at("labels_file").get<std::string>();
    for (const auto& [split, path] : doc.at("split_files").items()) {
      m.split_files[split] = path.get<std::string>();
    }
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    if (doc.contains("image_paths") && !doc["image_paths"].is_null()) {
      m.image_paths = doc["image_paths"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw Error(Errc::format_error, manifest_path.string() + ": " + e.what());
  }
  for (auto required : {kPoolSplit, kTestSplit}) {
    if (!m.split_files.contains(std::string(required))) {
      throw Error(Errc::format_error,
                  "manifest is missing required split \"" + std::string(required) + "\"");
    }
  }
  if (!m.image_paths.empty() && m.image_paths.size() != m.num_samples) {
    throw Error(Errc::format_error, "image_paths length does not match num_samples");
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& manifest_path) {
  json doc;
  doc["name"] = m.name;
  doc["dim"] = m.dim;
  doc["num_samples"] = m.num_samples;
  doc["features_file"] = m.features_file.generic_string();
  doc["labels_file"] = m.labels_file.generic_string();
  json splits = json::object();
  for (const auto& [name, path] : m.split_files) splits[name] = path.generic_string();
  doc["split_files"] = splits;
  doc["class_names"] = m.class_names;
  if (!m.image_paths.empty()) doc["image_paths"] = m.image_paths;

  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + manifest_path.string());
  out << doc.dump(2) << '\n';
}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<float> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
  if (values_.size() != rows_ * dim_) {
    throw Error(Errc::dimension_mismatch, "feature buffer holds " + std::to_string(values_.size()) +
                                              " values, expected " +
                                              std::to_string(rows_ * dim_));
  }
}

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    acc += d * d;
  }
  return acc;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  }
  return acc;
}

void normalize_rows(std::span<float> values, std::size_t dim) {
  for (std::size_t off = 0; off + dim <= values.size(); off += dim) {
    auto row = values.subspan(off, dim);
    double norm = 0.0;
    for (float v : row) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (float& v : row) v = static_cast<float>(v / norm);
  }
}

EmbeddedDataset::EmbeddedDataset(DatasetManifest manifest, FeatureMatrix features,
                                 std::vector<ClassId> labels,
                                 std::map<std::string, std::vector<SampleId>> splits,
                                 bool normalized)
    : manifest_(std::move(manifest)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      splits_(std::move(splits)),
      in_pool_(features_.rows(), false),
      normalized_(normalized) {
  if (auto it = splits_.find(std::string(kPoolSplit)); it != splits_.end()) {
    for (SampleId id : it->second) in_pool_[id] = true;
  }
}

std::span<const SampleId> EmbeddedDataset::split(std::string_view name) const {
  auto it = splits_.find(std::string(name));
  if (it == splits_.end()) throw Error(Errc::not_found, "no split named " + std::string(name));
  return it->second;
}

std::vector<SampleId> EmbeddedDataset::pool_members(ClassId class_id) const {
  std::vector<SampleId> members;
  for (SampleId id : pool()) {
    if (labels_[id] == class_id) members.push_back(id);
  }
  std::sort(members.begin(), members.end());
  return members;
}

EmbeddedDataset make_dataset(DatasetManifest manifest, std::vector<float> features,
                             std::vector<ClassId> labels,
                             std::map<std::string, std::vector<SampleId>> splits, bool normalize) {
  const std::size_t n = manifest.num_samples;
  const std::size_t d = manifest.dim;
  if (d < 1 || n < 1) throw Error(Errc::format_error, "dim and num_samples must be >= 1");
  if (features.size() != n * d) {
    throw Error(Errc::dimension_mismatch, "features hold " + std::to_string(features.size()) +
                                              " values, manifest expects " +
                                              std::to_string(n) + " x " + std::to_string(d));
  }
  if (labels.size() != n) {
    throw Error(Errc::dimension_mismatch, "labels hold " + std::to_string(labels.size()) +
                                              " entries, manifest expects " + std::to_string(n));
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!std::isfinite(features[i])) {
      throw Error(Errc::non_finite, "non-finite feature at row " + std::to_string(i / d) +
                                        ", col " + std::to_string(i % d));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= manifest.class_names.size()) {
      throw Error(Errc::format_error, "label " + std::to_string(labels[i]) + " at sample " +
                                          std::to_string(i) + " has no class name");
    }
  }
  for (auto required : {kPoolSplit, kTestSplit}) {
    if (!splits.contains(std::string(required))) {
      throw Error(Errc::format_error, "missing required split \"" + std::string(required) + "\"");
    }
  }
  for (auto& [name, ids] : splits) {
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= n) {
        throw Error(Errc::invalid_index, "split \"" + name + "\" index " +
                                             std::to_string(ids[i]) + " >= num_samples " +
                                             std::to_string(n));
      }
      if (i > 0 && ids[i] == ids[i - 1]) {
        throw Error(Errc::format_error,
                    "split \"" + name + "\" repeats index " + std::to_string(ids[i]));
      }
    }
  }
  {
    const auto& pool = splits.at(std::string(kPoolSplit));
    const auto& test = splits.at(std::string(kTestSplit));
    std::vector<SampleId> both;
    std::set_intersection(pool.begin(), pool.end(), test.begin(), test.end(),
                          std::back_inserter(both));
    if (!both.empty()) {
      throw Error(Errc::overlapping_splits, "pool and test splits share " +
                                                std::to_string(both.size()) +
                                                " indices (first: " + std::to_string(both[0]) + ")");
    }
  }
  if (normalize) normalize_rows(features, d);
  return EmbeddedDataset(std::move(manifest), FeatureMatrix(n, d, std::move(features)),
                         std::move(labels), std::move(splits), normalize);
}

EmbeddedDataset load_dataset(const fs::path& manifest_path, bool normalize) {
  DatasetManifest m = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();

  const fs::path features_path = resolve(base, m.features_file);
  const auto expected_bytes = 4ULL * m.num_samples * m.dim;
  if (const auto size = file_size_or_throw(features_path); size != expected_bytes) {
    throw Error(Errc::dimension_mismatch,
                features_path.string() + " has " + std::to_string(size) + " bytes, expected " +
                    std::to_string(expected_bytes) + " (4 x " + std::to_string(m.num_samples) +
                    " x " + std::to_string(m.dim) + ")");
  }
  const fs::path labels_path = resolve(base, m.labels_file);
  if (const auto size = file_size_or_throw(labels_path); size != 4ULL * m.num_samples) {
    throw Error(Errc::dimension_mismatch, labels_path.string() + " has " + std::to_string(size) +
                                              " bytes, expected " +
                                              std::to_string(4ULL * m.num_samples));
  }
  auto features = read_f32_file(features_path);
  auto labels = read_u32_file(labels_path);

  std::map<std::string, std::vector<SampleId>> splits;
  for (const auto& [name, path] : m.split_files) {
    splits[name] = read_u32_file(resolve(base, path));
  }
  return make_dataset(std::move(m), std::move(features), std::move(labels), std::move(splits),
                      normalize);
}

void export_dataset(const EmbeddedDataset& dataset, const fs::path& manifest_path) {
  DatasetManifest m = dataset.manifest();
  const fs::path base = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();
  if (m.features_file.empty() || m.features_file.is_absolute()) {
    m.features_file = stem + ".features.f32";
  }
  if (m.labels_file.empty() || m.labels_file.is_absolute()) m.labels_file = stem + ".labels.u32";
  m.split_files.clear();
  for (const auto& [name, ids] : dataset.splits()) {
    auto it = dataset.manifest().split_files.find(name);
    fs::path p = it != dataset.manifest().split_files.end() ? it->second : fs::path{};
    if (p.empty() || p.is_absolute()) p = stem + "." + name + ".u32";
    m.split_files[name] = p;
    write_u32_file(resolve(base, p), ids);
  }
  write_f32_file(resolve(base, m.features_file), dataset.features().values());
  write_u32_file(resolve(base, m.labels_file), dataset.labels());
  write_manifest(m, manifest_path);
}

ClassStats class_stats(const EmbeddedDataset& dataset) {
  const auto pool = dataset.pool();
  if (pool.empty()) throw Error(Errc::empty_split, "pool split is empty");

  std::vector<std::size_t> counts(dataset.manifest().num_classes(), 0);
  for (SampleId id : pool) ++counts[dataset.label(id)];

  ClassStats stats;
  stats.pool_size = pool.size();
  const double total = static_cast<double>(pool.size());
  for (ClassId c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    stats.classes.push_back({c, counts[c], static_cast<double>(counts[c]) / total});
  }

  std::vector<double> freqs;
  freqs.reserve(stats.classes.size());
  for (const auto& c : stats.classes) freqs.push_back(c.frequency);
  std::sort(freqs.begin(), freqs.end());
  stats.min = freqs.front();
  stats.max = freqs.back();
  stats.mean = std::accumulate(freqs.begin(), freqs.end(), 0.0) / static_cast<double>(freqs.size());
  const std::size_t mid = freqs.size() / 2;
  stats.median = freqs.size() % 2 == 1 ? freqs[mid] : 0.5 * (freqs[mid - 1] + freqs[mid]);
  return stats;
}

}  // namespace rarefind
