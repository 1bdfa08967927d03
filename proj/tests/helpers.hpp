#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rarefind/dataset.hpp"
#include "rarefind/random.hpp"

namespace testing {

namespace fs = std::filesystem;
using rarefind::ClassId;
using rarefind::SampleId;

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() /
           ("rarefind_" + name + "_" + std::to_string(rarefind::Rng(std::random_device{}()).next()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

/// Dataset from explicit rows. Classes are named c0..c{n-1}; every sample not
/// in `test` goes to the pool.
inline rarefind::EmbeddedDataset make_toy(std::size_t dim, std::vector<float> features,
                                          std::vector<ClassId> labels,
                                          std::vector<SampleId> test = {},
                                          bool normalize = false) {
  rarefind::DatasetManifest m;
  m.name = "toy";
  m.dim = dim;
  m.num_samples = labels.size();
  ClassId max_label = 0;
  for (ClassId c : labels) max_label = std::max(max_label, c);
  for (ClassId c = 0; c <= max_label; ++c) m.class_names.push_back("c" + std::to_string(c));
  std::vector<bool> is_test(labels.size(), false);
  for (SampleId id : test) is_test[id] = true;
  std::map<std::string, std::vector<SampleId>> splits;
  auto& pool = splits["pool"];
  splits["test"] = test;
  for (SampleId i = 0; i < labels.size(); ++i) {
    if (!is_test[i]) pool.push_back(i);
  }
  return rarefind::make_dataset(std::move(m), std::move(features), std::move(labels),
                                std::move(splits), normalize);
}

/// Gaussian blobs: class c has `sizes[c]` samples around a random centre of
/// norm `separation`. Every fifth sample of each class goes to the test split.
inline rarefind::EmbeddedDataset make_blobs(std::size_t dim, const std::vector<std::size_t>& sizes,
                                            double separation, double noise,
                                            std::uint64_t seed) {
  rarefind::Rng rng(seed);
  std::vector<float> features;
  std::vector<ClassId> labels;
  std::vector<SampleId> test;
  for (ClassId c = 0; c < sizes.size(); ++c) {
    std::vector<double> centre(dim);
    double norm = 0.0;
    for (auto& v : centre) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : centre) v *= separation / norm;
    for (std::size_t i = 0; i < sizes[c]; ++i) {
      for (std::size_t k = 0; k < dim; ++k) {
        features.push_back(static_cast<float>(centre[k] + noise * rng.normal()));
      }
      if (i % 5 == 4) test.push_back(static_cast<SampleId>(labels.size()));
      labels.push_back(c);
    }
  }
  return make_toy(dim, std::move(features), std::move(labels), std::move(test));
}

}  // namespace testing
