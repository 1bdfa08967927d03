#include "rarefind/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rarefind/error.hpp"
#include "rarefind/random.hpp"

namespace rarefind {

void ClassifierConfig::validate() const {
  if (!(C > 0.0)) throw Error(Errc::invalid_argument, "classifier C must be > 0");
  if (!(tolerance > 0.0)) throw Error(Errc::invalid_argument, "classifier tolerance must be > 0");
  if (max_epochs < 1) throw Error(Errc::invalid_argument, "classifier max_epochs must be >= 1");
}

bool LabeledPool::add(SampleId id, bool positive) {
  if (auto it = index_.find(id); it != index_.end()) {
    auto& entry = entries_[it->second];
    if (entry.positive != positive) {
      positives_ = positive ? positives_ + 1 : positives_ - 1;
    }
    entry.positive = positive;
    return true;
  }
  index_.emplace(id, entries_.size());
  entries_.push_back({id, positive});
  if (positive) ++positives_;
  return false;
}

std::optional<bool> LabeledPool::label_of(SampleId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].positive;
}

double ClassifierModel::margin(std::span<const float> x) const {
  return dot(weights, x) + static_cast<double>(bias);
}

void ClassifierModel::save(const std::filesystem::path& path) const {
  std::vector<float> values(weights);
  values.push_back(bias);
  write_f32_file(path, values);
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path, std::size_t dim) {
  auto values = read_f32_file(path);
  if (values.size() != dim + 1) {
    throw Error(Errc::dimension_mismatch, path.string() + " holds " +
                                              std::to_string(values.size()) +
                                              " floats, expected " + std::to_string(dim + 1));
  }
  ClassifierModel model;
  model.bias = values.back();
  values.pop_back();
  model.weights = std::move(values);
  return model;
}

double logistic(double margin) {
  if (margin >= 0.0) return 1.0 / (1.0 + std::exp(-margin));
  const double e = std::exp(margin);
  const double s = e / (1.0 + e);
  // exp(m) rounds to 1 for tiny negative m; keep the 0.5 threshold exact.
  return s < 0.5 ? s : std::nextafter(0.5, 0.0);
}

ClassifierModel train_rows(std::span<const TrainingRow> rows, std::size_t dim,
                           const ClassifierConfig& config) {
  config.validate();
  const std::size_t n = rows.size();
  std::size_t n_pos = 0;
  for (const auto& r : rows) {
    if (r.x.size() != dim) {
      throw Error(Errc::dimension_mismatch, "training row has " + std::to_string(r.x.size()) +
                                                " values, expected " + std::to_string(dim));
    }
    n_pos += r.positive ? 1 : 0;
  }
  if (n_pos == 0 || n_pos == n) {
    throw Error(Errc::single_class_pool,
                "training needs at least one positive and one negative example (got " +
                    std::to_string(n_pos) + " positive, " + std::to_string(n - n_pos) +
                    " negative)");
  }

  double c_pos = config.C;
  double c_neg = config.C;
  if (config.class_weighting == ClassWeighting::balanced) {
    const std::size_t n_neg = n - n_pos;
    if (n_pos < n_neg) {
      c_pos *= static_cast<double>(n_neg) / static_cast<double>(n_pos);
    } else if (n_neg < n_pos) {
      c_neg *= static_cast<double>(n_pos) / static_cast<double>(n_neg);
    }
  }

  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  std::vector<double> alpha(n, 0.0);
  std::vector<double> diag(n);
  std::vector<double> upper(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    diag[i] = dot(rows[i].x, rows[i].x) + 1.0;
    y[i] = rows[i].positive ? 1.0 : -1.0;
    upper[i] = rows[i].positive ? c_pos : c_neg;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);

  constexpr double kInf = std::numeric_limits<double>::infinity();
  double pg_max_old = kInf;
  double pg_min_old = -kInf;
  std::size_t active = n;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    double pg_max = -kInf;
    double pg_min = kInf;
    rng.shuffle(std::span(order.data(), active));

    for (std::size_t s = 0; s < active; ++s) {
      const std::size_t i = order[s];
      const auto x = rows[i].x;
      double wx = b;
      for (std::size_t k = 0; k < dim; ++k) wx += w[k] * static_cast<double>(x[k]);
      const double grad = y[i] * wx - 1.0;

      double pg = 0.0;
      if (alpha[i] == 0.0) {
        if (grad > pg_max_old) {
          std::swap(order[s], order[--active]);
          --s;
          continue;
        }
        if (grad < 0.0) pg = grad;
      } else if (alpha[i] == upper[i]) {
        if (grad < pg_min_old) {
          std::swap(order[s], order[--active]);
          --s;
          continue;
        }
        if (grad > 0.0) pg = grad;
      } else {
        pg = grad;
      }
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);

      if (std::abs(pg) > 1e-12) {
        const double old = alpha[i];
        alpha[i] = std::min(std::max(alpha[i] - grad / diag[i], 0.0), upper[i]);
        const double step = (alpha[i] - old) * y[i];
        for (std::size_t k = 0; k < dim; ++k) w[k] += step * static_cast<double>(x[k]);
        b += step;
      }
    }

    if (pg_max - pg_min <= config.tolerance) {
      if (active == n) break;
      active = n;
      pg_max_old = kInf;
      pg_min_old = -kInf;
      continue;
    }
    pg_max_old = pg_max > 0.0 ? pg_max : kInf;
    pg_min_old = pg_min < 0.0 ? pg_min : -kInf;
  }

  ClassifierModel model;
  model.weights.resize(dim);
  for (std::size_t k = 0; k < dim; ++k) model.weights[k] = static_cast<float>(w[k]);
  model.bias = static_cast<float>(b);
  model.train_size = n;
  return model;
}

ClassifierModel train(const LabeledPool& pool, const FeatureMatrix& features,
                      const ClassifierConfig& config) {
  std::vector<TrainingRow> rows;
  rows.reserve(pool.size());
  for (const auto& e : pool.entries()) {
    if (e.id >= features.rows()) {
      throw Error(Errc::invalid_index, "labeled sample " + std::to_string(e.id) +
                                           " is outside the dataset (" +
                                           std::to_string(features.rows()) + " rows)");
    }
    rows.push_back({features.row(e.id), e.positive});
  }
  return train_rows(rows, features.dim(), config);
}

std::vector<double> margins(const ClassifierModel& model, std::span<const SampleId> rows,
                            const FeatureMatrix& features) {
  if (model.weights.size() != features.dim()) {
    throw Error(Errc::dimension_mismatch, "model has " + std::to_string(model.weights.size()) +
                                              " weights, dataset dim is " +
                                              std::to_string(features.dim()));
  }
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= features.rows()) {
      throw Error(Errc::invalid_index, "row " + std::to_string(rows[i]) + " out of range");
    }
    out[i] = model.margin(features.row(rows[i]));
  }
  return out;
}

std::vector<double> predict(const ClassifierModel& model, std::span<const SampleId> rows,
                            const FeatureMatrix& features) {
  auto out = margins(model, rows, features);
  for (double& v : out) v = logistic(v);
  return out;
}

}  // namespace rarefind
