#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mfusion/data.hpp"
#include "mfusion/prediction.hpp"

namespace mfusion {

double mse(std::span<const double> predictions, std::span<const double> targets);

/// Mean interval score with l, u = mu -+ 1.96 sigma. Throws on sigma <= 0.
double mean_interval_score(std::span<const double> mu, std::span<const double> sigma, std::span<const double> targets,
                           double gamma = 0.05);

/// Fraction of targets inside [mu - 1.96 sigma, mu + 1.96 sigma].
double coverage95(std::span<const double> mu, std::span<const double> sigma, std::span<const double> targets);

struct MetricsReport {
  double mse = 0.0;
  std::optional<double> mean_is;     // absent for deterministic models
  std::optional<double> coverage95;  // absent for deterministic models
  std::size_t n_test = 0;
};

/// Interval metrics are reported only when every prediction carries a variance.
MetricsReport evaluate(std::span<const Prediction> predictions, const MixedDataset& test, double gamma = 0.05);

struct Fold {
  MixedDataset train;
  MixedDataset validation;  // HF rows only
};

/// Partitions the HF rows into k folds; every LF row is in every training set.
std::vector<Fold> kfold(const MixedDataset& dataset, int k, std::uint64_t seed);

}  // namespace mfusion
