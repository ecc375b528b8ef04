#include "mfusion/evaluation.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mfusion/error.hpp"
#include "mfusion/prondf.hpp"
#include "mfusion/rng.hpp"

namespace mfusion {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw InvalidArgument("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw InvalidArgument("metrics need at least one value");
}

}  // namespace

double mse(std::span<const double> predictions, std::span<const double> targets) {
  check_lengths(predictions.size(), targets.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) sum += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
  return sum / static_cast<double>(targets.size());
}

double mean_interval_score(std::span<const double> mu, std::span<const double> sigma, std::span<const double> targets,
                           double gamma) {
  check_lengths(mu.size(), targets.size());
  check_lengths(sigma.size(), targets.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw InvalidArgument("interval score needs sigma > 0 (row " + std::to_string(i) + ")");
    sum += interval_score(targets[i], mu[i], sigma[i], gamma);
  }
  return sum / static_cast<double>(targets.size());
}

double coverage95(std::span<const double> mu, std::span<const double> sigma, std::span<const double> targets) {
  check_lengths(mu.size(), targets.size());
  check_lengths(sigma.size(), targets.size());
  std::size_t inside = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (std::abs(targets[i] - mu[i]) <= kPiHalfWidth * sigma[i]) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(targets.size());
}

MetricsReport evaluate(std::span<const Prediction> predictions, const MixedDataset& test, double gamma) {
  const auto y = test.outputs();
  check_lengths(predictions.size(), y.size());
  std::vector<double> mu, sigma;
  bool probabilistic = true;
  for (const auto& p : predictions) {
    mu.push_back(p.mean);
    if (p.variance) {
      sigma.push_back(std::sqrt(*p.variance));
    } else {
      probabilistic = false;
    }
  }
  MetricsReport report;
  report.n_test = y.size();
  report.mse = mse(mu, y);
  if (probabilistic) {
    report.mean_is = mean_interval_score(mu, sigma, y, gamma);
    report.coverage95 = coverage95(mu, sigma, y);
  }
  return report;
}

std::vector<Fold> kfold(const MixedDataset& dataset, int k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("kfold needs k >= 2");
  std::vector<std::size_t> hf, lf;
  for (std::size_t i = 0; i < dataset.size(); ++i) (dataset.row(i).input.ts == 1 ? hf : lf).push_back(i);
  if (hf.size() < static_cast<std::size_t>(k)) {
    throw InvalidArgument("kfold: " + std::to_string(hf.size()) + " HF rows cannot form " + std::to_string(k) + " folds");
  }
  RngStream rng(seed, "kfold");
  rng.shuffle(std::span<std::size_t>(hf));
  std::vector<int> fold_of(dataset.size(), -1);
  const std::size_t base = hf.size() / static_cast<std::size_t>(k);
  const std::size_t extra = hf.size() % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t count = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) fold_of[hf[pos++]] = f;
  }
  std::vector<Fold> folds;
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train_rows, valid_rows;
    for (std::size_t i = 0; i < dataset.size(); ++i) (fold_of[i] == f ? valid_rows : train_rows).push_back(i);
    folds.push_back({dataset.subset(train_rows), dataset.subset(valid_rows)});
  }
  return folds;
}

}  // namespace mfusion
