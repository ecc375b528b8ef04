#pragma once

// Analytic multi-fidelity test problems: Rational (1-D), Wing-weight (10-D)
// and Borehole (8-D). Source 1 is always the high-fidelity function.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfusion/data.hpp"

namespace mfusion {

/// Source ids are 0 for HF and k for LF k.
double rational(int id, double x);
double wing_weight(int id, std::span<const double> x);
double borehole(int id, std::span<const double> x);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

struct AnalyticProblem {
  std::string name;
  std::vector<std::string> variables;
  std::vector<Interval> domain;
  std::vector<std::function<double(std::span<const double>)>> sources;  // index 0 is HF
  std::vector<std::size_t> sample_sizes;                               // per source
  double noise_variance = 0.0;

  std::size_t dim() const { return domain.size(); }
  int num_sources() const { return static_cast<int>(sources.size()); }
  /// Evaluates 1-based `source` at `x`.
  double evaluate(int source, std::span<const double> x) const;
  /// Maps a point of the unit cube onto the domain box.
  std::vector<double> scale(std::span<const double> unit) const;
};

AnalyticProblem rational_problem(Interval domain = {-2.0, 3.0});
AnalyticProblem wing_weight_problem();
AnalyticProblem borehole_problem();

/// "rational", "wingweight" or "borehole"; throws InvalidArgument otherwise.
AnalyticProblem make_problem(const std::string& name);

struct GenerateOptions {
  std::optional<double> noise_variance;  // overrides the problem's value
  std::size_t test_count = 10000;
};

struct GeneratedData {
  MixedDataset train;  // all sources, ts = source index
  MixedDataset test;   // noiseless HF outputs, ts = 1
};

/// Training inputs are Sobol points (origin skipped) with a per-source random
/// shift modulo 1; outputs carry Gaussian noise. The test set is the unshifted
/// Sobol sequence with noiseless HF outputs.
GeneratedData generate(const AnalyticProblem& problem, std::uint64_t seed, const GenerateOptions& options = {});

/// sqrt(sum (y_l - y_h)^2 / (n var(y_h))), population variance.
double rrmse(std::span<const double> y_low, std::span<const double> y_high);
/// RRMSE of 1-based `source` against HF over `count` Sobol points.
double rrmse(const AnalyticProblem& problem, int source, std::size_t count = 10000);

}  // namespace mfusion
