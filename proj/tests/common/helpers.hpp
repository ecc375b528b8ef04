#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mfusion/data.hpp"
#include "mfusion/rng.hpp"

namespace testing {

using mfusion::MixedDataset;

/// Central differences of f at x, step h.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|b_i|, floor)
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  }
  return worst;
}

/// Random dataset with `dx` numeric columns, one categorical column of
/// `levels` levels (when levels > 0) and `sources` sources.
inline MixedDataset random_dataset(std::uint64_t seed, std::size_t n, std::size_t dx, int levels, int sources) {
  mfusion::RngStream rng(seed, "test-dataset");
  mfusion::Schema schema;
  for (std::size_t k = 0; k < dx; ++k) schema.numeric_names.push_back("x" + std::to_string(k + 1));
  if (levels > 0) {
    mfusion::CategoricalVariable t{"t1", {}};
    for (int l = 0; l < levels; ++l) t.levels.push_back("L" + std::to_string(l));
    schema.categoricals.push_back(t);
  }
  schema.num_sources = sources;
  std::vector<mfusion::Row> rows;
  for (std::size_t i = 0; i < n; ++i) {
    mfusion::Row r;
    for (std::size_t k = 0; k < dx; ++k) r.input.x.push_back(rng.normal() * 3.0 + 1.0);
    if (levels > 0) r.input.tc.push_back(1 + static_cast<int>(i % static_cast<std::size_t>(levels)));
    r.input.ts = 1 + static_cast<int>(i % static_cast<std::size_t>(sources));
    r.y = rng.normal() * 10.0 - 4.0;
    rows.push_back(r);
  }
  return MixedDataset(schema, rows);
}

/// 1-D two-source dataset sampled from smooth functions on a grid.
inline MixedDataset two_source_1d(const std::function<double(double)>& hf, const std::function<double(double)>& lf,
                                  int n_hf, int n_lf) {
  mfusion::Schema schema;
  schema.numeric_names = {"x1"};
  schema.num_sources = 2;
  std::vector<mfusion::Row> rows;
  for (int i = 0; i < n_hf; ++i) {
    const double x = -1.0 + 2.0 * (i + 0.5) / n_hf;
    rows.push_back({{{x}, {}, 1}, hf(x)});
  }
  for (int i = 0; i < n_lf; ++i) {
    const double x = -1.0 + 2.0 * (i + 0.25) / n_lf;
    rows.push_back({{{x}, {}, 2}, lf(x)});
  }
  return MixedDataset(schema, rows);
}

}  // namespace testing
