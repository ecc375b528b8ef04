#include "mfusion/problems.hpp"

#include <cmath>
#include <numbers>

#include "mfusion/error.hpp"
#include "mfusion/rng.hpp"
#include "mfusion/sobol.hpp"

namespace mfusion {

namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

const std::vector<Interval>& wing_domain() {
  static const std::vector<Interval> d = {{150, 200}, {220, 300}, {6, 10},    {-10, 10},      {16, 45},
                                          {0.5, 1},   {0.08, 0.18}, {2.5, 6}, {1700, 2500}, {0.025, 0.08}};
  return d;
}

const std::vector<Interval>& borehole_domain() {
  static const std::vector<Interval> d = {{0.05, 0.15}, {100, 50000}, {63070, 115600}, {990, 1110},
                                          {63.1, 116},  {700, 820},   {1120, 1680},    {9855, 12045}};
  return d;
}

void check_box(std::span<const double> x, const std::vector<Interval>& box, const char* name) {
  if (x.size() != box.size()) {
    throw InvalidArgument(std::string(name) + " expects " + std::to_string(box.size()) + " inputs");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double tol = 1e-12 * std::max(1.0, std::abs(box[i].hi));
    if (!(x[i] >= box[i].lo - tol && x[i] <= box[i].hi + tol)) {
      throw InvalidArgument(std::string(name) + ": input " + std::to_string(i) + " = " + std::to_string(x[i]) +
                            " outside [" + std::to_string(box[i].lo) + ", " + std::to_string(box[i].hi) + "]");
    }
  }
}

void check_id(int id, int max_id, const char* name) {
  if (id < 0 || id > max_id) throw InvalidArgument(std::string(name) + ": no source id " + std::to_string(id));
}

Matrix sobol_points(std::size_t dim, std::size_t count) { return sobol(dim, count, 1); }

}  // namespace

double rational(int id, double x) {
  check_id(id, 3, "rational");
  static constexpr double cubic[] = {0.1, 0.2, 0.0, 0.0};
  static constexpr double linear[] = {1.0, 1.0, 1.0, 0.0};
  const double den = cubic[id] * x * x * x + x * x + linear[id] * x + 1.0;
  if (std::abs(den) < 1e-12) throw NumericalError("rational: pole at x = " + std::to_string(x));
  return 1.0 / den;
}

double wing_weight(int id, std::span<const double> x) {
  check_id(id, 3, "wing_weight");
  check_box(x, wing_domain(), "wing_weight");
  const double sw = x[0], wfw = x[1], a = x[2], lam = x[3] * kDegree, q = x[4], taper = x[5], tc = x[6],
               nz = x[7], wdg = x[8], wp = x[9];
  static constexpr double sw_exponent[] = {0.758, 0.758, 0.8, 0.9};
  const double c = std::cos(lam);
  const double body = 0.036 * std::pow(sw, sw_exponent[id]) * std::pow(wfw, 0.0035) * std::pow(a / (c * c), 0.6) *
                      std::pow(q, 0.006) * std::pow(taper, 0.04) * std::pow(100.0 * tc / c, -0.3) *
                      std::pow(nz * wdg, 0.49);
  switch (id) {
    case 0: return body + sw * wp;
    case 1:
    case 2: return body + wp;
    default: return body;
  }
}

double borehole(int id, std::span<const double> x) {
  check_id(id, 4, "borehole");
  check_box(x, borehole_domain(), "borehole");
  const double rw = x[0], r = x[1], tu = x[2], hu = x[3], tl = x[4], hl = x[5], l = x[6], kw = x[7];
  const double inner = std::log(r / rw);
  struct Variant {
    double hu, hl, outer_ratio, c, tu_tl;
  };
  static constexpr Variant v[] = {
      {1.0, 1.0, 1.0, 2.0, 1.0},   // HF
      {1.0, 0.8, 1.0, 1.0, 1.0},   // LF1
      {1.0, 3.0, 1.0, 8.0, 0.75},  // LF2
      {1.1, 1.0, 4.0, 3.0, 1.0},   // LF3
      {1.05, 1.0, 2.0, 2.0, 1.0},  // LF4
  };
  const Variant& p = v[id];
  const double num = 2.0 * std::numbers::pi * tu * (p.hu * hu - p.hl * hl);
  const double den = std::log(p.outer_ratio * r / rw) * (1.0 + p.c * l * tu / (inner * rw * rw * kw) + p.tu_tl * tu / tl);
  return num / den;
}

double AnalyticProblem::evaluate(int source, std::span<const double> x) const {
  if (source < 1 || source > num_sources()) throw InvalidArgument(name + ": no source " + std::to_string(source));
  return sources[static_cast<std::size_t>(source - 1)](x);
}

std::vector<double> AnalyticProblem::scale(std::span<const double> unit) const {
  if (unit.size() != dim()) throw InvalidArgument("unit point dimension mismatch");
  std::vector<double> x(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) x[i] = domain[i].lo + unit[i] * (domain[i].hi - domain[i].lo);
  return x;
}

AnalyticProblem rational_problem(Interval domain) {
  if (!(domain.hi > domain.lo)) throw InvalidArgument("rational domain must have hi > lo");
  AnalyticProblem p;
  p.name = "rational";
  p.variables = {"x"};
  p.domain = {domain};
  for (int id = 0; id < 4; ++id) {
    p.sources.emplace_back([id](std::span<const double> x) { return rational(id, x[0]); });
  }
  p.sample_sizes = {5, 30, 30, 30};
  p.noise_variance = 0.001;
  return p;
}

AnalyticProblem wing_weight_problem() {
  AnalyticProblem p;
  p.name = "wingweight";
  p.variables = {"Sw", "Wfw", "A", "Lambda", "q", "lambda", "tc", "Nz", "Wdg", "Wp"};
  p.domain = wing_domain();
  for (int id = 0; id < 4; ++id) {
    p.sources.emplace_back([id](std::span<const double> x) { return wing_weight(id, x); });
  }
  p.sample_sizes = {15, 50, 50, 50};
  p.noise_variance = 25.0;
  return p;
}

AnalyticProblem borehole_problem() {
  AnalyticProblem p;
  p.name = "borehole";
  p.variables = {"rw", "r", "Tu", "Hu", "Tl", "Hl", "L", "Kw"};
  p.domain = borehole_domain();
  for (int id = 0; id < 5; ++id) {
    p.sources.emplace_back([id](std::span<const double> x) { return borehole(id, x); });
  }
  p.sample_sizes = {15, 50, 50, 50, 50};
  p.noise_variance = 6.25;
  return p;
}

AnalyticProblem make_problem(const std::string& name) {
  if (name == "rational") return rational_problem();
  if (name == "wingweight") return wing_weight_problem();
  if (name == "borehole") return borehole_problem();
  throw InvalidArgument("unknown problem '" + name + "' (expected rational, wingweight or borehole)");
}

GeneratedData generate(const AnalyticProblem& problem, std::uint64_t seed, const GenerateOptions& options) {
  const double variance = options.noise_variance.value_or(problem.noise_variance);
  if (variance < 0.0) throw InvalidArgument("noise variance must be >= 0");
  if (problem.sample_sizes.size() != problem.sources.size()) throw InvalidArgument("sample sizes must cover every source");
  const double sd = std::sqrt(variance);
  const std::size_t dim = problem.dim();

  Schema schema;
  for (std::size_t i = 0; i < dim; ++i) schema.numeric_names.push_back("x" + std::to_string(i + 1));
  schema.num_sources = problem.num_sources();

  std::vector<Row> train;
  for (int s = 1; s <= problem.num_sources(); ++s) {
    const std::size_t n = problem.sample_sizes[static_cast<std::size_t>(s - 1)];
    const Matrix unit = sobol_points(dim, n);
    RngStream shift_rng(seed, "train-inputs", static_cast<std::uint64_t>(s));
    std::vector<double> shift(dim);
    for (double& v : shift) v = shift_rng.uniform();
    RngStream noise(seed, "noise", static_cast<std::uint64_t>(s));
    std::vector<double> u(dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dim; ++d) {
        const double v = unit(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) + shift[d];
        u[d] = v - std::floor(v);
      }
      Row row;
      row.input.x = problem.scale(u);
      row.input.ts = s;
      row.y = problem.evaluate(s, row.input.x);
      if (sd > 0.0) row.y += sd * noise.normal();
      train.push_back(std::move(row));
    }
  }

  std::vector<Row> test;
  const Matrix unit = sobol_points(dim, options.test_count);
  std::vector<double> u(dim);
  for (std::size_t i = 0; i < options.test_count; ++i) {
    for (std::size_t d = 0; d < dim; ++d) u[d] = unit(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
    Row row;
    row.input.x = problem.scale(u);
    row.input.ts = 1;
    row.y = problem.evaluate(1, row.input.x);
    test.push_back(std::move(row));
  }
  return {MixedDataset(schema, std::move(train)), MixedDataset(schema, std::move(test))};
}

double rrmse(std::span<const double> y_low, std::span<const double> y_high) {
  if (y_low.size() != y_high.size() || y_high.size() < 2) throw InvalidArgument("rrmse needs two equal arrays of >= 2 values");
  double mean = 0.0;
  for (double v : y_high) mean += v;
  mean /= static_cast<double>(y_high.size());
  double var = 0.0;
  for (double v : y_high) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y_high.size());
  if (!(var > 0.0)) throw NumericalError("rrmse: HF outputs have zero variance");
  double sq = 0.0;
  for (std::size_t i = 0; i < y_low.size(); ++i) sq += (y_low[i] - y_high[i]) * (y_low[i] - y_high[i]);
  return std::sqrt(sq / (static_cast<double>(y_high.size()) * var));
}

double rrmse(const AnalyticProblem& problem, int source, std::size_t count) {
  if (count < 2) throw InvalidArgument("rrmse needs count >= 2");
  const Matrix unit = sobol_points(problem.dim(), count);
  std::vector<double> lo(count), hi(count), u(problem.dim());
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t d = 0; d < problem.dim(); ++d) u[d] = unit(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
    const auto x = problem.scale(u);
    lo[i] = problem.evaluate(source, x);
    hi[i] = problem.evaluate(1, x);
  }
  return rrmse(lo, hi);
}

}  // namespace mfusion
