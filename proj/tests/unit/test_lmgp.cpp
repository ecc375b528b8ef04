#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "mfusion/autodiff.hpp"
#include "mfusion/error.hpp"
#include "mfusion/lmgp.hpp"

using namespace mfusion;

namespace {

Matrix rotation(double angle, bool reflect) {
  Matrix q(2, 2);
  q << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  if (reflect) q.col(1) *= -1.0;
  return q;
}

// Three sources, one 3-level categorical variable, two numeric inputs.
struct Fixture {
  MixedDataset data = testing::random_dataset(5, 12, 2, 3, 3);
  MixedDataset scaled = Standardizer::fit(data).apply(data);
  LmgpDesign design = make_design(scaled);
  Vector y;
  LmgpParameters params;

  Fixture() {
    const auto yv = scaled.outputs();
    y = Eigen::Map<const Vector>(yv.data(), static_cast<Eigen::Index>(yv.size()));
    RngStream rng(2, "fixture");
    params.omega = Vector(2);
    params.omega << -0.3, 0.2;
    params.source_map = Matrix(3, 2);
    params.categorical_map = Matrix(3, 2);
    for (Eigen::Index i = 0; i < 6; ++i) {
      params.source_map.data()[i] = rng.normal();
      params.categorical_map.data()[i] = rng.normal();
    }
    params.nugget = 1e-3;
  }
};

Var tape_exp10(Var a) { return exp(a * std::numbers::ln10); }

// Profiled NLL rebuilt on the scalar tape from the packed parameter vector,
// with its own Cholesky, used as the gradient oracle.
Var profiled_nll_on_tape(Tape& tape, std::span<const Var> p, const LmgpDesign& d, const Vector& y) {
  const Eigen::Index n = d.size(), dx = d.x.cols(), width = d.zeta.cols();
  Eigen::Index ds = 1;
  for (int s : d.source) ds = std::max<Eigen::Index>(ds, s + 1);
  const Eigen::Index as = dx, ac = dx + ds * 2, u = ac + width * 2;
  auto zs = [&](Eigen::Index i, int k) { return p[static_cast<std::size_t>(as + d.source[static_cast<std::size_t>(i)] * 2 + k)]; };
  auto zc = [&](Eigen::Index i, int k) {
    Var acc = tape.constant(0.0);
    for (Eigen::Index l = 0; l < width; ++l)
      if (d.zeta(i, l) != 0.0) acc = acc + d.zeta(i, l) * p[static_cast<std::size_t>(ac + l * 2 + k)];
    return acc;
  };
  const Var nugget = tape_exp10(-8.0 + 8.0 * sigmoid(p[static_cast<std::size_t>(u)]));

  std::vector<std::vector<Var>> r(static_cast<std::size_t>(n), std::vector<Var>(static_cast<std::size_t>(n)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      Var dist = tape.constant(0.0);
      for (Eigen::Index k = 0; k < dx; ++k) {
        const double diff = d.x(i, k) - d.x(j, k);
        dist = dist + tape_exp10(p[static_cast<std::size_t>(k)]) * (diff * diff);
      }
      for (int k = 0; k < 2; ++k) dist = dist + square(zs(i, k) - zs(j, k)) + square(zc(i, k) - zc(j, k));
      Var v = exp(-dist);
      if (i == j) v = v + nugget;
      r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
    }
  }
  // Cholesky, lower triangle.
  auto at = [&](Eigen::Index i, Eigen::Index j) -> Var& { return r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]; };
  for (Eigen::Index j = 0; j < n; ++j) {
    Var diag = at(j, j);
    for (Eigen::Index k = 0; k < j; ++k) diag = diag - square(at(j, k));
    at(j, j) = sqrt(diag);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      Var v = at(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v = v - at(i, k) * at(j, k);
      at(i, j) = v / at(j, j);
    }
  }
  auto solve = [&](std::vector<Var> b) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < i; ++k) b[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] - at(i, k) * b[static_cast<std::size_t>(k)];
      b[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] / at(i, i);
    }
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      for (Eigen::Index k = i + 1; k < n; ++k) b[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] - at(k, i) * b[static_cast<std::size_t>(k)];
      b[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] / at(i, i);
    }
    return b;
  };
  std::vector<Var> ones(static_cast<std::size_t>(n), tape.constant(1.0)), yv;
  for (Eigen::Index i = 0; i < n; ++i) yv.push_back(tape.constant(y[i]));
  const auto ri1 = solve(ones);
  Var s11 = tape.constant(0.0), s1y = tape.constant(0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    s11 = s11 + ri1[static_cast<std::size_t>(i)];
    s1y = s1y + ri1[static_cast<std::size_t>(i)] * y[i];
  }
  const Var m = s1y / s11;
  std::vector<Var> resid;
  for (Eigen::Index i = 0; i < n; ++i) resid.push_back(yv[static_cast<std::size_t>(i)] - m);
  const auto a = solve(resid);
  Var quad = tape.constant(0.0), logdet_half = tape.constant(0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    quad = quad + resid[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
    logdet_half = logdet_half + log(at(i, i));
  }
  const double nd = static_cast<double>(n);
  const Var s2 = quad / nd;
  return 0.5 * nd * log(2.0 * std::numbers::pi * s2) + logdet_half + 0.5 * nd;
}

}  // namespace

TEST_CASE("latent map selects and sums rows") {
  Matrix a(2, 2);
  a << 1.5, -2.0, 0.25, 4.0;
  const Vector z = latent_map(std::vector<double>{1, 0}, a);
  CHECK(z(0) == 1.5);
  CHECK(z(1) == -2.0);
  CHECK(latent_map(std::vector<double>{0, 1}, Matrix::Zero(2, 2)).isZero(0.0));
  Matrix b(5, 2);
  for (Eigen::Index i = 0; i < 10; ++i) b.data()[i] = static_cast<double>(i * i) - 3.0;
  const Vector s = latent_map(std::vector<double>{0, 1, 0, 1, 0}, b);
  CHECK(s(0) == b(1, 0) + b(3, 0));
  CHECK(s(1) == b(1, 1) + b(3, 1));
  CHECK_THROWS_AS(latent_map(std::vector<double>{1, 0, 0}, a), InvalidArgument);
}

TEST_CASE("correlation closed forms") {
  Schema schema;
  schema.numeric_names = {"x1"};
  schema.num_sources = 2;
  LmgpParameters p;
  p.omega = Vector::Zero(1);
  p.source_map = Matrix::Zero(2, 2);
  p.source_map(1, 0) = 0.7;  // source 2 sits at distance 0.7 from source 1
  p.categorical_map = Matrix::Zero(0, 2);
  const MixedInput a{{0.3}, {}, 1}, b{{1.3}, {}, 1}, c{{0.3}, {}, 2};
  CHECK(correlation(a, a, p, schema) == 1.0);
  CHECK(correlation(a, b, p, schema) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(correlation(a, c, p, schema) == doctest::Approx(std::exp(-0.49)).epsilon(1e-15));
}

TEST_CASE("negative log-likelihood of two independent points") {
  Schema schema;
  schema.numeric_names = {"x1"};
  const MixedDataset d(schema, {{{{0.0}, {}, 1}, 0.0}, {{{100.0}, {}, 1}, 0.0}});
  LmgpParameters p;
  p.omega = Vector::Zero(1);
  p.source_map = Matrix::Zero(1, 2);
  p.categorical_map = Matrix::Zero(0, 2);
  p.nugget = kMinNugget;
  const double nll = neg_log_likelihood(p, 0.0, 1.0, make_design(d), Vector::Zero(2));
  // R = (1 + nugget) I.
  CHECK(nll == doctest::Approx(std::log(2.0 * std::numbers::pi) + std::log1p(kMinNugget)).epsilon(1e-14));

  const MixedDataset one(schema, {{{{0.0}, {}, 1}, 0.0}});
  CHECK_THROWS_AS(neg_log_likelihood(p, 0.0, 1.0, make_design(one), Vector::Zero(1)), InvalidArgument);

  // Duplicate inputs with no nugget cannot be factored.
  const MixedDataset dup(schema, {{{{0.0}, {}, 1}, 0.0}, {{{0.0}, {}, 1}, 1.0}});
  p.nugget = 0.0;
  CHECK_THROWS_WITH_AS(neg_log_likelihood(p, 0.0, 1.0, make_design(dup), Vector::Zero(2)),
                       doctest::Contains("increase nugget"), NumericalError);
}

TEST_CASE("correlation matrix is symmetric with unit diagonal") {
  Fixture f;
  const Matrix r = correlation_matrix(f.design, f.params);
  CHECK((r - r.transpose()).norm() == 0.0);
  for (Eigen::Index i = 0; i < r.rows(); ++i) CHECK(r(i, i) == 1.0);
  CHECK(r.minCoeff() > 0.0);
  CHECK(r.maxCoeff() <= 1.0);
}

TEST_CASE("NLL is invariant under orthogonal transforms of the latent maps") {
  Fixture f;
  const double base = profiled_neg_log_likelihood(f.params, f.design, f.y, false).nll;
  const double full = neg_log_likelihood(f.params, 0.3, 1.7, f.design, f.y);
  for (double angle : {0.3, 1.9, -2.6}) {
    for (bool reflect : {false, true}) {
      LmgpParameters q = f.params;
      q.source_map = f.params.source_map * rotation(angle, reflect);
      q.categorical_map = f.params.categorical_map * rotation(-angle * 0.5, !reflect);
      CHECK(std::abs(profiled_neg_log_likelihood(q, f.design, f.y, false).nll - base) <= 1e-10);
      CHECK(std::abs(neg_log_likelihood(q, 0.3, 1.7, f.design, f.y) - full) <= 1e-10);
    }
  }
}

TEST_CASE("predictions are invariant under orthogonal transforms of the latent maps") {
  Fixture f;
  const auto st = Standardizer::fit(f.data);
  const auto base = LmgpModel::from_parameters(f.data, st, f.params);
  LmgpParameters q = f.params;
  q.source_map = f.params.source_map * rotation(0.8, true);
  q.categorical_map = f.params.categorical_map * rotation(2.2, false);
  const auto rotated = LmgpModel::from_parameters(f.data, st, q);
  const auto probe = testing::random_dataset(77, 30, 2, 3, 3);
  const auto a = base.predict(probe), b = rotated.predict(probe);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i].mean - b[i].mean) <= 1e-10 * std::max(1.0, std::abs(a[i].mean)));
    CHECK(std::abs(*a[i].variance - *b[i].variance) <= 1e-10 * std::max(1.0, *a[i].variance));
  }
}

TEST_CASE("packing round trip") {
  Fixture f;
  const Vector packed = pack_parameters(f.params);
  CHECK(packed.size() == 2 + 6 + 6 + 1);
  // A_s is packed row-major right after omega.
  CHECK(packed[2] == f.params.source_map(0, 0));
  CHECK(packed[3] == f.params.source_map(0, 1));
  CHECK(packed[4] == f.params.source_map(1, 0));
  const auto back = unpack_parameters(packed, 2, 3, 3);
  CHECK(back.omega == f.params.omega);
  CHECK(back.source_map == f.params.source_map);
  CHECK(back.categorical_map == f.params.categorical_map);
  CHECK(back.nugget == doctest::Approx(f.params.nugget).epsilon(1e-9));
}

TEST_CASE("profiled NLL gradient matches the scalar tape and finite differences") {
  Fixture f;
  const Vector packed = pack_parameters(f.params);
  const std::vector<double> x(packed.data(), packed.data() + packed.size());
  const auto fit = profiled_neg_log_likelihood(f.params, f.design, f.y, true);
  const std::vector<double> analytic(fit.gradient.data(), fit.gradient.data() + fit.gradient.size());

  std::vector<double> tape_grad;
  const double tape_value = value_and_grad(
      [&](Tape& t, std::span<const Var> p) { return profiled_nll_on_tape(t, p, f.design, f.y); }, x, tape_grad);
  CHECK(tape_value == doctest::Approx(fit.nll).epsilon(1e-10));
  CHECK(testing::max_rel_error(analytic, tape_grad) <= 1e-8);

  const auto numeric = testing::fd_gradient(
      [&](const std::vector<double>& v) {
        const Vector pv = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        return profiled_neg_log_likelihood(unpack_parameters(pv, 2, 3, 3), f.design, f.y, false).nll;
      },
      x);
  CHECK(testing::max_rel_error(analytic, numeric) <= 1e-5);
}

TEST_CASE("three-point GP matches a direct solve") {
  Schema schema;
  schema.numeric_names = {"x1"};
  const MixedDataset d(schema, {{{{0.0}, {}, 1}, 1.0}, {{{0.6}, {}, 1}, 2.5}, {{{1.5}, {}, 1}, 0.5}});
  LmgpParameters p;
  p.omega = Vector::Constant(1, 0.1);
  p.source_map = Matrix::Zero(1, 2);
  p.categorical_map = Matrix::Zero(0, 2);
  p.nugget = 1e-6;
  const auto identity = Standardizer::from_parts({0.0}, {1.0}, 0.0, 1.0);
  const auto model = LmgpModel::from_parameters(d, identity, p);

  // Independent oracle: dense inverse of R + nugget I.
  const double w = std::pow(10.0, 0.1);
  const double xs[3] = {0.0, 0.6, 1.5};
  Vector y(3);
  y << 1.0, 2.5, 0.5;
  Matrix r(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = std::exp(-w * (xs[i] - xs[j]) * (xs[i] - xs[j])) + (i == j ? 1e-6 : 0.0);
  const Matrix ri = r.inverse();
  const Vector one = Vector::Ones(3);
  const double m = one.dot(ri * y) / one.dot(ri * one);
  const double s2 = (y.array() - m).matrix().dot(ri * (y.array() - m).matrix()) / 3.0;
  for (double xq : {-0.4, 0.3, 1.0, 2.2}) {
    Vector rq(3);
    for (int i = 0; i < 3; ++i) rq(i) = std::exp(-w * (xs[i] - xq) * (xs[i] - xq));
    const double mean = m + rq.dot(ri * (y.array() - m).matrix());
    const double g = 1.0 - one.dot(ri * rq);
    const double var = s2 * (1.0 - rq.dot(ri * rq) + g * g / one.dot(ri * one));
    const auto pred = model.predict_one({{xq}, {}, 1});
    CHECK(pred.mean == doctest::Approx(mean).epsilon(1e-10));
    CHECK(*pred.variance == doctest::Approx(var).epsilon(1e-8));
  }
  CHECK(model.mean() == doctest::Approx(m).epsilon(1e-10));
  CHECK(model.process_variance() == doctest::Approx(s2).epsilon(1e-10));
}

TEST_CASE("prediction far from the data reverts to the profiled mean") {
  Fixture f;
  const auto st = Standardizer::fit(f.data);
  const auto model = LmgpModel::from_parameters(f.data, st, f.params);
  MixedInput far{{1e4, 1e4}, {1}, 1};
  const auto [mean, var] = model.predict_standardized(far);
  CHECK(mean == doctest::Approx(model.mean()).epsilon(1e-12));
  CHECK(var == doctest::Approx(model.process_variance() * (1.0 + 1.0 / model.ones_rinv_ones())).epsilon(1e-12));
}

TEST_CASE("interpolation at training points with the minimal nugget") {
  Schema schema;
  schema.numeric_names = {"x1"};
  std::vector<Row> rows;
  for (int i = 0; i < 12; ++i) {
    const double x = -2.0 + 4.0 * i / 11.0;
    rows.push_back({{{x}, {}, 1}, std::sin(2.0 * x) + 0.3 * x});
  }
  const MixedDataset d(schema, rows);
  // Residual at a training point is nugget * alpha_i, so the check uses a
  // length scale that keeps R well conditioned; fitted smooth scales push
  // alpha past 1e3.
  LmgpParameters p;
  p.omega = Vector::Constant(1, 1.0);
  p.source_map = Matrix::Zero(1, 2);
  p.categorical_map = Matrix::Zero(0, 2);
  p.nugget = kMinNugget;
  const auto model = LmgpModel::from_parameters(d, Standardizer::fit(d), p);
  const double s2 = model.process_variance() * model.standardizer().y_scale() * model.standardizer().y_scale();
  for (const auto& r : d.rows()) {
    const auto pred = model.predict_one(r.input);
    CHECK(std::abs(pred.mean - r.y) <= 1e-6);
    CHECK(*pred.variance <= 1e-6 * s2);
  }
}

TEST_CASE("predictive variance stays within its bounds") {
  Fixture f;
  const auto model = LmgpModel::from_parameters(f.data, Standardizer::fit(f.data), f.params);
  const auto probe = Standardizer::fit(f.data).apply(testing::random_dataset(99, 200, 2, 3, 3));
  const double cap = model.process_variance() * (1.0 + 1.0 / model.ones_rinv_ones()) + 1e-8;
  for (const auto& r : probe.rows()) {
    const auto [mean, var] = model.predict_standardized(r.input);
    CHECK(std::isfinite(mean));
    CHECK(var >= 0.0);
    CHECK(var <= cap);
  }
}

TEST_CASE("single source without categoricals is a standard GP") {
  Schema schema;
  schema.numeric_names = {"x1"};
  const MixedDataset d(schema, {{{{0.0}, {}, 1}, 1.0}, {{{1.0}, {}, 1}, 0.0}, {{{2.0}, {}, 1}, 1.0}});
  LmgpParameters p;
  p.omega = Vector::Constant(1, 0.0);
  p.source_map = Matrix::Constant(1, 2, 3.7);  // a single latent point carries no information
  p.categorical_map = Matrix::Zero(0, 2);
  p.nugget = 1e-4;
  LmgpParameters zero = p;
  zero.source_map.setZero();
  const auto st = Standardizer::fit(d);
  const auto a = LmgpModel::from_parameters(d, st, p).predict_one({{0.5}, {}, 1});
  const auto b = LmgpModel::from_parameters(d, st, zero).predict_one({{0.5}, {}, 1});
  CHECK(a.mean == b.mean);
  CHECK(*a.variance == *b.variance);
}

TEST_CASE("fit recovers the roughness of a sampled GP") {
  // Sample a noiseless GP path with omega = 0.5 on standardized inputs.
  const int n = 60;
  const double omega = 0.5;
  Vector x(n);
  for (int i = 0; i < n; ++i) x(i) = -1.0 + 2.0 * (i + 0.5) / n;
  x = (x.array() - x.mean()) / std::sqrt((x.array() - x.mean()).square().mean());
  Matrix k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) k(i, j) = std::exp(-std::pow(10.0, omega) * (x(i) - x(j)) * (x(i) - x(j)));
  k.diagonal().array() += 1e-8;
  const Matrix l = k.llt().matrixL();
  RngStream rng(4, "gp-sample");
  Vector e(n);
  for (int i = 0; i < n; ++i) e(i) = rng.normal();
  const Vector y = l * e;

  Schema schema;
  schema.numeric_names = {"x1"};
  std::vector<Row> rows;
  for (int i = 0; i < n; ++i) rows.push_back({{{x(i)}, {}, 1}, y(i)});
  const auto model = LmgpModel::fit(MixedDataset(schema, rows), {});
  CHECK(std::abs(model.parameters().omega(0) - omega) < 0.5);
}

TEST_CASE("fusion: identical sources sit close in the latent space") {
  auto hf = [](double x) { return std::sin(3.0 * x) + x; };
  auto unrelated = [](double x) { return std::cos(7.0 * x) * 2.0 - x * x; };
  const auto same = testing::two_source_1d(hf, hf, 10, 20);
  const auto different = testing::two_source_1d(hf, unrelated, 10, 20);
  LmgpConfig cfg;
  const auto a = LmgpModel::fit(same, cfg);
  const auto b = LmgpModel::fit(different, cfg);
  const double da = (a.source_points().row(0) - a.source_points().row(1)).norm();
  const double db = (b.source_points().row(0) - b.source_points().row(1)).norm();
  CHECK(da < 0.1);
  CHECK(da < db);
}

TEST_CASE("fit is deterministic given the seed") {
  const auto d = testing::two_source_1d([](double x) { return x * x; }, [](double x) { return x * x + 0.3 * x; }, 6, 10);
  LmgpConfig cfg;
  cfg.n_starts = 3;
  cfg.max_iters = 100;
  const auto a = LmgpModel::fit(d, cfg);
  const auto b = LmgpModel::fit(d, cfg);
  CHECK(a.parameters().omega == b.parameters().omega);
  CHECK(a.parameters().source_map == b.parameters().source_map);
  CHECK(a.parameters().nugget == b.parameters().nugget);
  CHECK(a.training_nll() == b.training_nll());
  CHECK(a.parameters().nugget >= kMinNugget);
}
