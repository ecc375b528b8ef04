#include "mfusion/lmgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mfusion/adam.hpp"
#include "mfusion/error.hpp"
#include "mfusion/rng.hpp"

namespace mfusion {

namespace {

constexpr double kLn10 = std::numbers::ln10;
constexpr double kNuggetLogSpan = 8.0;  // log10 nugget in [-8, 0]

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

double nugget_from_raw(double u) { return std::pow(10.0, -kNuggetLogSpan + kNuggetLogSpan * logistic(u)); }

double raw_from_nugget(double nugget) {
  const double frac = std::clamp((std::log10(nugget) + kNuggetLogSpan) / kNuggetLogSpan, 1e-9, 1.0 - 1e-9);
  return std::log(frac / (1.0 - frac));
}

// Latent coordinates of every design row under a mapping matrix.
Matrix source_latents(const LmgpDesign& design, const Matrix& source_map) {
  Matrix z(design.size(), kLatentDim);
  for (Eigen::Index i = 0; i < design.size(); ++i) z.row(i) = source_map.row(design.source[static_cast<std::size_t>(i)]);
  return z;
}

Matrix categorical_latents(const LmgpDesign& design, const Matrix& categorical_map) {
  if (design.zeta.cols() == 0) return Matrix::Zero(design.size(), kLatentDim);
  return design.zeta * categorical_map;
}

void check_shapes(const LmgpParameters& params, const LmgpDesign& design) {
  if (params.omega.size() != design.x.cols()) throw InvalidArgument("omega length does not match dx");
  if (params.source_map.cols() != kLatentDim || params.categorical_map.cols() != kLatentDim) {
    throw InvalidArgument("latent maps must have 2 columns");
  }
  if (params.categorical_map.rows() != design.zeta.cols()) {
    throw InvalidArgument("categorical map rows do not match the one-hot width");
  }
  for (int s : design.source) {
    if (s < 0 || s >= params.source_map.rows()) throw InvalidArgument("source index outside the source map");
  }
}

struct Factorization {
  Matrix chol;
  Vector rinv_ones;
  Vector alpha;
  double ones_rinv_ones = 0.0;
  double mean = 0.0;
  double process_variance = 0.0;
  double nll = 0.0;
};

Factorization factor_profiled(const Matrix& r, double nugget, const Vector& y) {
  const Eigen::Index n = r.rows();
  Matrix rn = r;
  rn.diagonal().array() += nugget;
  Factorization f;
  try {
    f.chol = cholesky(rn);
  } catch (const NotPositiveDefinite& e) {
    throw NumericalError(std::string("LMGP correlation matrix factorization failed; increase nugget (") + e.what() + ")");
  }
  const Vector ones = Vector::Ones(n);
  f.rinv_ones = spd_solve(f.chol, ones);
  f.ones_rinv_ones = ones.dot(f.rinv_ones);
  f.mean = f.rinv_ones.dot(y) / f.ones_rinv_ones;
  const Vector resid = y.array() - f.mean;
  f.alpha = spd_solve(f.chol, resid);
  f.process_variance = std::max(resid.dot(f.alpha) / static_cast<double>(n), std::numeric_limits<double>::min());
  const double nd = static_cast<double>(n);
  f.nll = 0.5 * nd * std::log(2.0 * std::numbers::pi * f.process_variance) + 0.5 * logdet(f.chol) + 0.5 * nd;
  return f;
}

}  // namespace

Vector latent_map(std::span<const double> zeta, const Matrix& a) {
  if (static_cast<Eigen::Index>(zeta.size()) != a.rows()) throw InvalidArgument("latent_map: one-hot length does not match map rows");
  Vector z = Vector::Zero(a.cols());
  for (std::size_t i = 0; i < zeta.size(); ++i) {
    if (zeta[i] != 0.0) z += zeta[i] * a.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return z;
}

LmgpDesign make_design(const MixedDataset& standardized) {
  const auto& schema = standardized.schema();
  const auto n = static_cast<Eigen::Index>(standardized.size());
  LmgpDesign d;
  d.x.resize(n, static_cast<Eigen::Index>(schema.dx()));
  d.zeta = Matrix::Zero(n, static_cast<Eigen::Index>(schema.one_hot_width()));
  d.source.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& in = standardized.row(static_cast<std::size_t>(i)).input;
    for (std::size_t j = 0; j < in.x.size(); ++j) d.x(i, static_cast<Eigen::Index>(j)) = in.x[j];
    const auto zeta = one_hot_encode(in.tc, schema);
    for (std::size_t j = 0; j < zeta.size(); ++j) d.zeta(i, static_cast<Eigen::Index>(j)) = zeta[j];
    d.source[static_cast<std::size_t>(i)] = in.ts - 1;
  }
  return d;
}

double correlation(const MixedInput& p1, const MixedInput& p2, const LmgpParameters& params, const Schema& schema) {
  if (p1.x.size() != static_cast<std::size_t>(params.omega.size()) || p2.x.size() != p1.x.size()) {
    throw InvalidArgument("correlation: numeric dimension mismatch");
  }
  if (p1.ts < 1 || p2.ts < 1 || p1.ts > params.source_map.rows() || p2.ts > params.source_map.rows()) {
    throw InvalidArgument("correlation: source outside the source map");
  }
  double dist = 0.0;
  for (std::size_t k = 0; k < p1.x.size(); ++k) {
    const double diff = p1.x[k] - p2.x[k];
    dist += std::pow(10.0, params.omega[static_cast<Eigen::Index>(k)]) * diff * diff;
  }
  dist += (params.source_map.row(p1.ts - 1) - params.source_map.row(p2.ts - 1)).squaredNorm();
  if (schema.dt() > 0) {
    const auto z1 = latent_map(one_hot_encode(p1.tc, schema), params.categorical_map);
    const auto z2 = latent_map(one_hot_encode(p2.tc, schema), params.categorical_map);
    dist += (z1 - z2).squaredNorm();
  }
  return std::exp(-dist);
}

Matrix correlation_matrix(const LmgpDesign& design, const LmgpParameters& params) {
  check_shapes(params, design);
  const Eigen::Index n = design.size();
  const Eigen::Index dx = design.x.cols();
  const Vector weights = params.omega.unaryExpr([](double w) { return std::pow(10.0, w); });
  const Matrix zs = source_latents(design, params.source_map);
  const Matrix zc = categorical_latents(design, params.categorical_map);
  Matrix r(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    r(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double dist = 0.0;
      for (Eigen::Index k = 0; k < dx; ++k) {
        const double diff = design.x(i, k) - design.x(j, k);
        dist += weights[k] * diff * diff;
      }
      dist += (zs.row(i) - zs.row(j)).squaredNorm() + (zc.row(i) - zc.row(j)).squaredNorm();
      const double value = std::exp(-dist);
      r(i, j) = value;
      r(j, i) = value;
    }
  }
  return r;
}

double neg_log_likelihood(const LmgpParameters& params, double mean, double process_variance,
                          const LmgpDesign& design, const Vector& y) {
  const Eigen::Index n = design.size();
  if (n < 2) throw InvalidArgument("neg_log_likelihood requires at least 2 rows");
  if (!(process_variance > 0.0)) throw InvalidArgument("process variance must be positive");
  Matrix r = correlation_matrix(design, params);
  r.diagonal().array() += params.nugget;
  Matrix chol;
  try {
    chol = cholesky(r);
  } catch (const NotPositiveDefinite& e) {
    throw NumericalError(std::string("LMGP correlation matrix factorization failed; increase nugget (") + e.what() + ")");
  }
  const Vector resid = y.array() - mean;
  const double quad = resid.dot(spd_solve(chol, resid)) / process_variance;
  const double nd = static_cast<double>(n);
  return 0.5 * (nd * std::log(2.0 * std::numbers::pi * process_variance) + logdet(chol) + quad);
}

Vector pack_parameters(const LmgpParameters& p) {
  const Eigen::Index dx = p.omega.size();
  const Eigen::Index ns = p.source_map.size();
  const Eigen::Index nc = p.categorical_map.size();
  Vector packed(dx + ns + nc + 1);
  packed.head(dx) = p.omega;
  for (Eigen::Index i = 0; i < p.source_map.rows(); ++i) {
    for (Eigen::Index d = 0; d < kLatentDim; ++d) packed[dx + i * kLatentDim + d] = p.source_map(i, d);
  }
  for (Eigen::Index i = 0; i < p.categorical_map.rows(); ++i) {
    for (Eigen::Index d = 0; d < kLatentDim; ++d) packed[dx + ns + i * kLatentDim + d] = p.categorical_map(i, d);
  }
  packed[dx + ns + nc] = raw_from_nugget(p.nugget);
  return packed;
}

LmgpParameters unpack_parameters(const Vector& packed, Eigen::Index dx, Eigen::Index ds, Eigen::Index width) {
  if (packed.size() != dx + (ds + width) * kLatentDim + 1) throw InvalidArgument("packed LMGP parameter length mismatch");
  LmgpParameters p;
  p.omega = packed.head(dx);
  p.source_map.resize(ds, kLatentDim);
  p.categorical_map.resize(width, kLatentDim);
  for (Eigen::Index i = 0; i < ds; ++i) {
    for (Eigen::Index d = 0; d < kLatentDim; ++d) p.source_map(i, d) = packed[dx + i * kLatentDim + d];
  }
  const Eigen::Index off = dx + ds * kLatentDim;
  for (Eigen::Index i = 0; i < width; ++i) {
    for (Eigen::Index d = 0; d < kLatentDim; ++d) p.categorical_map(i, d) = packed[off + i * kLatentDim + d];
  }
  p.nugget = nugget_from_raw(packed[packed.size() - 1]);
  return p;
}

ProfiledFit profiled_neg_log_likelihood(const LmgpParameters& params, const LmgpDesign& design, const Vector& y,
                                        bool with_gradient) {
  const Eigen::Index n = design.size();
  if (n < 2) throw InvalidArgument("LMGP needs at least 2 training rows");
  const Matrix r = correlation_matrix(design, params);
  const Factorization f = factor_profiled(r, params.nugget, y);
  ProfiledFit out{f.nll, f.mean, f.process_variance, {}};
  if (!with_gradient) return out;

  // dNLL/dtheta = 1/2 tr(W dR/dtheta), W = R^-1 - a a^T / s2.
  Matrix w = spd_inverse(f.chol);
  w.noalias() -= (f.alpha * f.alpha.transpose()) / f.process_variance;
  const Matrix g = w.cwiseProduct(r);
  const Vector g1 = g.rowwise().sum();

  const Eigen::Index dx = design.x.cols();
  const Eigen::Index ds = params.source_map.rows();
  const Eigen::Index width = params.categorical_map.rows();
  out.gradient = Vector::Zero(dx + (ds + width) * kLatentDim + 1);

  for (Eigen::Index k = 0; k < dx; ++k) {
    const Vector xk = design.x.col(k);
    const double quad = xk.cwiseProduct(xk).dot(g1) - xk.dot(g * xk);
    out.gradient[k] = -kLn10 * std::pow(10.0, params.omega[k]) * quad;
  }

  auto map_gradient = [&](const Matrix& z, const Matrix& onehot, Eigen::Index offset, Eigen::Index rows) {
    const Matrix h = z.array().colwise() * g1.array() - (g * z).array();
    const Matrix grad = -2.0 * onehot.transpose() * h;  // rows x 2
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index d = 0; d < kLatentDim; ++d) out.gradient[offset + i * kLatentDim + d] = grad(i, d);
    }
  };
  Matrix source_onehot = Matrix::Zero(n, ds);
  for (Eigen::Index i = 0; i < n; ++i) source_onehot(i, design.source[static_cast<std::size_t>(i)]) = 1.0;
  map_gradient(source_latents(design, params.source_map), source_onehot, dx, ds);
  if (width > 0) {
    map_gradient(categorical_latents(design, params.categorical_map), design.zeta, dx + ds * kLatentDim, width);
  }

  const double u = raw_from_nugget(params.nugget);
  const double s = logistic(u);
  const double dnugget_du = params.nugget * kLn10 * kNuggetLogSpan * s * (1.0 - s);
  out.gradient[out.gradient.size() - 1] = 0.5 * w.trace() * dnugget_du;
  return out;
}

LmgpParameters fit_parameters(const LmgpDesign& design, const Vector& y, const LmgpConfig& config) {
  if (design.size() < 2) throw InvalidArgument("LMGP needs at least 2 training rows");
  if (config.n_starts < 1 || config.max_iters < 0) throw InvalidArgument("invalid LMGP optimizer configuration");
  const Eigen::Index dx = design.x.cols();
  Eigen::Index ds = 1;
  for (int s : design.source) ds = std::max<Eigen::Index>(ds, s + 1);
  const Eigen::Index width = design.zeta.cols();

  double best_nll = std::numeric_limits<double>::infinity();
  Vector best;
  for (int start = 0; start < config.n_starts; ++start) {
    RngStream rng(config.seed, "lmgp-start", static_cast<std::uint64_t>(start));
    LmgpParameters init;
    init.omega.resize(dx);
    for (Eigen::Index k = 0; k < dx; ++k) init.omega[k] = -2.0 + 3.0 * rng.uniform();
    init.source_map.resize(ds, kLatentDim);
    for (Eigen::Index i = 0; i < init.source_map.size(); ++i) init.source_map.data()[i] = rng.normal();
    init.categorical_map.resize(width, kLatentDim);
    for (Eigen::Index i = 0; i < init.categorical_map.size(); ++i) init.categorical_map.data()[i] = rng.normal();
    init.nugget = std::pow(10.0, -6.0 + 4.0 * rng.uniform());

    Vector theta = pack_parameters(init);
    AdamState state(static_cast<std::size_t>(theta.size()));
    const AdamConfig adam{config.learning_rate, 0.9, 0.999, 1e-8};
    for (int iter = 0; iter <= config.max_iters; ++iter) {
      ProfiledFit fit;
      try {
        fit = profiled_neg_log_likelihood(unpack_parameters(theta, dx, ds, width), design, y, iter < config.max_iters);
      } catch (const NumericalError&) {
        break;  // keep the best iterate of this start
      }
      if (!std::isfinite(fit.nll)) break;
      if (fit.nll < best_nll) {
        best_nll = fit.nll;
        best = theta;
      }
      if (iter == config.max_iters || !fit.gradient.allFinite()) break;
      adam_step(std::span<double>(theta.data(), static_cast<std::size_t>(theta.size())),
                std::span<const double>(fit.gradient.data(), static_cast<std::size_t>(fit.gradient.size())), state, adam);
    }
  }
  if (best.size() == 0) throw NumericalError("LMGP fit failed: every start hit a Cholesky failure");
  return unpack_parameters(best, dx, ds, width);
}

LmgpModel LmgpModel::fit(const MixedDataset& train, const LmgpConfig& config) {
  if (train.size() < 2) throw InvalidArgument("LMGP needs at least 2 training rows");
  const Standardizer st = Standardizer::fit(train);
  const MixedDataset scaled = st.apply(train);
  const LmgpDesign design = make_design(scaled);
  const auto yv = scaled.outputs();
  const Vector y = Eigen::Map<const Vector>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  return from_parameters(train, st, fit_parameters(design, y, config));
}

LmgpModel LmgpModel::from_parameters(const MixedDataset& train, const Standardizer& standardizer, LmgpParameters params) {
  LmgpModel model;
  model.training_ = train;
  model.standardizer_ = standardizer;
  model.params_ = std::move(params);
  if (model.params_.nugget < kMinNugget || model.params_.nugget > kMaxNugget) {
    throw InvalidArgument("LMGP nugget outside [1e-8, 1]");
  }
  const MixedDataset scaled = standardizer.apply(train);
  model.design_ = make_design(scaled);
  const auto yv = scaled.outputs();
  model.y_ = Eigen::Map<const Vector>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  model.factorize();
  return model;
}

void LmgpModel::factorize() {
  check_shapes(params_, design_);
  const Factorization f = factor_profiled(correlation_matrix(design_, params_), params_.nugget, y_);
  chol_ = f.chol;
  alpha_ = f.alpha;
  rinv_ones_ = f.rinv_ones;
  ones_rinv_ones_ = f.ones_rinv_ones;
  mean_ = f.mean;
  process_variance_ = f.process_variance;
  nll_ = f.nll;
}

std::pair<double, double> LmgpModel::predict_standardized(const MixedInput& input) const {
  const auto& schema = training_.schema();
  if (input.ts < 1 || input.ts > params_.source_map.rows()) {
    throw SchemaError("source " + std::to_string(input.ts) + " unseen by the model");
  }
  if (input.x.size() != schema.dx()) throw SchemaError("numeric input dimension mismatch");
  const Eigen::Index n = design_.size();
  const Eigen::Index dx = design_.x.cols();
  const Vector weights = params_.omega.unaryExpr([](double w) { return std::pow(10.0, w); });
  const Eigen::RowVectorXd zs_star = params_.source_map.row(input.ts - 1);
  Eigen::RowVectorXd zc_star = Eigen::RowVectorXd::Zero(kLatentDim);
  if (schema.dt() > 0) zc_star = latent_map(one_hot_encode(input.tc, schema), params_.categorical_map).transpose();
  const Matrix zc = categorical_latents(design_, params_.categorical_map);

  Vector r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double dist = 0.0;
    for (Eigen::Index k = 0; k < dx; ++k) {
      const double diff = design_.x(i, k) - input.x[static_cast<std::size_t>(k)];
      dist += weights[k] * diff * diff;
    }
    dist += (params_.source_map.row(design_.source[static_cast<std::size_t>(i)]) - zs_star).squaredNorm();
    dist += (zc.row(i) - zc_star).squaredNorm();
    r[i] = std::exp(-dist);
  }
  const double mean = mean_ + r.dot(alpha_);
  const Vector v = chol_.triangularView<Eigen::Lower>().solve(r);
  const double g = 1.0 - rinv_ones_.dot(r);
  double var = process_variance_ * (1.0 - v.squaredNorm() + g * g / ones_rinv_ones_);
  if (var < 0.0) var = 0.0;
  return {mean, var};
}

Prediction LmgpModel::predict_one(const MixedInput& input) const {
  MixedInput scaled = input;
  scaled.x = standardizer_.apply_x(input.x);
  const auto [mean, var] = predict_standardized(scaled);
  const double scale = standardizer_.y_scale();
  return {standardizer_.invert_y(mean), var * scale * scale};
}

std::vector<Prediction> LmgpModel::predict(const MixedDataset& inputs) const {
  const MixedDataset conformed = inputs.conform_to(training_.schema());
  std::vector<Prediction> out;
  out.reserve(conformed.size());
  for (const auto& row : conformed.rows()) out.push_back(predict_one(row.input));
  return out;
}

}  // namespace mfusion
