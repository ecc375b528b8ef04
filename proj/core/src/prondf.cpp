#include "mfusion/prondf.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <limits>
#include <numeric>
#include <tuple>

#include "mfusion/adam.hpp"
#include "mfusion/error.hpp"

namespace mfusion {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Eigen::Index packed_lower_size(Eigen::Index c) { return c * (c + 1) / 2; }

// Packed column-major lower triangle -> L with exp on the diagonal.
Matrix unpack_chol(const double* raw, Eigen::Index c) {
  Matrix l = Matrix::Zero(c, c);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < c; ++j) {
    l(j, j) = std::exp(raw[k++]);
    for (Eigen::Index i = j + 1; i < c; ++i) l(i, j) = raw[k++];
  }
  return l;
}

double raw_diagonal_sum(const double* raw, Eigen::Index c) {
  double sum = 0.0;
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < c; ++j) {
    sum += raw[k];
    k += c - j;
  }
  return sum;
}

// Block 1 on every source at once: the one-hot input selects a column of W1.
void block1_forward(const double* theta1, const double* theta2, Eigen::Index ds, Matrix& hidden, Matrix& z) {
  const Eigen::Map<const Matrix> w1(theta1, kEmbeddingHidden, ds);
  const Eigen::Map<const Vector> b1(theta1 + kEmbeddingHidden * ds, kEmbeddingHidden);
  const Eigen::Map<const Matrix> w2(theta2, kManifoldDim, kEmbeddingHidden);
  const Eigen::Map<const Vector> b2(theta2 + kManifoldDim * kEmbeddingHidden, kManifoldDim);
  hidden = (w1.colwise() + b1).array().tanh();
  z = w2 * hidden;
  z.colwise() += b2;
}

void block1_backward(const double* theta2, Eigen::Index ds, const Matrix& hidden, const Matrix& dz, double* dtheta1,
                     double* dtheta2) {
  const Eigen::Map<const Matrix> w2(theta2, kManifoldDim, kEmbeddingHidden);
  Eigen::Map<Matrix>(dtheta2, kManifoldDim, kEmbeddingHidden) += dz * hidden.transpose();
  Eigen::Map<Vector>(dtheta2 + kManifoldDim * kEmbeddingHidden, kManifoldDim) += dz.rowwise().sum();
  const Matrix dpre = ((w2.transpose() * dz).array() * (1.0 - hidden.array().square())).matrix();
  Eigen::Map<Matrix>(dtheta1, kEmbeddingHidden, ds) += dpre;
  Eigen::Map<Vector>(dtheta1 + kEmbeddingHidden * ds, kEmbeddingHidden) += dpre.rowwise().sum();
}

ProNdfBatch gather(const ProNdfBatch& full, std::span<const std::size_t> rows) {
  ProNdfBatch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.x.resize(full.x.rows(), n);
  b.zeta.resize(full.zeta.rows(), n);
  b.y.resize(n);
  b.source.resize(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    b.x.col(i) = full.x.col(r);
    b.zeta.col(i) = full.zeta.col(r);
    b.y[i] = full.y[r];
    b.source[static_cast<std::size_t>(i)] = full.source[static_cast<std::size_t>(r)];
  }
  return b;
}

void check_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw NumericalError(std::string("Pro-NDF loss term '") + term + "' is not finite");
}

void validate(const ProNdfConfig& config) {
  const auto& w = config.weights;
  if (w.alpha1 < 0.0 || w.alpha2 < 0.0 || w.alpha3 < 0.0) throw InvalidArgument("loss weights must be >= 0");
  if (!(w.gamma > 0.0 && w.gamma < 1.0)) throw InvalidArgument("gamma must lie in (0, 1)");
  if (!(config.sigma_p > 0.0)) throw InvalidArgument("sigma_p must be positive");
  if (!config.variant.probabilistic_output && config.variant.interval_score_term) {
    throw InvalidArgument("the interval-score term needs a probabilistic output head");
  }
  for (int h : config.block3_hidden) {
    if (h < 1) throw InvalidArgument("Block-3 hidden widths must be positive");
  }
}

std::vector<Matrix> draw_noise(const ProNdfLayout& layout, Eigen::Index m, RngStream& rng) {
  std::vector<Matrix> eps{Matrix(layout.c1, m), Matrix(layout.c2, m)};
  for (auto& e : eps) {
    for (Eigen::Index j = 0; j < e.cols(); ++j) {
      for (Eigen::Index i = 0; i < e.rows(); ++i) e(i, j) = rng.normal();
    }
  }
  return eps;
}

}  // namespace

double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

double interval_score_bounds(double y, double lower, double upper, double gamma) {
  double score = upper - lower;
  if (y < lower) score += (2.0 / gamma) * (lower - y);
  if (y > upper) score += (2.0 / gamma) * (y - upper);
  return score;
}

double interval_score(double y, double mu, double sigma, double gamma) {
  if (!(sigma > 0.0)) throw InvalidArgument("interval_score: sigma must be positive");
  return interval_score_bounds(y, mu - kPiHalfWidth * sigma, mu + kPiHalfWidth * sigma, gamma);
}

EnsembleMoments ensemble_moments(std::span<const double> mu, std::span<const double> sigma) {
  if (mu.empty() || mu.size() != sigma.size()) throw InvalidArgument("ensemble_moments: bad realization arrays");
  const double m = static_cast<double>(mu.size());
  double mean = 0.0;
  for (double v : mu) mean += v;
  mean /= m;
  // mean(sigma^2 + mu^2) - mean^2, arranged so that one realization gives sigma^2 exactly
  double aleatoric = 0.0, spread = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    aleatoric += sigma[j] * sigma[j];
    spread += (mu[j] - mean) * (mu[j] - mean);
  }
  return {mean, aleatoric / m + spread / m};
}

ProNdfLayout ProNdfLayout::make(const Schema& schema, const ProNdfConfig& config) {
  ProNdfLayout l;
  l.dx = static_cast<Eigen::Index>(schema.dx());
  l.ds = schema.num_sources;
  l.categorical_width = static_cast<Eigen::Index>(schema.one_hot_width());
  l.c1 = kEmbeddingHidden * l.ds + kEmbeddingHidden;
  l.c2 = kManifoldDim * kEmbeddingHidden + kManifoldDim;
  Eigen::Index off = 0;
  l.mu1 = off;
  off += l.c1;
  l.raw1 = off;
  off += packed_lower_size(l.c1);
  l.mu2 = off;
  off += l.c2;
  l.raw2 = off;
  off += packed_lower_size(l.c2);
  l.block2 = off;
  if (l.has_block2()) {
    const std::array<int, 1> hidden{kEmbeddingHidden};
    l.block2_shape = MlpShape::make(l.categorical_width, hidden, kManifoldDim, Activation::sigmoid);
    off += l.block2_shape.parameter_count();
  }
  l.block3 = off;
  const Eigen::Index din = l.dx + kManifoldDim + (l.has_block2() ? kManifoldDim : 0);
  const Eigen::Index dout = config.variant.probabilistic_output ? 2 : 1;
  l.block3_shape = MlpShape::make(din, config.block3_hidden, dout, Activation::tanh);
  off += l.block3_shape.parameter_count();
  l.total = off;
  return l;
}

ProNdfBatch make_batch(const MixedDataset& standardized, std::span<const std::size_t> rows) {
  const auto& schema = standardized.schema();
  ProNdfBatch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.x.resize(static_cast<Eigen::Index>(schema.dx()), n);
  b.zeta.resize(static_cast<Eigen::Index>(schema.one_hot_width()), n);
  b.y.resize(n);
  b.source.resize(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = standardized.row(rows[static_cast<std::size_t>(i)]);
    for (std::size_t k = 0; k < row.input.x.size(); ++k) b.x(static_cast<Eigen::Index>(k), i) = row.input.x[k];
    const auto z = one_hot_encode(row.input.tc, schema);
    for (std::size_t k = 0; k < z.size(); ++k) b.zeta(static_cast<Eigen::Index>(k), i) = z[k];
    b.y[i] = row.y;
    b.source[static_cast<std::size_t>(i)] = row.input.ts - 1;
  }
  return b;
}

LossTerms prondf_loss(const ProNdfLayout& layout, const ProNdfConfig& config, const double* params,
                      const ProNdfBatch& batch, const std::vector<Matrix>& eps, double* grad) {
  const bool stochastic = config.variant.probabilistic_block1;
  const bool gaussian_out = config.variant.probabilistic_output;
  const auto& w = config.weights;
  const Eigen::Index b = batch.size();
  if (b == 0) throw InvalidArgument("Pro-NDF loss needs a non-empty batch");

  const std::array<Eigen::Index, 2> c{layout.c1, layout.c2};
  const std::array<Eigen::Index, 2> mu_off{layout.mu1, layout.mu2};
  const std::array<Eigen::Index, 2> raw_off{layout.raw1, layout.raw2};
  Eigen::Index m = 1;
  if (stochastic) {
    if (eps.size() != 2 || eps[0].rows() != c[0] || eps[1].rows() != c[1] || eps[0].cols() != eps[1].cols() ||
        eps[0].cols() < 1) {
      throw InvalidArgument("Pro-NDF loss: Block-1 noise has the wrong shape");
    }
    m = eps[0].cols();
  }

  std::array<Matrix, 2> theta, chol;
  for (int l = 0; l < 2; ++l) {
    const Eigen::Map<const Vector> mu(params + mu_off[l], c[l]);
    if (stochastic) {
      chol[l] = unpack_chol(params + raw_off[l], c[l]);
      theta[l] = chol[l] * eps[l];
      theta[l].colwise() += mu;
    } else {
      theta[l] = mu;
    }
  }

  std::vector<Matrix> hidden(static_cast<std::size_t>(m)), zs(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    block1_forward(theta[0].col(j).data(), theta[1].col(j).data(), layout.ds, hidden[static_cast<std::size_t>(j)],
                   zs[static_cast<std::size_t>(j)]);
  }

  MlpCache cache2;
  if (layout.has_block2()) mlp_forward(layout.block2_shape, params + layout.block2, batch.zeta, cache2);

  const Eigen::Index dx = layout.dx;
  Matrix in3(layout.block3_inputs(), b * m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Matrix& z = zs[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < b; ++i) {
      const Eigen::Index col = j * b + i;
      const int s = batch.source[static_cast<std::size_t>(i)];
      in3.block(0, col, dx, 1) = batch.x.col(i);
      in3(dx, col) = z(0, s);
      in3(dx + 1, col) = z(1, s);
      if (layout.has_block2()) in3.block(dx + 2, col, 2, 1) = cache2.output().col(i);
    }
  }
  MlpCache cache3;
  mlp_forward(layout.block3_shape, params + layout.block3, in3, cache3);
  const Matrix& out = cache3.output();

  LossTerms terms;
  Matrix dout = Matrix::Zero(out.rows(), out.cols());
  const double inv = 1.0 / static_cast<double>(b * m);
  const double penalty = 2.0 / w.gamma;
  const double a2 = config.variant.interval_score_term ? w.alpha2 : 0.0;
  for (Eigen::Index col = 0; col < out.cols(); ++col) {
    const double y = batch.y[col % b];
    const double mu = out(0, col);
    const double r = y - mu;
    if (!gaussian_out) {
      terms.data += r * r;
      dout(0, col) = -2.0 * r * inv;
      continue;
    }
    const double raw = out(1, col);
    const double sigma = softplus(raw) + kSigmaFloor;
    const double s2 = sigma * sigma;
    terms.data += kHalfLog2Pi + std::log(sigma) + r * r / (2.0 * s2);
    double dmu = -r / s2;
    double dsigma = 1.0 / sigma - r * r / (s2 * sigma);
    if (config.variant.interval_score_term) {
      const double lo = mu - kPiHalfWidth * sigma, hi = mu + kPiHalfWidth * sigma;
      terms.is += interval_score_bounds(y, lo, hi, w.gamma);
      double is_dmu = 0.0, is_dsigma = 2.0 * kPiHalfWidth;
      if (y < lo) {
        is_dmu += penalty;
        is_dsigma -= penalty * kPiHalfWidth;
      }
      if (y > hi) {
        is_dmu -= penalty;
        is_dsigma -= penalty * kPiHalfWidth;
      }
      dmu += a2 * is_dmu;
      dsigma += a2 * is_dsigma;
    }
    dout(0, col) = dmu * inv;
    dout(1, col) = dsigma * logistic(raw) * inv;
  }
  terms.data *= inv;
  terms.is *= inv;

  const double s2p = config.sigma_p * config.sigma_p;
  if (stochastic) {
    for (int l = 0; l < 2; ++l) {
      const double const_part =
          -raw_diagonal_sum(params + raw_off[l], c[l]) + static_cast<double>(c[l]) * std::log(config.sigma_p);
      double sum = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        sum += -0.5 * eps[l].col(j).squaredNorm() + 0.5 * theta[l].col(j).squaredNorm() / s2p;
      }
      terms.kl += sum / static_cast<double>(m) + const_part;
    }
  }

  auto l2_range = [&](Eigen::Index begin, Eigen::Index count) {
    double s = 0.0;
    for (Eigen::Index k = begin; k < begin + count; ++k) s += params[k] * params[k];
    return s;
  };
  terms.l2 = l2_range(layout.block2, layout.total - layout.block2);
  if (!stochastic) terms.l2 += l2_range(layout.mu1, layout.c1) + l2_range(layout.mu2, layout.c2);

  const double a1 = stochastic ? w.alpha1 : 0.0;
  terms.total = terms.data + a1 * terms.kl + a2 * terms.is + w.alpha3 * terms.l2;
  check_finite(terms.data, gaussian_out ? "nll" : "mse");
  check_finite(terms.kl, "kl");
  check_finite(terms.is, "is");
  check_finite(terms.l2, "l2");
  if (grad == nullptr) return terms;

  const Matrix din3 = mlp_backward(layout.block3_shape, params + layout.block3, cache3, dout, grad + layout.block3);
  std::vector<Matrix> dzs(static_cast<std::size_t>(m), Matrix::Zero(kManifoldDim, layout.ds));
  Matrix dzc;
  if (layout.has_block2()) dzc = Matrix::Zero(kManifoldDim, b);
  for (Eigen::Index j = 0; j < m; ++j) {
    Matrix& dz = dzs[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < b; ++i) {
      const Eigen::Index col = j * b + i;
      dz.col(batch.source[static_cast<std::size_t>(i)]) += din3.block(dx, col, 2, 1);
      if (layout.has_block2()) dzc.col(i) += din3.block(dx + 2, col, 2, 1);
    }
  }
  if (layout.has_block2()) mlp_backward(layout.block2_shape, params + layout.block2, cache2, dzc, grad + layout.block2);

  std::array<Matrix, 2> dtheta{Matrix::Zero(c[0], m), Matrix::Zero(c[1], m)};
  for (Eigen::Index j = 0; j < m; ++j) {
    block1_backward(theta[1].col(j).data(), layout.ds, hidden[static_cast<std::size_t>(j)],
                    dzs[static_cast<std::size_t>(j)], dtheta[0].col(j).data(), dtheta[1].col(j).data());
  }

  for (Eigen::Index k = layout.block2; k < layout.total; ++k) grad[k] += 2.0 * w.alpha3 * params[k];
  for (int l = 0; l < 2; ++l) {
    Eigen::Map<Vector> gmu(grad + mu_off[l], c[l]);
    if (!stochastic) {
      gmu += dtheta[l].col(0) + 2.0 * w.alpha3 * theta[l].col(0);
      continue;
    }
    dtheta[l] += (a1 / (s2p * static_cast<double>(m))) * theta[l];
    gmu += dtheta[l].rowwise().sum();
    const Matrix dl = dtheta[l] * eps[l].transpose();
    double* graw = grad + raw_off[l];
    Eigen::Index k = 0;
    for (Eigen::Index jj = 0; jj < c[l]; ++jj) {
      graw[k++] += dl(jj, jj) * chol[l](jj, jj) - a1;
      for (Eigen::Index ii = jj + 1; ii < c[l]; ++ii) graw[k++] += dl(ii, jj);
    }
  }
  return terms;
}

ProNdfModel ProNdfModel::train(const MixedDataset& train, const ProNdfConfig& config, const TrainConfig& tc,
                               TrainHistory* history) {
  validate(config);
  if (train.empty()) throw InvalidArgument("Pro-NDF training data is empty");
  if (train.source_counts().front() == 0) throw InvalidArgument("Pro-NDF training data has no HF (source 1) rows");
  if (tc.epochs < 1 || tc.batch_size < 1 || tc.m_train < 1 || tc.m_pred < 1 || tc.patience < 1 ||
      !(tc.learning_rate > 0.0)) {
    throw InvalidArgument("invalid Pro-NDF training configuration");
  }

  ProNdfModel model;
  model.schema_ = train.schema();
  model.standardizer_ = Standardizer::fit(train);
  model.config_ = config;
  model.layout_ = ProNdfLayout::make(model.schema_, config);
  model.m_pred_ = tc.m_pred;
  model.seed_ = tc.seed;
  if (model.schema_.dt() > 0) {
    std::map<std::vector<int>, bool> seen;
    for (const auto& row : train.rows()) {
      if (seen.emplace(row.input.tc, true).second) model.combos_.push_back(row.input.tc);
    }
  }
  const ProNdfLayout& layout = model.layout_;

  // Initialization.
  std::vector<double> params(static_cast<std::size_t>(layout.total), 0.0);
  {
    RngStream rng(tc.seed, "init", 0);
    const auto l1 = VariationalLayer::initialize(layout.ds, kEmbeddingHidden, Activation::tanh, rng);
    const auto l2 = VariationalLayer::initialize(kEmbeddingHidden, kManifoldDim, Activation::identity, rng);
    for (const auto& [layer, mu_off, raw_off] :
         {std::tuple{&l1, layout.mu1, layout.raw1}, std::tuple{&l2, layout.mu2, layout.raw2}}) {
      const Eigen::Index c = layer->parameter_count();
      for (Eigen::Index i = 0; i < c; ++i) params[static_cast<std::size_t>(mu_off + i)] = layer->mu[i];
      Eigen::Index k = raw_off;
      for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = j; i < c; ++i) params[static_cast<std::size_t>(k++)] = layer->chol_raw(i, j);
      }
    }
    if (layout.has_block2()) {
      RngStream r2(tc.seed, "init", 2);
      const auto p2 = mlp_initialize(layout.block2_shape, r2);
      std::copy(p2.begin(), p2.end(), params.begin() + layout.block2);
    }
    RngStream r3(tc.seed, "init", 3);
    const auto p3 = mlp_initialize(layout.block3_shape, r3);
    std::copy(p3.begin(), p3.end(), params.begin() + layout.block3);
  }

  const MixedDataset scaled = model.standardizer_.apply(train);
  std::vector<std::size_t> order(scaled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const ProNdfBatch full = make_batch(scaled, order);
  const Eigen::Index m = config.variant.probabilistic_block1 ? tc.m_train : 1;
  const auto batch_size = static_cast<std::size_t>(tc.batch_size);

  AdamState adam(params.size());
  const AdamConfig adam_config{tc.learning_rate, 0.9, 0.999, 1e-8};
  std::vector<double> grad(params.size());
  std::vector<double> best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  TrainHistory local;
  std::vector<Matrix> eps;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    RngStream order_rng(tc.seed, "batches", static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(std::span<std::size_t>(order));
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t count = std::min(batch_size, order.size() - start);
      const ProNdfBatch batch = gather(full, std::span<const std::size_t>(order).subspan(start, count));
      if (config.variant.probabilistic_block1) {
        RngStream noise(tc.seed, "variational", (static_cast<std::uint64_t>(epoch) << 24) + static_cast<std::uint64_t>(batches));
        eps = draw_noise(layout, m, noise);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      LossTerms terms;
      try {
        terms = prondf_loss(layout, config, params.data(), batch, eps, grad.data());
        adam_step(params, grad, adam, adam_config);
      } catch (const NumericalError& e) {
        throw NumericalError("Pro-NDF training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      sum += terms.total;
      ++batches;
    }
    const double epoch_loss = sum / batches;
    local.loss.push_back(epoch_loss);
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best = params;
      local.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      local.early_stopped = true;
      break;
    }
  }
  model.params_ = std::move(best);
  if (history != nullptr) *history = std::move(local);
  return model;
}

ProNdfModel ProNdfModel::from_parts(Schema schema, Standardizer standardizer, ProNdfConfig config,
                                    std::vector<double> params, int m_pred, std::uint64_t seed,
                                    std::vector<std::vector<int>> observed_combos) {
  validate(config);
  ProNdfModel model;
  model.layout_ = ProNdfLayout::make(schema, config);
  if (static_cast<Eigen::Index>(params.size()) != model.layout_.total) {
    throw SchemaError("Pro-NDF parameter vector has length " + std::to_string(params.size()) + ", expected " +
                      std::to_string(model.layout_.total));
  }
  if (m_pred < 1) throw InvalidArgument("m_pred must be >= 1");
  model.schema_ = std::move(schema);
  model.standardizer_ = std::move(standardizer);
  model.config_ = std::move(config);
  model.params_ = std::move(params);
  model.m_pred_ = m_pred;
  model.seed_ = seed;
  model.combos_ = std::move(observed_combos);
  return model;
}

Matrix ProNdfModel::source_latents(std::uint64_t stream_index, std::string_view stream) const {
  const double* p = params_.data();
  Matrix hidden, z;
  if (!config_.variant.probabilistic_block1) {
    block1_forward(p + layout_.mu1, p + layout_.mu2, layout_.ds, hidden, z);
    return z;
  }
  RngStream rng(seed_, stream, stream_index);
  const auto eps = draw_noise(layout_, 1, rng);
  const Vector t1 = Eigen::Map<const Vector>(p + layout_.mu1, layout_.c1) + unpack_chol(p + layout_.raw1, layout_.c1) * eps[0];
  const Vector t2 = Eigen::Map<const Vector>(p + layout_.mu2, layout_.c2) + unpack_chol(p + layout_.raw2, layout_.c2) * eps[1];
  block1_forward(t1.data(), t2.data(), layout_.ds, hidden, z);
  return z;
}

void ProNdfModel::predict_realizations(const MixedDataset& inputs, int m, Matrix& mu, Matrix& sigma) const {
  if (m < 1) throw InvalidArgument("number of realizations must be >= 1");
  const MixedDataset conformed = inputs.conform_to(schema_);
  for (const auto& row : conformed.rows()) {
    if (row.input.ts < 1 || row.input.ts > schema_.num_sources) {
      throw SchemaError("source " + std::to_string(row.input.ts) + " unseen by the model");
    }
  }
  const MixedDataset scaled = standardizer_.apply(conformed);
  std::vector<std::size_t> all(scaled.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const ProNdfBatch batch = make_batch(scaled, all);
  const Eigen::Index n = batch.size();
  const Eigen::Index dx = layout_.dx;
  if (!config_.variant.probabilistic_block1) m = 1;

  MlpCache cache2;
  if (layout_.has_block2()) mlp_forward(layout_.block2_shape, params_.data() + layout_.block2, batch.zeta, cache2);
  Matrix in3(layout_.block3_inputs(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    in3.block(0, i, dx, 1) = batch.x.col(i);
    if (layout_.has_block2()) in3.block(dx + 2, i, 2, 1) = cache2.output().col(i);
  }
  mu.resize(n, m);
  sigma.resize(n, m);
  MlpCache cache3;
  for (int j = 0; j < m; ++j) {
    const Matrix z = source_latents(static_cast<std::uint64_t>(j), "predict");
    for (Eigen::Index i = 0; i < n; ++i) {
      const int s = batch.source[static_cast<std::size_t>(i)];
      in3(dx, i) = z(0, s);
      in3(dx + 1, i) = z(1, s);
    }
    mlp_forward(layout_.block3_shape, params_.data() + layout_.block3, in3, cache3);
    const Matrix& out = cache3.output();
    mu.col(j) = out.row(0).transpose();
    if (config_.variant.probabilistic_output) {
      for (Eigen::Index i = 0; i < n; ++i) sigma(i, j) = softplus(out(1, i)) + kSigmaFloor;
    } else {
      sigma.col(j).setZero();
    }
  }
}

std::vector<Prediction> ProNdfModel::predict(const MixedDataset& inputs) const {
  Matrix mu, sigma;
  predict_realizations(inputs, m_pred_, mu, sigma);
  const double scale = standardizer_.y_scale();
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(mu.rows()));
  std::vector<double> mrow(static_cast<std::size_t>(mu.cols())), srow(mrow.size());
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    for (Eigen::Index j = 0; j < mu.cols(); ++j) {
      mrow[static_cast<std::size_t>(j)] = mu(i, j);
      srow[static_cast<std::size_t>(j)] = sigma(i, j);
    }
    const auto moments = ensemble_moments(mrow, srow);
    const double var = std::max(moments.variance, kSigmaFloor * kSigmaFloor);
    out.push_back({standardizer_.invert_y(moments.mean), var * scale * scale});
  }
  return out;
}

std::vector<ManifoldPoint> ProNdfModel::fidelity_manifold(int m) const {
  if (m < 1) throw InvalidArgument("number of realizations must be >= 1");
  std::vector<Matrix> draws;
  for (int r = 0; r < m; ++r) draws.push_back(source_latents(static_cast<std::uint64_t>(r), "manifold"));
  std::vector<ManifoldPoint> points;
  for (Eigen::Index s = 0; s < layout_.ds; ++s) {
    for (int r = 0; r < m; ++r) {
      const Matrix& z = draws[static_cast<std::size_t>(r)];
      points.push_back({static_cast<int>(s) + 1, r, z(0, s), z(1, s)});
    }
  }
  return points;
}

std::vector<double> ProNdfModel::source_distances(int m) const {
  if (m < 1) throw InvalidArgument("number of realizations must be >= 1");
  std::vector<double> dist(static_cast<std::size_t>(layout_.ds), 0.0);
  for (int r = 0; r < m; ++r) {
    const Matrix z = source_latents(static_cast<std::uint64_t>(r), "manifold");
    for (Eigen::Index s = 0; s < layout_.ds; ++s) dist[static_cast<std::size_t>(s)] += (z.col(s) - z.col(0)).norm();
  }
  for (double& d : dist) d /= m;
  return dist;
}

std::vector<CategoricalPoint> ProNdfModel::categorical_manifold() const {
  if (schema_.dt() == 0) throw InvalidArgument("no categorical inputs");
  std::vector<CategoricalPoint> points;
  MlpCache cache;
  for (const auto& combo : combos_) {
    const auto z = one_hot_encode(combo, schema_);
    const Matrix in = Eigen::Map<const Vector>(z.data(), static_cast<Eigen::Index>(z.size()));
    mlp_forward(layout_.block2_shape, params_.data() + layout_.block2, in, cache);
    std::string label;
    for (std::size_t v = 0; v < combo.size(); ++v) {
      if (v > 0) label += '|';
      label += schema_.categoricals[v].levels[static_cast<std::size_t>(combo[v] - 1)];
    }
    points.push_back({label, cache.output()(0, 0), cache.output()(1, 0)});
  }
  return points;
}

std::vector<VariationalLayer> ProNdfModel::block1() const {
  std::vector<VariationalLayer> layers;
  const std::array<std::tuple<Eigen::Index, Eigen::Index, Eigen::Index, Eigen::Index, Activation>, 2> specs{
      std::tuple{layout_.ds, Eigen::Index{kEmbeddingHidden}, layout_.mu1, layout_.raw1, Activation::tanh},
      std::tuple{Eigen::Index{kEmbeddingHidden}, Eigen::Index{kManifoldDim}, layout_.mu2, layout_.raw2,
                 Activation::identity}};
  for (const auto& [in, out, mu_off, raw_off, act] : specs) {
    VariationalLayer layer;
    layer.in = in;
    layer.out = out;
    layer.activation = act;
    const Eigen::Index c = layer.parameter_count();
    layer.mu = Eigen::Map<const Vector>(params_.data() + mu_off, c);
    layer.chol_raw = Matrix::Zero(c, c);
    Eigen::Index k = raw_off;
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = j; i < c; ++i) layer.chol_raw(i, j) = params_[static_cast<std::size_t>(k++)];
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

}  // namespace mfusion
