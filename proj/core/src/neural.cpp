#include "mfusion/neural.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mfusion/error.hpp"

namespace mfusion {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw SchemaError("unknown activation '" + name + "'");
}

double activate(Activation a, double v) {
  switch (a) {
    case Activation::tanh: return std::tanh(v);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-v));
    case Activation::identity: return v;
  }
  return v;
}

double activate_derivative(Activation a, double out) {
  switch (a) {
    case Activation::tanh: return 1.0 - out * out;
    case Activation::sigmoid: return out * (1.0 - out);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

DenseLayer layer_from_flat(std::span<const double> theta, Eigen::Index in, Eigen::Index out, Activation act) {
  if (static_cast<Eigen::Index>(theta.size()) != out * in + out) throw InvalidArgument("flat layer length mismatch");
  DenseLayer layer;
  layer.w = Eigen::Map<const Matrix>(theta.data(), out, in);
  layer.b = Eigen::Map<const Vector>(theta.data() + out * in, out);
  layer.activation = act;
  return layer;
}

std::vector<double> flatten(const DenseLayer& layer) {
  std::vector<double> theta(static_cast<std::size_t>(layer.parameter_count()));
  Eigen::Map<Matrix>(theta.data(), layer.outputs(), layer.inputs()) = layer.w;
  Eigen::Map<Vector>(theta.data() + layer.w.size(), layer.outputs()) = layer.b;
  return theta;
}

Vector ffnn_forward(std::span<const DenseLayer> layers, const Vector& input) {
  Vector z = input;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& layer = layers[k];
    if (layer.w.cols() != z.size() || layer.b.size() != layer.w.rows()) {
      throw InvalidArgument("ffnn_forward: layer " + std::to_string(k) + " expects " + std::to_string(layer.w.cols()) +
                            " inputs, got " + std::to_string(z.size()));
    }
    Vector pre = layer.w * z + layer.b;
    z = pre.unaryExpr([&](double v) { return activate(layer.activation, v); });
  }
  return z;
}

Matrix VariationalLayer::chol() const {
  Matrix l = chol_raw.triangularView<Eigen::StrictlyLower>();
  l.diagonal() = chol_raw.diagonal().array().exp();
  return l;
}

Matrix VariationalLayer::covariance() const {
  const Matrix l = chol();
  return l * l.transpose();
}

VariationalLayer VariationalLayer::initialize(Eigen::Index in, Eigen::Index out, Activation act, RngStream& rng) {
  VariationalLayer layer;
  layer.in = in;
  layer.out = out;
  layer.activation = act;
  const Eigen::Index c = layer.parameter_count();
  layer.mu.resize(c);
  for (Eigen::Index i = 0; i < c; ++i) layer.mu[i] = 0.1 * rng.normal();
  layer.chol_raw = Matrix::Zero(c, c);
  layer.chol_raw.diagonal().setConstant(std::log(0.05));
  return layer;
}

Vector reparameterize(const VariationalLayer& layer, const Vector& eps) {
  if (eps.size() != layer.mu.size()) throw InvalidArgument("reparameterize: noise length mismatch");
  return layer.mu + layer.chol() * eps;
}

DenseLayer sample_variational(const VariationalLayer& layer, RngStream& rng) {
  Vector eps(layer.mu.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  const Vector theta = reparameterize(layer, eps);
  return layer_from_flat(std::span<const double>(theta.data(), static_cast<std::size_t>(theta.size())), layer.in,
                         layer.out, layer.activation);
}

double kl_closed_form(const VariationalLayer& layer, const GaussianPrior& prior) {
  if (!(prior.sigma_p > 0.0)) throw InvalidArgument("prior sigma must be positive");
  const double c = static_cast<double>(layer.mu.size());
  const double s2 = prior.sigma_p * prior.sigma_p;
  const Matrix l = layer.chol();
  const double trace = l.squaredNorm() / s2;
  const double quad = layer.mu.squaredNorm() / s2;
  const double logdet_q = 2.0 * layer.chol_raw.diagonal().sum();
  return 0.5 * (trace + quad - c + c * std::log(s2) - logdet_q);
}

KlEstimate kl_monte_carlo(const VariationalLayer& layer, const GaussianPrior& prior, int n_mc, RngStream& rng) {
  if (n_mc < 1) throw InvalidArgument("n_mc must be >= 1");
  if (!(prior.sigma_p > 0.0)) throw InvalidArgument("prior sigma must be positive");
  const Eigen::Index c = layer.mu.size();
  const Matrix l = layer.chol();
  const double log_sigma = std::log(prior.sigma_p);
  const double s2 = prior.sigma_p * prior.sigma_p;
  const double log_diag = layer.chol_raw.diagonal().sum();
  double sum = 0.0, sum_sq = 0.0;
  Vector eps(c);
  for (int k = 0; k < n_mc; ++k) {
    for (Eigen::Index i = 0; i < c; ++i) eps[i] = rng.normal();
    const Vector theta = layer.mu + l * eps;
    // ln q - ln p; the 2*pi terms cancel.
    const double term = -0.5 * eps.squaredNorm() - log_diag + 0.5 * theta.squaredNorm() / s2 +
                        static_cast<double>(c) * log_sigma;
    sum += term;
    sum_sq += term * term;
  }
  const double n = static_cast<double>(n_mc);
  const double mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

double l2_penalty(std::span<const DenseLayer> layers) {
  double total = 0.0;
  for (const auto& layer : layers) total += layer.w.squaredNorm() + layer.b.squaredNorm();
  return total;
}

MlpShape MlpShape::make(Eigen::Index in, std::span<const int> hidden, Eigen::Index out, Activation hidden_act,
                        Activation out_act) {
  if (in < 1 || out < 1) throw InvalidArgument("MLP needs at least one input and one output");
  MlpShape shape;
  shape.widths.push_back(in);
  for (int h : hidden) {
    if (h < 1) throw InvalidArgument("hidden width must be positive");
    shape.widths.push_back(h);
    shape.activations.push_back(hidden_act);
  }
  shape.widths.push_back(out);
  shape.activations.push_back(out_act);
  return shape;
}

Eigen::Index MlpShape::parameter_count() const {
  Eigen::Index count = 0;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) count += widths[k + 1] * widths[k] + widths[k + 1];
  return count;
}

void mlp_forward(const MlpShape& shape, const double* params, const Matrix& input, MlpCache& cache) {
  if (input.rows() != shape.inputs()) throw InvalidArgument("mlp_forward: input rows do not match the MLP");
  cache.values.resize(shape.layers() + 1);
  cache.values[0] = input;
  const double* p = params;
  for (std::size_t k = 0; k < shape.layers(); ++k) {
    const Eigen::Index in = shape.widths[k], out = shape.widths[k + 1];
    const Eigen::Map<const Matrix> w(p, out, in);
    const Eigen::Map<const Vector> b(p + out * in, out);
    Matrix& z = cache.values[k + 1];
    z.noalias() = w * cache.values[k];
    z.colwise() += b;
    switch (shape.activations[k]) {
      case Activation::tanh: z = z.array().tanh(); break;
      case Activation::sigmoid: z = (1.0 + (-z.array()).exp()).inverse(); break;
      case Activation::identity: break;
    }
    p += out * in + out;
  }
}

Matrix mlp_backward(const MlpShape& shape, const double* params, const MlpCache& cache, const Matrix& d_output,
                    double* grad) {
  std::vector<Eigen::Index> offsets(shape.layers());
  Eigen::Index off = 0;
  for (std::size_t k = 0; k < shape.layers(); ++k) {
    offsets[k] = off;
    off += shape.widths[k + 1] * shape.widths[k] + shape.widths[k + 1];
  }
  Matrix delta = d_output;
  for (std::size_t k = shape.layers(); k-- > 0;) {
    const Eigen::Index in = shape.widths[k], out = shape.widths[k + 1];
    const Matrix& z = cache.values[k + 1];
    switch (shape.activations[k]) {
      case Activation::tanh: delta.array() *= 1.0 - z.array().square(); break;
      case Activation::sigmoid: delta.array() *= z.array() * (1.0 - z.array()); break;
      case Activation::identity: break;
    }
    Eigen::Map<Matrix> gw(grad + offsets[k], out, in);
    Eigen::Map<Vector> gb(grad + offsets[k] + out * in, out);
    gw.noalias() += delta * cache.values[k].transpose();
    gb += delta.rowwise().sum();
    const Eigen::Map<const Matrix> w(params + offsets[k], out, in);
    Matrix next = w.transpose() * delta;
    delta = std::move(next);
  }
  return delta;
}

std::vector<double> mlp_initialize(const MlpShape& shape, RngStream& rng) {
  std::vector<double> params(static_cast<std::size_t>(shape.parameter_count()), 0.0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < shape.layers(); ++k) {
    const Eigen::Index in = shape.widths[k], out = shape.widths[k + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (Eigen::Index i = 0; i < out * in; ++i) params[off++] = limit * (2.0 * rng.uniform() - 1.0);
    off += static_cast<std::size_t>(out);
  }
  return params;
}

std::vector<DenseLayer> mlp_layers(const MlpShape& shape, std::span<const double> params) {
  if (static_cast<Eigen::Index>(params.size()) != shape.parameter_count()) {
    throw InvalidArgument("MLP parameter length mismatch");
  }
  std::vector<DenseLayer> layers;
  std::size_t off = 0;
  for (std::size_t k = 0; k < shape.layers(); ++k) {
    const Eigen::Index in = shape.widths[k], out = shape.widths[k + 1];
    const auto count = static_cast<std::size_t>(out * in + out);
    layers.push_back(layer_from_flat(params.subspan(off, count), in, out, shape.activations[k]));
    off += count;
  }
  return layers;
}

}  // namespace mfusion
