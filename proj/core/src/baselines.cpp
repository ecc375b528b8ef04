#include "mfusion/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mfusion/adam.hpp"
#include "mfusion/error.hpp"

namespace mfusion {

namespace {

void validate(const FfnnConfig& c) {
  if (c.epochs < 1 || c.batch_size < 1 || c.patience < 1 || !(c.learning_rate > 0.0) || c.beta < 0.0) {
    throw InvalidArgument("invalid network training configuration");
  }
  for (int h : c.hidden) {
    if (h < 1) throw InvalidArgument("hidden widths must be positive");
  }
}

Vector standardized_outputs(const MixedDataset& scaled) {
  const auto y = scaled.outputs();
  return Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
}

}  // namespace

Vector RegressionNet::predict(const Matrix& inputs) const {
  MlpCache cache;
  mlp_forward(shape, params.data(), inputs, cache);
  return cache.output().row(0).transpose();
}

RegressionNet train_regression(const Matrix& inputs, const Vector& y, const FfnnConfig& config, std::uint64_t stream,
                               TrainHistory* history) {
  validate(config);
  const Eigen::Index n = inputs.cols();
  if (n == 0 || y.size() != n) throw InvalidArgument("regression data is empty or ragged");

  RegressionNet net;
  net.shape = MlpShape::make(inputs.rows(), config.hidden, 1, Activation::tanh);
  RngStream init(config.seed, "init-ffnn", stream);
  net.params = mlp_initialize(net.shape, init);

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamState adam(net.params.size());
  const AdamConfig adam_config{config.learning_rate, 0.9, 0.999, 1e-8};
  std::vector<double> grad(net.params.size());
  std::vector<double> best = net.params;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  TrainHistory local;
  MlpCache cache;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    RngStream order_rng(config.seed, "batches-ffnn", (stream << 32) + static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(std::span<std::size_t>(order));
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t count = std::min(batch_size, order.size() - start);
      Matrix x(inputs.rows(), static_cast<Eigen::Index>(count));
      Vector t(static_cast<Eigen::Index>(count));
      for (std::size_t i = 0; i < count; ++i) {
        x.col(static_cast<Eigen::Index>(i)) = inputs.col(static_cast<Eigen::Index>(order[start + i]));
        t[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(order[start + i])];
      }
      mlp_forward(net.shape, net.params.data(), x, cache);
      const Vector r = cache.output().row(0).transpose() - t;
      const double mse = r.squaredNorm() / static_cast<double>(count);
      double l2 = 0.0;
      for (double p : net.params) l2 += p * p;
      const double loss = mse + config.beta * l2;
      if (!std::isfinite(loss)) {
        throw NumericalError("network training diverged at epoch " + std::to_string(epoch));
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const Matrix dout = (2.0 / static_cast<double>(count)) * r.transpose();
      mlp_backward(net.shape, net.params.data(), cache, dout, grad.data());
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += 2.0 * config.beta * net.params[k];
      try {
        adam_step(net.params, grad, adam, adam_config);
      } catch (const NumericalError& e) {
        throw NumericalError("network training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      sum += loss;
      ++batches;
    }
    const double epoch_loss = sum / batches;
    local.loss.push_back(epoch_loss);
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best = net.params;
      local.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      local.early_stopped = true;
      break;
    }
  }
  net.params = std::move(best);
  if (history != nullptr) *history = std::move(local);
  return net;
}

Matrix FfnnFusionModel::encode(const MixedDataset& standardized) const {
  const auto& schema = schema_;
  const auto dx = static_cast<Eigen::Index>(schema.dx());
  const Eigen::Index ds = schema.num_sources;
  const auto width = static_cast<Eigen::Index>(schema.one_hot_width());
  Matrix x = Matrix::Zero(dx + ds + width, static_cast<Eigen::Index>(standardized.size()));
  for (std::size_t i = 0; i < standardized.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const auto& in = standardized.row(i).input;
    for (Eigen::Index k = 0; k < dx; ++k) x(k, col) = in.x[static_cast<std::size_t>(k)];
    if (in.ts < 1 || in.ts > ds) throw SchemaError("source " + std::to_string(in.ts) + " unseen by the model");
    x(dx + in.ts - 1, col) = 1.0;
    const auto z = one_hot_encode(in.tc, schema);
    for (Eigen::Index k = 0; k < width; ++k) x(dx + ds + k, col) = z[static_cast<std::size_t>(k)];
  }
  return x;
}

FfnnFusionModel FfnnFusionModel::train(const MixedDataset& train, const FfnnConfig& config, TrainHistory* history) {
  if (train.empty()) throw InvalidArgument("FFNN training data is empty");
  FfnnFusionModel model;
  model.schema_ = train.schema();
  model.standardizer_ = Standardizer::fit(train);
  const MixedDataset scaled = model.standardizer_.apply(train);
  model.net_ = train_regression(model.encode(scaled), standardized_outputs(scaled), config, 0, history);
  return model;
}

FfnnFusionModel FfnnFusionModel::from_parts(Schema schema, Standardizer standardizer, RegressionNet net) {
  FfnnFusionModel model;
  model.schema_ = std::move(schema);
  model.standardizer_ = std::move(standardizer);
  const auto expected = static_cast<Eigen::Index>(model.schema_.dx() + model.schema_.one_hot_width()) +
                        model.schema_.num_sources;
  if (net.shape.widths.size() < 2 || net.shape.inputs() != expected || net.shape.outputs() != 1 ||
      static_cast<Eigen::Index>(net.params.size()) != net.shape.parameter_count()) {
    throw SchemaError("FFNN network shape does not match the schema");
  }
  model.net_ = std::move(net);
  return model;
}

std::vector<Prediction> FfnnFusionModel::predict(const MixedDataset& inputs) const {
  const MixedDataset scaled = standardizer_.apply(inputs.conform_to(schema_));
  const Vector out = net_.predict(encode(scaled));
  std::vector<Prediction> preds;
  preds.reserve(static_cast<std::size_t>(out.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) preds.push_back({standardizer_.invert_y(out[i]), std::nullopt});
  return preds;
}

std::vector<int> SmfModel::lf_order(int num_sources, std::uint64_t seed) {
  std::vector<int> order;
  for (int s = 2; s <= num_sources; ++s) order.push_back(s);
  RngStream rng(seed, "smf-order");
  rng.shuffle(std::span<int>(order));
  return order;
}

Matrix SmfModel::base_inputs(const MixedDataset& standardized) const {
  const auto dx = static_cast<Eigen::Index>(schema_.dx());
  const auto width = static_cast<Eigen::Index>(schema_.one_hot_width());
  Matrix x(dx + width, static_cast<Eigen::Index>(standardized.size()));
  for (std::size_t i = 0; i < standardized.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const auto& in = standardized.row(i).input;
    for (Eigen::Index k = 0; k < dx; ++k) x(k, col) = in.x[static_cast<std::size_t>(k)];
    const auto z = one_hot_encode(in.tc, schema_);
    for (Eigen::Index k = 0; k < width; ++k) x(dx + k, col) = z[static_cast<std::size_t>(k)];
  }
  return x;
}

Matrix SmfModel::network_inputs(const Matrix& base, const Vector& previous, std::size_t k) const {
  if (k == 0) return base;
  const bool raw = k + 1 < order_.size() || use_raw_final_;
  const Eigen::Index rows = (raw ? base.rows() : 0) + 1;
  Matrix x(rows, base.cols());
  if (raw) x.topRows(base.rows()) = base;
  x.row(rows - 1) = previous.transpose();
  return x;
}

SmfModel SmfModel::train(const MixedDataset& train, const SmfConfig& config, std::vector<TrainHistory>* histories) {
  const int ds = train.schema().num_sources;
  if (ds < 2) throw InvalidArgument("SMF requires >=2 sources");
  for (int s = 1; s <= ds; ++s) {
    if (train.source_counts()[static_cast<std::size_t>(s - 1)] == 0) {
      throw InvalidArgument("SMF source " + std::to_string(s) + " has no rows");
    }
  }
  if (!config.per_network.empty() && config.per_network.size() != static_cast<std::size_t>(ds)) {
    throw InvalidArgument("SMF per-network configs must cover every source");
  }
  SmfModel model;
  model.schema_ = train.schema();
  model.standardizer_ = Standardizer::fit(train);
  model.use_raw_final_ = config.use_raw_inputs_in_final;
  model.order_ = lf_order(ds, config.network.seed);
  model.order_.push_back(1);
  const MixedDataset scaled = model.standardizer_.apply(train);
  if (histories != nullptr) histories->clear();

  for (std::size_t k = 0; k < model.order_.size(); ++k) {
    const MixedDataset part = scaled.only_source(model.order_[k]);
    const Matrix base = model.base_inputs(part);
    // Chain the already-trained networks over this source's inputs.
    Vector previous;
    for (std::size_t q = 0; q < k; ++q) previous = model.networks_[q].predict(model.network_inputs(base, previous, q));
    const FfnnConfig& net_config = config.per_network.empty() ? config.network : config.per_network[k];
    TrainHistory h;
    model.networks_.push_back(
        train_regression(model.network_inputs(base, previous, k), standardized_outputs(part), net_config, k, &h));
    if (histories != nullptr) histories->push_back(std::move(h));
  }
  return model;
}

SmfModel SmfModel::from_parts(Schema schema, Standardizer standardizer, std::vector<int> order,
                              std::vector<RegressionNet> networks, bool use_raw_inputs_in_final) {
  if (order.size() != networks.size() || order.size() < 2 || order.back() != 1) {
    throw SchemaError("SMF network order is inconsistent");
  }
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (sorted[k] != static_cast<int>(k) + 1 || static_cast<int>(sorted.size()) != schema.num_sources) {
      throw SchemaError("SMF network order is not a permutation of the sources");
    }
  }
  const auto base = static_cast<Eigen::Index>(schema.dx() + schema.one_hot_width());
  for (std::size_t k = 0; k < networks.size(); ++k) {
    const auto& shape = networks[k].shape;
    const bool raw = k == 0 || k + 1 < networks.size() || use_raw_inputs_in_final;
    const Eigen::Index expected = (raw ? base : 0) + (k == 0 ? 0 : 1);
    if (shape.widths.size() < 2 || shape.inputs() != expected || shape.outputs() != 1 ||
        static_cast<Eigen::Index>(networks[k].params.size()) != shape.parameter_count()) {
      throw SchemaError("SMF network " + std::to_string(k) + " does not match the schema");
    }
  }
  SmfModel model;
  model.schema_ = std::move(schema);
  model.standardizer_ = std::move(standardizer);
  model.order_ = std::move(order);
  model.networks_ = std::move(networks);
  model.use_raw_final_ = use_raw_inputs_in_final;
  return model;
}

std::vector<Prediction> SmfModel::predict(const MixedDataset& inputs) const {
  const MixedDataset scaled = standardizer_.apply(inputs.conform_to(schema_));
  const Matrix base = base_inputs(scaled);
  Vector previous;
  for (std::size_t k = 0; k < networks_.size(); ++k) previous = networks_[k].predict(network_inputs(base, previous, k));
  std::vector<Prediction> preds;
  preds.reserve(static_cast<std::size_t>(previous.size()));
  for (Eigen::Index i = 0; i < previous.size(); ++i) {
    preds.push_back({standardizer_.invert_y(previous[i]), std::nullopt});
  }
  return preds;
}

}  // namespace mfusion
