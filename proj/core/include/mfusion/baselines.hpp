#pragma once

// Comparison methods: a single deterministic network over all sources, and
// sequential multi-fidelity networks where each source's network sees the
// previous network's prediction as an extra input.

#include <cstdint>
#include <vector>

#include "mfusion/data.hpp"
#include "mfusion/neural.hpp"
#include "mfusion/prediction.hpp"
#include "mfusion/prondf.hpp"

namespace mfusion {

struct FfnnConfig {
  std::vector<int> hidden{16, 16};
  double beta = 1e-4;  // L2 weight
  int epochs = 2000;
  int patience = 200;
  int batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 1;
};

/// Scalar tanh regression network over a column-per-sample design.
struct RegressionNet {
  MlpShape shape;
  std::vector<double> params;

  Vector predict(const Matrix& inputs) const;
};

/// Minimizes MSE + beta * |theta|^2 with mini-batch Adam; `stream` separates
/// the random streams of networks trained under the same seed.
RegressionNet train_regression(const Matrix& inputs, const Vector& y, const FfnnConfig& config, std::uint64_t stream,
                               TrainHistory* history = nullptr);

class FfnnFusionModel final : public Predictor {
 public:
  static FfnnFusionModel train(const MixedDataset& train, const FfnnConfig& config, TrainHistory* history = nullptr);
  static FfnnFusionModel from_parts(Schema schema, Standardizer standardizer, RegressionNet net);

  std::vector<Prediction> predict(const MixedDataset& inputs) const override;

  /// [x, one-hot source, one-hot categoricals] per column, x standardized.
  Matrix encode(const MixedDataset& standardized) const;

  const Schema& schema() const { return schema_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const RegressionNet& network() const { return net_; }

 private:
  FfnnFusionModel() = default;
  Schema schema_;
  Standardizer standardizer_;
  RegressionNet net_;
};

struct SmfConfig {
  FfnnConfig network;                  // used for every network unless overridden
  std::vector<FfnnConfig> per_network;  // optional, in training order
  bool use_raw_inputs_in_final = true;
};

class SmfModel final : public Predictor {
 public:
  /// Needs at least two sources. LF sources are trained in a seed-determined
  /// random order and the HF network is always last.
  static SmfModel train(const MixedDataset& train, const SmfConfig& config,
                        std::vector<TrainHistory>* histories = nullptr);
  static SmfModel from_parts(Schema schema, Standardizer standardizer, std::vector<int> order,
                             std::vector<RegressionNet> networks, bool use_raw_inputs_in_final);

  /// Predictions of the final (HF) network fed through the whole chain.
  std::vector<Prediction> predict(const MixedDataset& inputs) const override;

  /// Source of each network in training order (1-based); the last entry is 1.
  const std::vector<int>& order() const { return order_; }
  const std::vector<RegressionNet>& networks() const { return networks_; }
  bool use_raw_inputs_in_final() const { return use_raw_final_; }
  const Schema& schema() const { return schema_; }
  const Standardizer& standardizer() const { return standardizer_; }

  /// Seed-determined permutation of the LF sources {2..ds}.
  static std::vector<int> lf_order(int num_sources, std::uint64_t seed);

 private:
  SmfModel() = default;
  Matrix base_inputs(const MixedDataset& standardized) const;
  Matrix network_inputs(const Matrix& base, const Vector& previous, std::size_t k) const;

  Schema schema_;
  Standardizer standardizer_;
  std::vector<int> order_;
  std::vector<RegressionNet> networks_;
  bool use_raw_final_ = true;
};

}  // namespace mfusion
