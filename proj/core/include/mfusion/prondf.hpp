#pragma once

// Probabilistic neural data fusion.
//
// Block 1 is a Bayesian network that maps the one-hot source indicator to a
// 2-D fidelity manifold. Block 2 maps the one-hot categorical inputs to a 2-D
// categorical manifold. Block 3 consumes [x, z_s, z_c] and emits the mean and
// a raw scale of a Gaussian output. Every Block-1 weight draw is a
// realization; predictions are ensembles over realizations.

#include <cstdint>
#include <string>
#include <vector>

#include "mfusion/data.hpp"
#include "mfusion/neural.hpp"
#include "mfusion/prediction.hpp"

namespace mfusion {

inline constexpr int kManifoldDim = 2;
inline constexpr int kEmbeddingHidden = 5;
inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kPiHalfWidth = 1.96;

struct LossWeights {
  double alpha1 = 1e-2;  // KL
  double alpha2 = 1e-1;  // interval score
  double alpha3 = 1e-4;  // L2
  double gamma = 0.05;
};

/// Switches used by the ablation variants.
struct ProNdfVariant {
  bool interval_score_term = true;   // off in V1 and V3
  bool probabilistic_block1 = true;  // off in V2
  bool probabilistic_output = true;  // off in V3; Block 3 then emits only a mean trained by MSE
};

struct ProNdfConfig {
  std::vector<int> block3_hidden{16, 16};
  double sigma_p = 1.0;
  LossWeights weights;
  ProNdfVariant variant;
};

struct TrainConfig {
  int epochs = 2000;
  int patience = 200;  // stop after this many epochs without a new best loss
  int batch_size = 32;
  double learning_rate = 1e-2;
  int m_train = 200;
  int m_pred = 1000;
  std::uint64_t seed = 1;
};

struct TrainHistory {
  std::vector<double> loss;  // mean batch loss per epoch
  int best_epoch = 0;
  bool early_stopped = false;
};

/// (u - l) + (2/gamma)(l - y) 1{y < l} + (2/gamma)(y - u) 1{y > u}
/// with l, u = mu -+ 1.96 sigma.
double interval_score(double y, double mu, double sigma, double gamma = 0.05);
/// Same score for explicit bounds.
double interval_score_bounds(double y, double lower, double upper, double gamma = 0.05);

/// Mean and variance of a Gaussian mixture with equal weights.
struct EnsembleMoments {
  double mean = 0.0;
  double variance = 0.0;
};
EnsembleMoments ensemble_moments(std::span<const double> mu, std::span<const double> sigma);

double softplus(double v);

/// Offsets of every block inside the flat parameter vector.
struct ProNdfLayout {
  Eigen::Index dx = 0;
  Eigen::Index ds = 1;
  Eigen::Index categorical_width = 0;  // 0 when there is no Block 2
  Eigen::Index c1 = 0, c2 = 0;         // Block-1 layer parameter counts
  Eigen::Index mu1 = 0, raw1 = 0, mu2 = 0, raw2 = 0;
  Eigen::Index block2 = 0, block3 = 0, total = 0;
  MlpShape block2_shape, block3_shape;

  static ProNdfLayout make(const Schema& schema, const ProNdfConfig& config);
  bool has_block2() const { return categorical_width > 0; }
  Eigen::Index block3_inputs() const { return block3_shape.inputs(); }
};

/// A batch in standardized units, one column per row.
struct ProNdfBatch {
  Matrix x;                 // dx x B
  std::vector<int> source;  // 0-based
  Matrix zeta;              // categorical one-hot, width x B
  Vector y;                 // B

  Eigen::Index size() const { return y.size(); }
};

ProNdfBatch make_batch(const MixedDataset& standardized, std::span<const std::size_t> rows);

struct LossTerms {
  double total = 0.0;
  double data = 0.0;  // Gaussian NLL, or MSE for a deterministic output
  double kl = 0.0;
  double is = 0.0;
  double l2 = 0.0;
};

/// Loss at fixed Block-1 noise. `eps` holds one (c_l x M) matrix per Block-1
/// layer; it is ignored when Block 1 is deterministic. When `grad` is non-null
/// the gradient is accumulated into it (length layout.total).
LossTerms prondf_loss(const ProNdfLayout& layout, const ProNdfConfig& config, const double* params,
                      const ProNdfBatch& batch, const std::vector<Matrix>& eps, double* grad);

struct ManifoldPoint {
  int source = 1;  // 1-based
  int realization = 0;
  double z1 = 0.0, z2 = 0.0;
};

struct CategoricalPoint {
  std::string combo;  // level names joined by '|'
  double z1 = 0.0, z2 = 0.0;
};

class ProNdfModel final : public Predictor {
 public:
  static ProNdfModel train(const MixedDataset& train, const ProNdfConfig& config, const TrainConfig& train_config,
                           TrainHistory* history = nullptr);
  static ProNdfModel from_parts(Schema schema, Standardizer standardizer, ProNdfConfig config,
                                std::vector<double> params, int m_pred, std::uint64_t seed,
                                std::vector<std::vector<int>> observed_combos);

  std::vector<Prediction> predict(const MixedDataset& inputs) const override;

  /// Per-realization outputs in standardized units, n x M each. Sigma is zero
  /// for a deterministic output head.
  void predict_realizations(const MixedDataset& inputs, int m, Matrix& mu, Matrix& sigma) const;

  std::vector<ManifoldPoint> fidelity_manifold(int m) const;
  std::vector<CategoricalPoint> categorical_manifold() const;
  /// Mean over realizations of |z_s(source k) - z_s(HF)|, one entry per source.
  std::vector<double> source_distances(int m) const;

  /// Block-1 layers as variational layers.
  std::vector<VariationalLayer> block1() const;

  const Schema& schema() const { return schema_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const ProNdfConfig& config() const { return config_; }
  const ProNdfLayout& layout() const { return layout_; }
  const std::vector<double>& parameters() const { return params_; }
  int m_pred() const { return m_pred_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::vector<int>>& observed_combos() const { return combos_; }

 private:
  ProNdfModel() = default;
  /// z_s for every source under one realization's noise, 2 x ds.
  Matrix source_latents(std::uint64_t stream_index, std::string_view stream) const;

  Schema schema_;
  Standardizer standardizer_;
  ProNdfConfig config_;
  ProNdfLayout layout_;
  std::vector<double> params_;
  int m_pred_ = 1000;
  std::uint64_t seed_ = 1;
  std::vector<std::vector<int>> combos_;
};

}  // namespace mfusion
