#pragma once

// Latent-map Gaussian process.
//
// Categorical inputs and the source index are each mapped to a point in a
// 2-D latent space through a one-hot prior vector times a learned matrix.
// The Gaussian correlation adds squared latent distances to the weighted
// numeric distance:
//
//   r(p, p') = exp(-|z_s - z_s'|^2 - |z_c - z_c'|^2 - sum_i 10^w_i (x_i - x_i')^2)
//
// Fitting minimizes the profiled negative log-likelihood, where the constant
// mean and process variance take their closed-form optima, with multi-start
// Adam over (omega, A_s, A_c, nugget).

#include <cstdint>
#include <span>
#include <vector>

#include "mfusion/data.hpp"
#include "mfusion/linalg.hpp"
#include "mfusion/prediction.hpp"

namespace mfusion {

inline constexpr int kLatentDim = 2;
inline constexpr double kMinNugget = 1e-8;
inline constexpr double kMaxNugget = 1.0;

struct LmgpParameters {
  Vector omega;            // log10 roughness per numeric input
  Matrix source_map;       // ds x 2
  Matrix categorical_map;  // (sum of levels) x 2, zero rows when dt == 0
  double nugget = kMinNugget;
};

/// Training inputs encoded for kernel evaluation (standardized units).
struct LmgpDesign {
  Matrix x;                 // n x dx
  std::vector<int> source;  // 0-based source per row
  Matrix zeta;              // n x (sum of levels)

  Eigen::Index size() const { return x.rows(); }
};

struct LmgpConfig {
  int n_starts = 8;
  int max_iters = 300;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
};

/// z = zeta * A for a row vector zeta.
Vector latent_map(std::span<const double> zeta, const Matrix& a);

LmgpDesign make_design(const MixedDataset& standardized);

/// Correlation between two inputs (numeric parts already standardized).
double correlation(const MixedInput& p1, const MixedInput& p2, const LmgpParameters& params, const Schema& schema);

/// R (without nugget) over the design rows.
Matrix correlation_matrix(const LmgpDesign& design, const LmgpParameters& params);

/// -ln N(y; 1m, s2 (R + nugget I)), computed through a Cholesky factor.
/// Throws NumericalError ("increase nugget") when the factorization fails.
double neg_log_likelihood(const LmgpParameters& params, double mean, double process_variance,
                          const LmgpDesign& design, const Vector& y);

struct ProfiledFit {
  double nll = 0.0;
  double mean = 0.0;
  double process_variance = 0.0;
  Vector gradient;  // packed like pack_parameters(), empty unless requested
};

/// Profiled NLL with m and s2 at their closed-form optima; optional gradient
/// with respect to the packed unconstrained parameters.
ProfiledFit profiled_neg_log_likelihood(const LmgpParameters& params, const LmgpDesign& design,
                                        const Vector& y, bool with_gradient);

/// Unconstrained packing: [omega, vec(A_s) row-major, vec(A_c) row-major, u]
/// with nugget = 10^(-8 + 8 * sigmoid(u)).
Vector pack_parameters(const LmgpParameters& params);
LmgpParameters unpack_parameters(const Vector& packed, Eigen::Index dx, Eigen::Index ds, Eigen::Index width);

/// Minimizes the profiled NLL on standardized data. Deterministic given config.seed.
LmgpParameters fit_parameters(const LmgpDesign& design, const Vector& y, const LmgpConfig& config);

class LmgpModel final : public Predictor {
 public:
  /// Standardizes `train`, fits hyperparameters and caches the factorization.
  static LmgpModel fit(const MixedDataset& train, const LmgpConfig& config);

  /// Builds a model from known hyperparameters without optimizing.
  static LmgpModel from_parameters(const MixedDataset& train, const Standardizer& standardizer,
                                   LmgpParameters params);

  Prediction predict_one(const MixedInput& input) const;
  std::vector<Prediction> predict(const MixedDataset& inputs) const override;

  /// Predictions in standardized units, for an input with standardized x.
  std::pair<double, double> predict_standardized(const MixedInput& input) const;

  const LmgpParameters& parameters() const { return params_; }
  double mean() const { return mean_; }
  double process_variance() const { return process_variance_; }
  double ones_rinv_ones() const { return ones_rinv_ones_; }
  double training_nll() const { return nll_; }
  const Schema& schema() const { return training_.schema(); }
  const Standardizer& standardizer() const { return standardizer_; }
  const MixedDataset& training_data() const { return training_; }

  /// Latent point of each source (rows), in source order.
  const Matrix& source_points() const { return params_.source_map; }

 private:
  LmgpModel() = default;
  void factorize();

  MixedDataset training_;  // original units
  Standardizer standardizer_;
  LmgpParameters params_;
  LmgpDesign design_;
  Vector y_;
  double mean_ = 0.0;
  double process_variance_ = 1.0;
  double nll_ = 0.0;
  Matrix chol_;
  Vector alpha_;      // R^-1 (y - 1 m)
  Vector rinv_ones_;  // R^-1 1
  double ones_rinv_ones_ = 1.0;
};

}  // namespace mfusion
