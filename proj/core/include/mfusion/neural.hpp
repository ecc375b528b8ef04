#pragma once

// Dense and variational layers plus a batched multilayer perceptron.
//
// Parameters of a dense layer are flattened as vec(W) (column-major, out x in)
// followed by b. Variational layers keep a Gaussian over that flat vector with
// a dense covariance L L^T, where L is lower triangular and its diagonal is
// stored on a log scale.

#include <span>
#include <string>
#include <vector>

#include "mfusion/linalg.hpp"
#include "mfusion/rng.hpp"

namespace mfusion {

enum class Activation { tanh, sigmoid, identity };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

double activate(Activation a, double v);
/// Derivative expressed through the activated output.
double activate_derivative(Activation a, double out);

struct DenseLayer {
  Matrix w;  // out x in
  Vector b;  // out
  Activation activation = Activation::identity;

  Eigen::Index inputs() const { return w.cols(); }
  Eigen::Index outputs() const { return w.rows(); }
  Eigen::Index parameter_count() const { return w.size() + b.size(); }
};

/// Builds a layer from a flat parameter vector of length out*in + out.
DenseLayer layer_from_flat(std::span<const double> theta, Eigen::Index in, Eigen::Index out, Activation act);
std::vector<double> flatten(const DenseLayer& layer);

/// z_1 = x, z_k = phi(W_k z_{k-1} + b_k). Throws InvalidArgument on a shape mismatch.
Vector ffnn_forward(std::span<const DenseLayer> layers, const Vector& input);

struct GaussianPrior {
  double sigma_p = 1.0;
};

struct VariationalLayer {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  Vector mu;         // length c = out*in + out
  Matrix chol_raw;   // c x c, lower triangle used, diagonal holds log L_ii
  Activation activation = Activation::identity;

  Eigen::Index parameter_count() const { return out * in + out; }
  /// Lower-triangular factor with exp applied to the diagonal.
  Matrix chol() const;
  Matrix covariance() const;

  /// mu ~ N(0, 0.1^2), diagonal of L = 0.05, off-diagonals 0.
  static VariationalLayer initialize(Eigen::Index in, Eigen::Index out, Activation act, RngStream& rng);
};

/// theta = mu + L eps.
Vector reparameterize(const VariationalLayer& layer, const Vector& eps);
DenseLayer sample_variational(const VariationalLayer& layer, RngStream& rng);

/// KL[q || N(0, sigma_p^2 I)] in closed form.
double kl_closed_form(const VariationalLayer& layer, const GaussianPrior& prior);

struct KlEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Monte Carlo estimate of E_q[ln q - ln p] from reparameterized draws.
KlEstimate kl_monte_carlo(const VariationalLayer& layer, const GaussianPrior& prior, int n_mc, RngStream& rng);

/// Sum of squares of every weight and bias.
double l2_penalty(std::span<const DenseLayer> layers);

/// Layer widths and activations of an MLP whose parameters live in one flat buffer.
struct MlpShape {
  std::vector<Eigen::Index> widths;  // input, hidden..., output
  std::vector<Activation> activations;  // one per layer

  static MlpShape make(Eigen::Index in, std::span<const int> hidden, Eigen::Index out, Activation hidden_act,
                       Activation out_act = Activation::identity);
  std::size_t layers() const { return activations.size(); }
  Eigen::Index inputs() const { return widths.front(); }
  Eigen::Index outputs() const { return widths.back(); }
  Eigen::Index parameter_count() const;
};

/// Activations kept by the forward pass for the backward pass.
struct MlpCache {
  std::vector<Matrix> values;  // values[0] is the input batch, values[k] is layer k's output
  const Matrix& output() const { return values.back(); }
};

/// Batched forward pass: columns of `input` are samples.
void mlp_forward(const MlpShape& shape, const double* params, const Matrix& input, MlpCache& cache);

/// Accumulates dL/dparams into `grad` and returns dL/dinput.
Matrix mlp_backward(const MlpShape& shape, const double* params, const MlpCache& cache, const Matrix& d_output,
                    double* grad);

/// Glorot-uniform weights, zero biases.
std::vector<double> mlp_initialize(const MlpShape& shape, RngStream& rng);

std::vector<DenseLayer> mlp_layers(const MlpShape& shape, std::span<const double> params);

}  // namespace mfusion
