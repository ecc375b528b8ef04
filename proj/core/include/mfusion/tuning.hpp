#pragma once

// Model dispatch, cross-validation, seeded random search and the experiment
// grids (model comparison and Pro-NDF ablation).

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfusion/baselines.hpp"
#include "mfusion/evaluation.hpp"
#include "mfusion/lmgp.hpp"
#include "mfusion/problems.hpp"
#include "mfusion/prondf.hpp"

namespace mfusion {

enum class ModelKind { prondf, lmgp, ffnn, smf };

const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Every model's configuration; each model reads its own part.
struct ModelSettings {
  ProNdfConfig prondf;
  TrainConfig train;
  LmgpConfig lmgp;
  FfnnConfig ffnn;
  SmfConfig smf;
};

struct FitResult {
  std::unique_ptr<Predictor> model;
  std::vector<TrainHistory> histories;  // one per trained network, empty for LMGP
};

FitResult fit_model(ModelKind kind, const MixedDataset& train, const ModelSettings& settings);

/// Mean over k folds of the HF validation MSE of the (ensemble) mean.
double cross_validate(ModelKind kind, const MixedDataset& data, const ModelSettings& settings, int folds,
                      std::uint64_t seed);

struct LogRange {
  double lo = 1e-3;
  double hi = 1e-1;
};

struct ProNdfSearchSpace {
  int min_layers = 1;
  int max_layers = 3;
  std::vector<int> widths{8, 16, 32};
  LogRange learning_rate{1e-3, 3e-2};
  LogRange alpha1{1e-4, 1.0};
  LogRange alpha2{1e-3, 1.0};
  LogRange alpha3{1e-6, 1e-2};
  LogRange sigma_p{1e-2, 1e1};
  std::vector<int> batch_sizes{8, 16, 32, 64};
};

struct FfnnSearchSpace {
  int min_layers = 1;
  int max_layers = 3;
  std::vector<int> widths{8, 16, 32};
  LogRange learning_rate{1e-3, 3e-2};
  LogRange beta{1e-6, 1e-2};
  std::vector<int> batch_sizes{8, 16, 32, 64};
};

nlohmann::json sample_prondf_params(const ProNdfSearchSpace& space, RngStream& rng);
nlohmann::json sample_ffnn_params(const FfnnSearchSpace& space, RngStream& rng);
/// Applies sampled parameters to a copy of `settings`.
ModelSettings apply_params(ModelKind kind, const nlohmann::json& params, ModelSettings settings);

struct Trial {
  std::size_t index = 0;
  nlohmann::json params;
  std::optional<double> cv_mse;  // empty when the trial failed
  std::string error;
};

struct SearchResult {
  std::vector<Trial> trials;
  std::size_t best = 0;
};

using TrialSampler = std::function<nlohmann::json(RngStream&)>;
using TrialObjective = std::function<double(const nlohmann::json&)>;

/// Draws `budget` independent samples (trial i from stream (seed, "tuner", i)),
/// scores each and returns the argmin, ties going to the lowest index.
/// NumericalError from a trial marks it failed; if every trial fails a
/// NumericalError carrying the log is thrown.
SearchResult random_search(const TrialSampler& sampler, const TrialObjective& objective, int budget,
                           std::uint64_t seed);

/// Index of the best finished trial, ties to the lowest index.
std::size_t best_trial(const std::vector<Trial>& trials);

struct TuneOptions {
  int budget = 30;
  int folds = 5;
  std::uint64_t seed = 1;
  // Cheaper training inside cross-validation; unset keeps the model settings.
  std::optional<int> cv_m_train;
  std::optional<int> cv_epochs;
  std::optional<int> cv_patience;
  ProNdfSearchSpace prondf_space;
  FfnnSearchSpace ffnn_space;
};

/// Random search over the model's space scored by k-fold CV. LMGP has no
/// tuned hyperparameters and is rejected.
SearchResult tune(ModelKind kind, const MixedDataset& data, const ModelSettings& settings, const TuneOptions& options);

struct ComparisonRow {
  ModelKind kind = ModelKind::prondf;
  MetricsReport metrics;
};

std::vector<ComparisonRow> compare_models(const MixedDataset& train, const MixedDataset& test,
                                          const ModelSettings& settings, std::span<const ModelKind> kinds);

struct AblationRow {
  std::string name;  // Base, V1..V4
  std::string description;
  MetricsReport metrics;
  std::optional<int> dropped_source;  // V4 only
};

/// Base, V1 (no interval-score term), V2 (deterministic Block 1), V3 (no
/// interval-score term and deterministic output), V4 (drop the LF source
/// farthest from HF in the fidelity manifold of the Base model). The Base model
/// is moved into `base` when given.
std::vector<AblationRow> run_ablation(const MixedDataset& train, const MixedDataset& test,
                                      const ModelSettings& settings, std::unique_ptr<ProNdfModel>* base = nullptr);

/// 1-based LF source with the largest mean manifold distance to HF.
int farthest_source(const ProNdfModel& model, int realizations);

}  // namespace mfusion
