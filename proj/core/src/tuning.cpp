#include "mfusion/tuning.hpp"

#include <cmath>
#include <limits>

#include "mfusion/error.hpp"

namespace mfusion {

namespace {

double log_uniform(const LogRange& r, RngStream& rng) {
  if (!(r.lo > 0.0 && r.hi >= r.lo)) throw InvalidArgument("log range needs 0 < lo <= hi");
  return std::exp(std::log(r.lo) + rng.uniform() * (std::log(r.hi) - std::log(r.lo)));
}

template <typename T>
T choose(const std::vector<T>& options, RngStream& rng) {
  if (options.empty()) throw InvalidArgument("empty choice set in search space");
  return options[rng.uniform_index(options.size())];
}

std::vector<int> sample_architecture(int min_layers, int max_layers, const std::vector<int>& widths, RngStream& rng) {
  if (min_layers < 1 || max_layers < min_layers) throw InvalidArgument("invalid layer-count range");
  const auto layers = min_layers + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(max_layers - min_layers + 1)));
  std::vector<int> hidden;
  for (int i = 0; i < layers; ++i) hidden.push_back(choose(widths, rng));
  return hidden;
}

void apply_ffnn(const nlohmann::json& p, FfnnConfig& c) {
  c.hidden = p.at("hidden").get<std::vector<int>>();
  c.learning_rate = p.at("learning_rate").get<double>();
  c.beta = p.at("beta").get<double>();
  c.batch_size = p.at("batch_size").get<int>();
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::prondf: return "prondf";
    case ModelKind::lmgp: return "lmgp";
    case ModelKind::ffnn: return "ffnn";
    case ModelKind::smf: return "smf";
  }
  return "prondf";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "prondf") return ModelKind::prondf;
  if (name == "lmgp") return ModelKind::lmgp;
  if (name == "ffnn") return ModelKind::ffnn;
  if (name == "smf") return ModelKind::smf;
  throw SchemaError("unknown model kind '" + name + "' (expected prondf, lmgp, ffnn or smf)");
}

FitResult fit_model(ModelKind kind, const MixedDataset& train, const ModelSettings& settings) {
  FitResult result;
  switch (kind) {
    case ModelKind::prondf: {
      TrainHistory h;
      result.model = std::make_unique<ProNdfModel>(ProNdfModel::train(train, settings.prondf, settings.train, &h));
      result.histories.push_back(std::move(h));
      break;
    }
    case ModelKind::lmgp:
      result.model = std::make_unique<LmgpModel>(LmgpModel::fit(train, settings.lmgp));
      break;
    case ModelKind::ffnn: {
      TrainHistory h;
      result.model = std::make_unique<FfnnFusionModel>(FfnnFusionModel::train(train, settings.ffnn, &h));
      result.histories.push_back(std::move(h));
      break;
    }
    case ModelKind::smf:
      result.model = std::make_unique<SmfModel>(SmfModel::train(train, settings.smf, &result.histories));
      break;
  }
  return result;
}

double cross_validate(ModelKind kind, const MixedDataset& data, const ModelSettings& settings, int folds,
                      std::uint64_t seed) {
  double total = 0.0;
  const auto parts = kfold(data, folds, seed);
  for (const auto& fold : parts) {
    const auto fit = fit_model(kind, fold.train, settings);
    const auto preds = fit.model->predict(fold.validation);
    std::vector<double> mu;
    for (const auto& p : preds) mu.push_back(p.mean);
    total += mse(mu, fold.validation.outputs());
  }
  return total / static_cast<double>(parts.size());
}

nlohmann::json sample_prondf_params(const ProNdfSearchSpace& s, RngStream& rng) {
  nlohmann::json p;
  p["block3_hidden"] = sample_architecture(s.min_layers, s.max_layers, s.widths, rng);
  p["learning_rate"] = log_uniform(s.learning_rate, rng);
  p["alpha1"] = log_uniform(s.alpha1, rng);
  p["alpha2"] = log_uniform(s.alpha2, rng);
  p["alpha3"] = log_uniform(s.alpha3, rng);
  p["sigma_p"] = log_uniform(s.sigma_p, rng);
  p["batch_size"] = choose(s.batch_sizes, rng);
  return p;
}

nlohmann::json sample_ffnn_params(const FfnnSearchSpace& s, RngStream& rng) {
  nlohmann::json p;
  p["hidden"] = sample_architecture(s.min_layers, s.max_layers, s.widths, rng);
  p["learning_rate"] = log_uniform(s.learning_rate, rng);
  p["beta"] = log_uniform(s.beta, rng);
  p["batch_size"] = choose(s.batch_sizes, rng);
  return p;
}

ModelSettings apply_params(ModelKind kind, const nlohmann::json& p, ModelSettings settings) {
  try {
    switch (kind) {
      case ModelKind::prondf:
        settings.prondf.block3_hidden = p.at("block3_hidden").get<std::vector<int>>();
        settings.train.learning_rate = p.at("learning_rate").get<double>();
        settings.prondf.weights.alpha1 = p.at("alpha1").get<double>();
        settings.prondf.weights.alpha2 = p.at("alpha2").get<double>();
        settings.prondf.weights.alpha3 = p.at("alpha3").get<double>();
        settings.prondf.sigma_p = p.at("sigma_p").get<double>();
        settings.train.batch_size = p.at("batch_size").get<int>();
        break;
      case ModelKind::ffnn:
        apply_ffnn(p, settings.ffnn);
        break;
      case ModelKind::smf: {
        const auto& nets = p.at("networks");
        settings.smf.per_network.clear();
        for (const auto& n : nets) {
          FfnnConfig c = settings.smf.network;
          apply_ffnn(n, c);
          settings.smf.per_network.push_back(c);
        }
        settings.smf.use_raw_inputs_in_final = p.at("use_raw_inputs_in_final").get<bool>();
        break;
      }
      case ModelKind::lmgp:
        throw InvalidArgument("LMGP has no tuned hyperparameters");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad tuning parameters: ") + e.what());
  }
  return settings;
}

std::size_t best_trial(const std::vector<Trial>& trials) {
  std::size_t best = trials.size();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (!trials[i].cv_mse) continue;
    if (best == trials.size() || *trials[i].cv_mse < *trials[best].cv_mse ||
        (*trials[i].cv_mse == *trials[best].cv_mse && trials[i].index < trials[best].index)) {
      best = i;
    }
  }
  if (best == trials.size()) throw NumericalError("no finished trial");
  return best;
}

SearchResult random_search(const TrialSampler& sampler, const TrialObjective& objective, int budget,
                           std::uint64_t seed) {
  if (budget < 1) throw InvalidArgument("search budget must be >= 1");
  SearchResult result;
  for (int i = 0; i < budget; ++i) {
    Trial t;
    t.index = static_cast<std::size_t>(i);
    RngStream rng(seed, "tuner", static_cast<std::uint64_t>(i));
    t.params = sampler(rng);
    try {
      const double score = objective(t.params);
      if (std::isfinite(score)) {
        t.cv_mse = score;
      } else {
        t.error = "non-finite CV score";
      }
    } catch (const NumericalError& e) {
      t.error = e.what();
    }
    result.trials.push_back(std::move(t));
  }
  bool any = false;
  for (const auto& t : result.trials) any = any || t.cv_mse.has_value();
  if (!any) {
    std::string log = "every tuning trial failed:";
    for (const auto& t : result.trials) log += "\n  trial " + std::to_string(t.index) + ": " + t.error;
    throw NumericalError(log);
  }
  result.best = best_trial(result.trials);
  return result;
}

SearchResult tune(ModelKind kind, const MixedDataset& data, const ModelSettings& settings, const TuneOptions& options) {
  if (kind == ModelKind::lmgp) throw InvalidArgument("LMGP hyperparameters are fitted by maximum likelihood; nothing to tune");
  ModelSettings cv = settings;
  if (options.cv_m_train) cv.train.m_train = *options.cv_m_train;
  if (options.cv_epochs) {
    cv.train.epochs = *options.cv_epochs;
    cv.ffnn.epochs = *options.cv_epochs;
    cv.smf.network.epochs = *options.cv_epochs;
  }
  if (options.cv_patience) {
    cv.train.patience = *options.cv_patience;
    cv.ffnn.patience = *options.cv_patience;
    cv.smf.network.patience = *options.cv_patience;
  }
  const int ds = data.schema().num_sources;
  TrialSampler sampler;
  switch (kind) {
    case ModelKind::prondf:
      sampler = [&](RngStream& rng) { return sample_prondf_params(options.prondf_space, rng); };
      break;
    case ModelKind::ffnn:
      sampler = [&](RngStream& rng) { return sample_ffnn_params(options.ffnn_space, rng); };
      break;
    default:
      sampler = [&](RngStream& rng) {
        nlohmann::json p;
        p["networks"] = nlohmann::json::array();
        for (int k = 0; k < ds; ++k) p["networks"].push_back(sample_ffnn_params(options.ffnn_space, rng));
        p["use_raw_inputs_in_final"] = rng.uniform() < 0.5;
        return p;
      };
      break;
  }
  const TrialObjective objective = [&](const nlohmann::json& p) {
    return cross_validate(kind, data, apply_params(kind, p, cv), options.folds, options.seed);
  };
  return random_search(sampler, objective, options.budget, options.seed);
}

std::vector<ComparisonRow> compare_models(const MixedDataset& train, const MixedDataset& test,
                                          const ModelSettings& settings, std::span<const ModelKind> kinds) {
  std::vector<ComparisonRow> rows;
  for (ModelKind kind : kinds) {
    const auto fit = fit_model(kind, train, settings);
    const auto preds = fit.model->predict(test);
    rows.push_back({kind, evaluate(preds, test, settings.prondf.weights.gamma)});
  }
  return rows;
}

int farthest_source(const ProNdfModel& model, int realizations) {
  const auto dist = model.source_distances(realizations);
  if (dist.size() < 2) throw InvalidArgument("no LF source to drop");
  int best = 2;
  for (std::size_t s = 1; s < dist.size(); ++s) {
    if (dist[s] > dist[static_cast<std::size_t>(best - 1)]) best = static_cast<int>(s) + 1;
  }
  return best;
}

std::vector<AblationRow> run_ablation(const MixedDataset& train, const MixedDataset& test,
                                      const ModelSettings& settings, std::unique_ptr<ProNdfModel>* base) {
  if (train.schema().num_sources < 2) throw InvalidArgument("ablation needs at least one LF source");
  const double gamma = settings.prondf.weights.gamma;
  auto run = [&](const ModelSettings& s, const MixedDataset& data, std::unique_ptr<ProNdfModel>* keep) {
    auto model = std::make_unique<ProNdfModel>(ProNdfModel::train(data, s.prondf, s.train));
    MetricsReport m = evaluate(model->predict(test), test, gamma);
    if (keep != nullptr) *keep = std::move(model);
    return m;
  };

  std::vector<AblationRow> rows;
  std::unique_ptr<ProNdfModel> base_model;
  rows.push_back({"Base", "full model", run(settings, train, &base_model), std::nullopt});

  ModelSettings v1 = settings;
  v1.prondf.variant.interval_score_term = false;
  rows.push_back({"V1", "no interval-score term", run(v1, train, nullptr), std::nullopt});

  ModelSettings v2 = settings;
  v2.prondf.variant.probabilistic_block1 = false;
  rows.push_back({"V2", "deterministic Block 1", run(v2, train, nullptr), std::nullopt});

  ModelSettings v3 = settings;
  v3.prondf.variant.interval_score_term = false;
  v3.prondf.variant.probabilistic_output = false;
  rows.push_back({"V3", "no interval-score term, deterministic output", run(v3, train, nullptr), std::nullopt});

  const int drop = farthest_source(*base_model, settings.train.m_pred);
  rows.push_back({"V4", "drop the LF source farthest from HF in the fidelity manifold",
                  run(settings, train.without_source(drop), nullptr), drop});
  if (base != nullptr) *base = std::move(base_model);
  return rows;
}

}  // namespace mfusion
