#pragma once

// JSON persistence of fitted models and of the run configuration.

#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "mfusion/tuning.hpp"

namespace mfusion {

nlohmann::json schema_to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& j);
nlohmann::json standardizer_to_json(const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::json& j);

nlohmann::json prondf_config_to_json(const ProNdfConfig& c);
nlohmann::json ffnn_config_to_json(const FfnnConfig& c);

/// Serializes any of the four model kinds; the "kind" field names it.
nlohmann::json model_to_json(const Predictor& model);
std::unique_ptr<Predictor> model_from_json(const nlohmann::json& j);
ModelKind model_kind_of(const nlohmann::json& j);

void save_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

struct RunConfig {
  ModelKind model = ModelKind::prondf;
  std::uint64_t seed = 1;
  std::string train_csv;
  std::string test_csv;
  std::string out;
  ModelSettings settings;
  TuneOptions tune;

  /// Copies `seed` into every model and tuner seed.
  void propagate_seed();
};

/// Overlays `j` on `base`. Unknown keys anywhere raise SchemaError naming the
/// key path.
RunConfig parse_run_config(const nlohmann::json& j, RunConfig base = {});
nlohmann::json run_config_to_json(const RunConfig& c);

}  // namespace mfusion
