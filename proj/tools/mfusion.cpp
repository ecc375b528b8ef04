// mfusion: batch front end for benchmark generation, training, evaluation,
// tuning, manifold export, model comparison and the Pro-NDF ablation grid.
//
// Source 1 is always the high-fidelity source in every CSV this tool reads or
// writes; sources 2..ds are low-fidelity.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfusion/error.hpp"
#include "mfusion/model_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfusion;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by the commands that build a RunConfig.
struct CommonOptions {
  std::string config;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::string train;
  std::string test;
  std::string out;
  std::vector<std::string> params;
  std::optional<int> epochs;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_test) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--model", o.model, "Model kind: prondf, lmgp, ffnn or smf");
  cmd->add_option("--seed", o.seed, "Seed for every random stream");
  cmd->add_option("--train", o.train, "Training CSV");
  if (needs_test) cmd->add_option("--test", o.test, "Test CSV");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--epochs", o.epochs, "Override training epochs for every network");
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what + " path");
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

// Applies a tuned best.json to the matching model kind; other kinds ignore it.
void apply_best(const std::string& path, ModelSettings& settings, std::set<ModelKind>* tuned = nullptr) {
  const json best = load_json(path);
  if (!best.contains("model") || !best.contains("params")) throw SchemaError(path + ": expected {model, params}");
  const ModelKind kind = parse_model_kind(best.at("model").get<std::string>());
  settings = apply_params(kind, best.at("params"), settings);
  if (tuned != nullptr) tuned->insert(kind);
}

RunConfig build_config(const CommonOptions& o, bool needs_train, bool needs_test) {
  RunConfig c;
  if (!o.config.empty()) c = parse_run_config(load_json(o.config));
  if (!o.model.empty()) c.model = parse_model_kind(o.model);
  if (o.seed) c.seed = *o.seed;
  if (!o.train.empty()) c.train_csv = o.train;
  if (!o.test.empty()) c.test_csv = o.test;
  if (!o.out.empty()) c.out = o.out;
  if (o.epochs) {
    c.settings.train.epochs = *o.epochs;
    c.settings.ffnn.epochs = *o.epochs;
    c.settings.smf.network.epochs = *o.epochs;
  }
  c.propagate_seed();
  // Every path is checked before any work starts.
  if (needs_train) require_file(c.train_csv, "training CSV");
  if (needs_test) require_file(c.test_csv, "test CSV");
  for (const auto& p : o.params) require_file(p, "parameter file");
  if (c.out.empty()) throw UsageError("missing --out directory");
  for (const auto& p : o.params) apply_best(p, c.settings);
  return c;
}

fs::path output_dir(const std::string& out) {
  if (out.empty()) throw UsageError("missing --out directory");
  fs::create_directories(out);
  return fs::path(out);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw SchemaError("cannot write " + path.string());
  f << text;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json metrics_json(const MetricsReport& m) {
  return {{"mse", m.mse}, {"mean_is", optional_json(m.mean_is)}, {"coverage95", optional_json(m.coverage95)},
          {"n_test", m.n_test}};
}

std::unique_ptr<Predictor> load_model_dir(const std::string& dir) {
  const fs::path file = fs::is_directory(dir) ? fs::path(dir) / "model.json" : fs::path(dir);
  require_file(file.string(), "model file");
  return model_from_json(load_json(file));
}

// --- commands ---------------------------------------------------------------

void cmd_genbench(const std::string& name, std::uint64_t seed, const std::string& out, std::size_t test_count,
                  std::optional<double> noise, std::vector<double> rational_domain) {
  AnalyticProblem problem = make_problem(name);
  if (!rational_domain.empty()) {
    if (name != "rational") throw UsageError("--rational-domain only applies to the rational problem");
    problem = rational_problem({rational_domain[0], rational_domain[1]});
  }
  GenerateOptions options;
  options.test_count = test_count;
  options.noise_variance = noise;
  const GeneratedData data = generate(problem, seed, options);
  const fs::path dir = output_dir(out);
  save_csv(data.train, dir / "train.csv");
  save_csv(data.test, dir / "test.csv");
  json domain = json::array();
  for (std::size_t i = 0; i < problem.dim(); ++i) {
    domain.push_back({{"name", problem.variables[i]}, {"lo", problem.domain[i].lo}, {"hi", problem.domain[i].hi}});
  }
  save_json({{"name", problem.name},
             {"domain", domain},
             {"seed", seed},
             {"sizes", problem.sample_sizes},
             {"noise_variance", noise.value_or(problem.noise_variance)},
             {"test_count", test_count}},
            dir / "problem.json");
}

void cmd_fit(const RunConfig& c) {
  const MixedDataset train = load_csv(c.train_csv);
  const FitResult fit = fit_model(c.model, train, c.settings);
  const fs::path dir = output_dir(c.out);
  save_json(model_to_json(*fit.model), dir / "model.json");
  std::string csv = "network,epoch,loss\n";
  for (std::size_t k = 0; k < fit.histories.size(); ++k) {
    const auto& h = fit.histories[k];
    for (std::size_t e = 0; e < h.loss.size(); ++e) {
      csv += std::to_string(k) + "," + std::to_string(e) + "," + format_double(h.loss[e]) + "\n";
    }
  }
  write_text(dir / "history.csv", csv);
}

void cmd_eval(const std::string& model_dir, const std::string& test_csv, const std::string& out, double gamma) {
  require_file(test_csv, "test CSV");
  const auto model = load_model_dir(model_dir);
  const MixedDataset test = load_csv(test_csv);
  const MetricsReport m = evaluate(model->predict(test), test, gamma);
  save_json(metrics_json(m), output_dir(out) / "metrics.json");
}

void cmd_tune(const RunConfig& c, std::optional<int> budget, std::optional<int> folds) {
  TuneOptions options = c.tune;
  if (budget) options.budget = *budget;
  if (folds) options.folds = *folds;
  const MixedDataset train = load_csv(c.train_csv);
  const SearchResult result = tune(c.model, train, c.settings, options);
  json trials = json::array();
  for (const auto& t : result.trials) {
    json row = {{"index", t.index}, {"params", t.params}, {"cv_mse", optional_json(t.cv_mse)}};
    if (!t.error.empty()) row["error"] = t.error;
    trials.push_back(row);
  }
  const fs::path dir = output_dir(c.out);
  save_json(trials, dir / "trials.json");
  const Trial& best = result.trials[result.best];
  save_json({{"model", model_kind_name(c.model)}, {"index", best.index}, {"params", best.params},
             {"cv_mse", *best.cv_mse}},
            dir / "best.json");
}

void cmd_manifold(const std::string& model_dir, std::optional<int> realizations, const std::string& out) {
  const auto model = load_model_dir(model_dir);
  std::string fid = "source,realization,z1,z2\n";
  std::string cat = "combo,z1,z2\n";
  if (const auto* p = dynamic_cast<const ProNdfModel*>(model.get())) {
    for (const auto& pt : p->fidelity_manifold(realizations.value_or(p->m_pred()))) {
      fid += std::to_string(pt.source) + "," + std::to_string(pt.realization) + "," + format_double(pt.z1) + "," +
             format_double(pt.z2) + "\n";
    }
    if (p->schema().dt() > 0) {
      for (const auto& pt : p->categorical_manifold()) {
        cat += pt.combo + "," + format_double(pt.z1) + "," + format_double(pt.z2) + "\n";
      }
    }
  } else if (const auto* g = dynamic_cast<const LmgpModel*>(model.get())) {
    // A deterministic map: one realization per source and per observed combination.
    const Matrix& zs = g->source_points();
    for (Eigen::Index s = 0; s < zs.rows(); ++s) {
      fid += std::to_string(s + 1) + ",0," + format_double(zs(s, 0)) + "," + format_double(zs(s, 1)) + "\n";
    }
    const Schema& schema = g->schema();
    std::set<std::vector<int>> combos;
    for (const auto& r : g->training_data().rows()) combos.insert(r.input.tc);
    if (schema.dt() > 0) {
      for (const auto& tc : combos) {
        const Vector z = latent_map(one_hot_encode(tc, schema), g->parameters().categorical_map);
        std::string label;
        for (std::size_t v = 0; v < tc.size(); ++v) {
          if (v > 0) label += "|";
          label += schema.categoricals[v].levels[static_cast<std::size_t>(tc[v] - 1)];
        }
        cat += label + "," + format_double(z(0)) + "," + format_double(z(1)) + "\n";
      }
    }
  } else {
    throw UsageError("manifold export needs a prondf or lmgp model");
  }
  const fs::path dir = output_dir(out);
  write_text(dir / "manifold_fidelity.csv", fid);
  write_text(dir / "manifold_categorical.csv", cat);
}

void cmd_compare(const RunConfig& c, const std::vector<std::string>& model_names) {
  std::vector<ModelKind> kinds;
  if (model_names.empty()) {
    kinds = {ModelKind::prondf, ModelKind::lmgp, ModelKind::ffnn, ModelKind::smf};
  } else {
    for (const auto& n : model_names) kinds.push_back(parse_model_kind(n));
  }
  const MixedDataset train = load_csv(c.train_csv);
  const MixedDataset test = load_csv(c.test_csv);
  const auto rows = compare_models(train, test, c.settings, kinds);
  json models = json::array();
  for (const auto& r : rows) {
    json m = metrics_json(r.metrics);
    m["model"] = model_kind_name(r.kind);
    models.push_back(m);
  }
  save_json({{"seed", c.seed}, {"models", models}}, output_dir(c.out) / "comparison.json");
}

void cmd_ablate(const RunConfig& c) {
  const MixedDataset train = load_csv(c.train_csv);
  const MixedDataset test = load_csv(c.test_csv);
  const auto rows = run_ablation(train, test, c.settings);
  json versions = json::array();
  for (const auto& r : rows) {
    json v = metrics_json(r.metrics);
    v["version"] = r.name;
    v["description"] = r.description;
    v["dropped_source"] = r.dropped_source ? json(*r.dropped_source) : json(nullptr);
    versions.push_back(v);
  }
  save_json({{"seed", c.seed}, {"versions", versions}}, output_dir(c.out) / "ablation.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-fidelity data fusion: Pro-NDF, LMGP and neural baselines"};
  app.require_subcommand(1);
  std::function<void()> action;

  std::string problem;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  std::size_t test_count = 10000;
  std::optional<double> noise;
  std::vector<double> rational_domain;
  auto* gen = app.add_subcommand("genbench", "Write train.csv, test.csv and problem.json for a test problem");
  gen->add_option("--problem", problem, "rational, wingweight or borehole")->required();
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--test-count", test_count, "Number of Sobol test points");
  gen->add_option("--noise-variance", noise, "Override the problem's noise variance");
  gen->add_option("--rational-domain", rational_domain, "Rational input interval: LO HI")->expected(2);
  gen->callback([&] {
    action = [&] { cmd_genbench(problem, gen_seed, gen_out, test_count, noise, rational_domain); };
  });

  CommonOptions fit_o;
  auto* fit = app.add_subcommand("fit", "Train a model; writes model.json and history.csv");
  add_common(fit, fit_o, false);
  fit->add_option("--params", fit_o.params, "Tuned best.json files to apply");
  fit->callback([&] { action = [&] { cmd_fit(build_config(fit_o, true, false)); }; });

  std::string eval_model, eval_test, eval_out;
  double gamma = 0.05;
  auto* ev = app.add_subcommand("eval", "Score a fitted model on a test CSV; writes metrics.json");
  ev->add_option("--model-dir", eval_model, "Directory holding model.json, or the file itself")->required();
  ev->add_option("--test", eval_test, "Test CSV")->required();
  ev->add_option("--out", eval_out, "Output directory")->required();
  ev->add_option("--gamma", gamma, "Interval-score significance level");
  ev->callback([&] { action = [&] { cmd_eval(eval_model, eval_test, eval_out, gamma); }; });

  CommonOptions tune_o;
  std::optional<int> budget, folds;
  auto* tn = app.add_subcommand("tune", "Random search scored by k-fold CV; writes trials.json and best.json");
  add_common(tn, tune_o, false);
  tn->add_option("--budget", budget, "Number of trials");
  tn->add_option("--folds", folds, "Cross-validation folds");
  tn->callback([&] { action = [&] { cmd_tune(build_config(tune_o, true, false), budget, folds); }; });

  std::string man_model, man_out;
  std::optional<int> realizations;
  auto* man = app.add_subcommand("manifold", "Export latent manifolds to CSV");
  man->add_option("--model-dir", man_model, "Directory holding model.json, or the file itself")->required();
  man->add_option("--realizations", realizations, "Block-1 realizations per source (Pro-NDF)");
  man->add_option("--out", man_out, "Output directory")->required();
  man->callback([&] { action = [&] { cmd_manifold(man_model, realizations, man_out); }; });

  CommonOptions cmp_o;
  std::vector<std::string> cmp_models;
  auto* cmp = app.add_subcommand("compare", "Fit and score several model kinds; writes comparison.json");
  add_common(cmp, cmp_o, true);
  cmp->add_option("--models", cmp_models, "Model kinds (default: all four)");
  cmp->add_option("--params", cmp_o.params, "Tuned best.json files, one per model kind");
  cmp->callback([&] { action = [&] { cmd_compare(build_config(cmp_o, true, true), cmp_models); }; });

  CommonOptions abl_o;
  auto* abl = app.add_subcommand("ablate", "Run the Base/V1..V4 Pro-NDF ablation; writes ablation.json");
  add_common(abl, abl_o, true);
  abl->add_option("--params", abl_o.params, "Tuned Pro-NDF best.json");
  abl->callback([&] { action = [&] { cmd_ablate(build_config(abl_o, true, true)); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    action();
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
