#include "mfusion/model_io.hpp"

#include <fstream>
#include <set>

#include "mfusion/error.hpp"

namespace mfusion {

using nlohmann::json;

namespace {

// Reads optional keys from one JSON object and rejects the ones nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw SchemaError("config: bad value for '" + name(key) + "': " + e.what());
    }
  }

  void range(const char* key, LogRange& out) {
    std::vector<double> v{out.lo, out.hi};
    get(key, v);
    if (v.size() != 2 || !(v[0] > 0.0) || v[1] < v[0]) {
      throw SchemaError("config: '" + name(key) + "' must be [lo, hi] with 0 < lo <= hi");
    }
    out = {v[0], v[1]};
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw SchemaError("config: unknown key '" + name(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_prondf(const json& j, const std::string& path, ProNdfConfig& c) {
  ObjectReader r(j, path);
  r.get("block3_hidden", c.block3_hidden);
  r.get("sigma_p", c.sigma_p);
  r.get("alpha1", c.weights.alpha1);
  r.get("alpha2", c.weights.alpha2);
  r.get("alpha3", c.weights.alpha3);
  r.get("gamma", c.weights.gamma);
  r.get("interval_score_term", c.variant.interval_score_term);
  r.get("probabilistic_block1", c.variant.probabilistic_block1);
  r.get("probabilistic_output", c.variant.probabilistic_output);
  r.finish();
}

void read_train(const json& j, const std::string& path, TrainConfig& c) {
  ObjectReader r(j, path);
  r.get("epochs", c.epochs);
  r.get("patience", c.patience);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("m_train", c.m_train);
  r.get("m_pred", c.m_pred);
  r.finish();
}

void read_lmgp(const json& j, const std::string& path, LmgpConfig& c) {
  ObjectReader r(j, path);
  r.get("n_starts", c.n_starts);
  r.get("max_iters", c.max_iters);
  r.get("learning_rate", c.learning_rate);
  r.finish();
}

void read_ffnn(const json& j, const std::string& path, FfnnConfig& c) {
  ObjectReader r(j, path);
  r.get("hidden", c.hidden);
  r.get("beta", c.beta);
  r.get("epochs", c.epochs);
  r.get("patience", c.patience);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.finish();
}

void read_smf(const json& j, const std::string& path, SmfConfig& c) {
  ObjectReader r(j, path);
  if (const json* n = r.child("network")) read_ffnn(*n, r.name("network"), c.network);
  r.get("use_raw_inputs_in_final", c.use_raw_inputs_in_final);
  r.finish();
}

void read_tune(const json& j, const std::string& path, TuneOptions& t) {
  ObjectReader r(j, path);
  r.get("budget", t.budget);
  r.get("folds", t.folds);
  auto optional_int = [&](const char* key, std::optional<int>& out) {
    if (const json* v = r.child(key)) {
      if (v->is_null()) {
        out.reset();
      } else if (v->is_number_integer()) {
        out = v->get<int>();
      } else {
        throw SchemaError("config: '" + r.name(key) + "' must be an integer or null");
      }
    }
  };
  optional_int("cv_m_train", t.cv_m_train);
  optional_int("cv_epochs", t.cv_epochs);
  optional_int("cv_patience", t.cv_patience);
  if (const json* s = r.child("prondf_space")) {
    ObjectReader q(*s, r.name("prondf_space"));
    auto& p = t.prondf_space;
    q.get("min_layers", p.min_layers);
    q.get("max_layers", p.max_layers);
    q.get("widths", p.widths);
    q.range("learning_rate", p.learning_rate);
    q.range("alpha1", p.alpha1);
    q.range("alpha2", p.alpha2);
    q.range("alpha3", p.alpha3);
    q.range("sigma_p", p.sigma_p);
    q.get("batch_sizes", p.batch_sizes);
    q.finish();
  }
  if (const json* s = r.child("ffnn_space")) {
    ObjectReader q(*s, r.name("ffnn_space"));
    auto& p = t.ffnn_space;
    q.get("min_layers", p.min_layers);
    q.get("max_layers", p.max_layers);
    q.get("widths", p.widths);
    q.range("learning_rate", p.learning_rate);
    q.range("beta", p.beta);
    q.get("batch_sizes", p.batch_sizes);
    q.finish();
  }
  r.finish();
}

json net_to_json(const RegressionNet& net) {
  json acts = json::array();
  for (auto a : net.shape.activations) acts.push_back(activation_name(a));
  return {{"widths", net.shape.widths}, {"activations", acts}, {"parameters", net.params}};
}

RegressionNet net_from_json(const json& j) {
  RegressionNet net;
  net.shape.widths = j.at("widths").get<std::vector<Eigen::Index>>();
  for (const auto& a : j.at("activations")) net.shape.activations.push_back(parse_activation(a.get<std::string>()));
  net.params = j.at("parameters").get<std::vector<double>>();
  if (net.shape.widths.size() != net.shape.activations.size() + 1 ||
      static_cast<Eigen::Index>(net.params.size()) != net.shape.parameter_count()) {
    throw SchemaError("network JSON has inconsistent shape");
  }
  return net;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
    rows.push_back(r);
  }
  return rows;
}

Matrix matrix_from_json(const json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto r = j[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(r.size()) != cols) throw SchemaError("matrix JSON row has the wrong length");
    for (Eigen::Index k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), k) = r[static_cast<std::size_t>(k)];
  }
  return m;
}

}  // namespace

json schema_to_json(const Schema& s) {
  json cats = json::array();
  for (const auto& c : s.categoricals) cats.push_back({{"name", c.name}, {"levels", c.levels}});
  return {{"numeric", s.numeric_names}, {"categoricals", cats}, {"num_sources", s.num_sources}};
}

Schema schema_from_json(const json& j) {
  Schema s;
  s.numeric_names = j.at("numeric").get<std::vector<std::string>>();
  for (const auto& c : j.at("categoricals")) {
    s.categoricals.push_back({c.at("name").get<std::string>(), c.at("levels").get<std::vector<std::string>>()});
  }
  s.num_sources = j.at("num_sources").get<int>();
  return s;
}

json standardizer_to_json(const Standardizer& s) {
  return {{"x_shift", std::vector<double>(s.x_shift().begin(), s.x_shift().end())},
          {"x_scale", std::vector<double>(s.x_scale().begin(), s.x_scale().end())},
          {"y_shift", s.y_shift()},
          {"y_scale", s.y_scale()}};
}

Standardizer standardizer_from_json(const json& j) {
  return Standardizer::from_parts(j.at("x_shift").get<std::vector<double>>(), j.at("x_scale").get<std::vector<double>>(),
                                  j.at("y_shift").get<double>(), j.at("y_scale").get<double>());
}

json prondf_config_to_json(const ProNdfConfig& c) {
  return {{"block3_hidden", c.block3_hidden},
          {"sigma_p", c.sigma_p},
          {"alpha1", c.weights.alpha1},
          {"alpha2", c.weights.alpha2},
          {"alpha3", c.weights.alpha3},
          {"gamma", c.weights.gamma},
          {"interval_score_term", c.variant.interval_score_term},
          {"probabilistic_block1", c.variant.probabilistic_block1},
          {"probabilistic_output", c.variant.probabilistic_output}};
}

json ffnn_config_to_json(const FfnnConfig& c) {
  return {{"hidden", c.hidden},   {"beta", c.beta},          {"epochs", c.epochs},
          {"patience", c.patience}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}};
}

json model_to_json(const Predictor& model) {
  if (const auto* m = dynamic_cast<const ProNdfModel*>(&model)) {
    return {{"kind", "prondf"},
            {"schema", schema_to_json(m->schema())},
            {"standardizer", standardizer_to_json(m->standardizer())},
            {"config", prondf_config_to_json(m->config())},
            {"m_pred", m->m_pred()},
            {"seed", m->seed()},
            {"observed_combos", m->observed_combos()},
            {"parameters", m->parameters()}};
  }
  if (const auto* m = dynamic_cast<const LmgpModel*>(&model)) {
    json rows = json::array();
    for (const auto& r : m->training_data().rows()) {
      rows.push_back({{"x", r.input.x}, {"tc", r.input.tc}, {"ts", r.input.ts}, {"y", r.y}});
    }
    const auto& p = m->parameters();
    return {{"kind", "lmgp"},
            {"schema", schema_to_json(m->schema())},
            {"standardizer", standardizer_to_json(m->standardizer())},
            {"training", rows},
            {"parameters",
             {{"omega", std::vector<double>(p.omega.data(), p.omega.data() + p.omega.size())},
              {"source_map", matrix_to_json(p.source_map)},
              {"categorical_map", matrix_to_json(p.categorical_map)},
              {"nugget", p.nugget}}}};
  }
  if (const auto* m = dynamic_cast<const FfnnFusionModel*>(&model)) {
    return {{"kind", "ffnn"},
            {"schema", schema_to_json(m->schema())},
            {"standardizer", standardizer_to_json(m->standardizer())},
            {"network", net_to_json(m->network())}};
  }
  if (const auto* m = dynamic_cast<const SmfModel*>(&model)) {
    json nets = json::array();
    for (const auto& n : m->networks()) nets.push_back(net_to_json(n));
    return {{"kind", "smf"},
            {"schema", schema_to_json(m->schema())},
            {"standardizer", standardizer_to_json(m->standardizer())},
            {"order", m->order()},
            {"use_raw_inputs_in_final", m->use_raw_inputs_in_final()},
            {"networks", nets}};
  }
  throw InvalidArgument("model_to_json: unsupported model type");
}

ModelKind model_kind_of(const json& j) {
  try {
    return parse_model_kind(j.at("kind").get<std::string>());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model JSON: ") + e.what());
  }
}

std::unique_ptr<Predictor> model_from_json(const json& j) {
  const ModelKind kind = model_kind_of(j);
  try {
    Schema schema = schema_from_json(j.at("schema"));
    Standardizer st = standardizer_from_json(j.at("standardizer"));
    switch (kind) {
      case ModelKind::prondf: {
        ProNdfConfig config;
        read_prondf(j.at("config"), "config", config);
        return std::make_unique<ProNdfModel>(ProNdfModel::from_parts(
            std::move(schema), std::move(st), std::move(config), j.at("parameters").get<std::vector<double>>(),
            j.at("m_pred").get<int>(), j.at("seed").get<std::uint64_t>(),
            j.at("observed_combos").get<std::vector<std::vector<int>>>()));
      }
      case ModelKind::lmgp: {
        std::vector<Row> rows;
        for (const auto& r : j.at("training")) {
          Row row;
          row.input.x = r.at("x").get<std::vector<double>>();
          row.input.tc = r.at("tc").get<std::vector<int>>();
          row.input.ts = r.at("ts").get<int>();
          row.y = r.at("y").get<double>();
          rows.push_back(std::move(row));
        }
        const auto& pj = j.at("parameters");
        LmgpParameters p;
        const auto omega = pj.at("omega").get<std::vector<double>>();
        p.omega = Eigen::Map<const Vector>(omega.data(), static_cast<Eigen::Index>(omega.size()));
        p.source_map = matrix_from_json(pj.at("source_map"), kLatentDim);
        p.categorical_map = matrix_from_json(pj.at("categorical_map"), kLatentDim);
        p.nugget = pj.at("nugget").get<double>();
        return std::make_unique<LmgpModel>(
            LmgpModel::from_parameters(MixedDataset(std::move(schema), std::move(rows)), st, std::move(p)));
      }
      case ModelKind::ffnn:
        return std::make_unique<FfnnFusionModel>(
            FfnnFusionModel::from_parts(std::move(schema), std::move(st), net_from_json(j.at("network"))));
      case ModelKind::smf: {
        std::vector<RegressionNet> nets;
        for (const auto& n : j.at("networks")) nets.push_back(net_from_json(n));
        return std::make_unique<SmfModel>(SmfModel::from_parts(std::move(schema), std::move(st),
                                                               j.at("order").get<std::vector<int>>(), std::move(nets),
                                                               j.at("use_raw_inputs_in_final").get<bool>()));
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model JSON: ") + e.what());
  }
  throw SchemaError("model JSON: unsupported kind");
}

void save_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void RunConfig::propagate_seed() {
  settings.train.seed = seed;
  settings.lmgp.seed = seed;
  settings.ffnn.seed = seed;
  settings.smf.network.seed = seed;
  for (auto& n : settings.smf.per_network) n.seed = seed;
  tune.seed = seed;
}

RunConfig parse_run_config(const json& j, RunConfig c) {
  ObjectReader r(j, "");
  if (const json* m = r.child("model")) {
    if (!m->is_string()) throw SchemaError("config: 'model' must be a string");
    c.model = parse_model_kind(m->get<std::string>());
  }
  r.get("seed", c.seed);
  r.get("train_csv", c.train_csv);
  r.get("test_csv", c.test_csv);
  r.get("out", c.out);
  if (const json* s = r.child("prondf")) read_prondf(*s, "prondf", c.settings.prondf);
  if (const json* s = r.child("train")) read_train(*s, "train", c.settings.train);
  if (const json* s = r.child("lmgp")) read_lmgp(*s, "lmgp", c.settings.lmgp);
  if (const json* s = r.child("ffnn")) read_ffnn(*s, "ffnn", c.settings.ffnn);
  if (const json* s = r.child("smf")) read_smf(*s, "smf", c.settings.smf);
  if (const json* s = r.child("tune")) read_tune(*s, "tune", c.tune);
  r.finish();
  c.propagate_seed();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  const auto& s = c.settings;
  const auto& t = c.tune;
  auto opt = [](const std::optional<int>& v) { return v ? json(*v) : json(nullptr); };
  auto range = [](const LogRange& r) { return json::array({r.lo, r.hi}); };
  return {
      {"model", model_kind_name(c.model)},
      {"seed", c.seed},
      {"train_csv", c.train_csv},
      {"test_csv", c.test_csv},
      {"out", c.out},
      {"prondf", prondf_config_to_json(s.prondf)},
      {"train",
       {{"epochs", s.train.epochs},
        {"patience", s.train.patience},
        {"batch_size", s.train.batch_size},
        {"learning_rate", s.train.learning_rate},
        {"m_train", s.train.m_train},
        {"m_pred", s.train.m_pred}}},
      {"lmgp", {{"n_starts", s.lmgp.n_starts}, {"max_iters", s.lmgp.max_iters}, {"learning_rate", s.lmgp.learning_rate}}},
      {"ffnn", ffnn_config_to_json(s.ffnn)},
      {"smf", {{"network", ffnn_config_to_json(s.smf.network)}, {"use_raw_inputs_in_final", s.smf.use_raw_inputs_in_final}}},
      {"tune",
       {{"budget", t.budget},
        {"folds", t.folds},
        {"cv_m_train", opt(t.cv_m_train)},
        {"cv_epochs", opt(t.cv_epochs)},
        {"cv_patience", opt(t.cv_patience)},
        {"prondf_space",
         {{"min_layers", t.prondf_space.min_layers},
          {"max_layers", t.prondf_space.max_layers},
          {"widths", t.prondf_space.widths},
          {"learning_rate", range(t.prondf_space.learning_rate)},
          {"alpha1", range(t.prondf_space.alpha1)},
          {"alpha2", range(t.prondf_space.alpha2)},
          {"alpha3", range(t.prondf_space.alpha3)},
          {"sigma_p", range(t.prondf_space.sigma_p)},
          {"batch_sizes", t.prondf_space.batch_sizes}}},
        {"ffnn_space",
         {{"min_layers", t.ffnn_space.min_layers},
          {"max_layers", t.ffnn_space.max_layers},
          {"widths", t.ffnn_space.widths},
          {"learning_rate", range(t.ffnn_space.learning_rate)},
          {"beta", range(t.ffnn_space.beta)},
          {"batch_sizes", t.ffnn_space.batch_sizes}}}}},
  };
}

}  // namespace mfusion
