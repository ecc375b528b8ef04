#include "mfusion/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "mfusion/error.hpp"
#include "mfusion/rng.hpp"

namespace mfusion {

int CategoricalVariable::find(const std::string& level) const {
  const auto it = std::find(levels.begin(), levels.end(), level);
  return it == levels.end() ? 0 : static_cast<int>(it - levels.begin()) + 1;
}

std::size_t Schema::one_hot_width() const {
  std::size_t width = 0;
  for (const auto& var : categoricals) width += var.level_count();
  return width;
}

bool Schema::same_variables(const Schema& other) const {
  if (numeric_names != other.numeric_names || categoricals.size() != other.categoricals.size()) {
    return false;
  }
  for (std::size_t i = 0; i < categoricals.size(); ++i) {
    if (categoricals[i].name != other.categoricals[i].name ||
        categoricals[i].levels != other.categoricals[i].levels) {
      return false;
    }
  }
  return true;
}

MixedDataset::MixedDataset(Schema schema, std::vector<Row> rows)
    : schema_(std::move(schema)), rows_(std::move(rows)) {
  if (schema_.num_sources < 1) throw SchemaError("schema must declare at least one source");
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& in = rows_[i].input;
    if (in.x.size() != schema_.dx() || in.tc.size() != schema_.dt()) {
      throw SchemaError("row " + std::to_string(i) + " does not match the schema dimensions");
    }
    for (std::size_t v = 0; v < in.tc.size(); ++v) {
      const int level = in.tc[v];
      if (level < 1 || level > static_cast<int>(schema_.categoricals[v].level_count())) {
        throw SchemaError("row " + std::to_string(i) + ": level " + std::to_string(level) +
                          " out of range for " + schema_.categoricals[v].name);
      }
    }
    if (in.ts < 1 || in.ts > schema_.num_sources) {
      throw SchemaError("row " + std::to_string(i) + ": source " + std::to_string(in.ts) +
                        " out of range");
    }
  }
}

std::vector<std::size_t> MixedDataset::source_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(schema_.num_sources), 0);
  for (const auto& r : rows_) ++counts[static_cast<std::size_t>(r.input.ts - 1)];
  return counts;
}

std::vector<double> MixedDataset::outputs() const {
  std::vector<double> y(rows_.size());
  std::transform(rows_.begin(), rows_.end(), y.begin(), [](const Row& r) { return r.y; });
  return y;
}

MixedDataset MixedDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<Row> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= rows_.size()) throw InvalidArgument("subset index out of range");
    picked.push_back(rows_[i]);
  }
  return MixedDataset(schema_, std::move(picked));
}

MixedDataset MixedDataset::only_source(int source) const {
  if (source < 1 || source > schema_.num_sources) throw InvalidArgument("no such source");
  std::vector<Row> picked;
  for (const auto& r : rows_) {
    if (r.input.ts == source) picked.push_back(r);
  }
  return MixedDataset(schema_, std::move(picked));
}

MixedDataset MixedDataset::without_source(int source) const {
  if (source < 1 || source > schema_.num_sources) throw InvalidArgument("no such source");
  if (schema_.num_sources == 1) throw InvalidArgument("cannot drop the only source");
  Schema reduced = schema_;
  reduced.num_sources -= 1;
  std::vector<Row> kept;
  for (auto r : rows_) {
    if (r.input.ts == source) continue;
    if (r.input.ts > source) r.input.ts -= 1;
    kept.push_back(std::move(r));
  }
  return MixedDataset(std::move(reduced), std::move(kept));
}

MixedDataset MixedDataset::conform_to(const Schema& target) const {
  if (schema_.numeric_names != target.numeric_names) {
    throw SchemaError("numeric columns differ from the model schema");
  }
  if (schema_.dt() != target.dt()) throw SchemaError("categorical columns differ from the model schema");
  std::vector<std::vector<int>> remap(schema_.dt());
  for (std::size_t v = 0; v < schema_.dt(); ++v) {
    const auto& mine = schema_.categoricals[v];
    const auto& theirs = target.categoricals[v];
    if (mine.name != theirs.name) throw SchemaError("categorical column " + mine.name + " not in model schema");
    for (const auto& level : mine.levels) {
      const int idx = theirs.find(level);
      // Unused levels are harmless; only levels present in rows are checked below.
      remap[v].push_back(idx);
    }
  }
  if (schema_.num_sources > target.num_sources) {
    for (const auto& r : rows_) {
      if (r.input.ts > target.num_sources) {
        throw SchemaError("source " + std::to_string(r.input.ts) + " unseen by the model");
      }
    }
  }
  std::vector<Row> out;
  out.reserve(rows_.size());
  for (auto r : rows_) {
    for (std::size_t v = 0; v < r.input.tc.size(); ++v) {
      const int mapped = remap[v][static_cast<std::size_t>(r.input.tc[v] - 1)];
      if (mapped == 0) {
        throw SchemaError("unseen level '" +
                          schema_.categoricals[v].levels[static_cast<std::size_t>(r.input.tc[v] - 1)] +
                          "' for " + schema_.categoricals[v].name);
      }
      r.input.tc[v] = mapped;
    }
    out.push_back(std::move(r));
  }
  return MixedDataset(target, std::move(out));
}

bool MixedDataset::operator==(const MixedDataset& other) const {
  return schema_.same_variables(other.schema_) && schema_.num_sources == other.schema_.num_sources &&
         rows_ == other.rows_;
}

std::vector<double> one_hot_encode(std::span<const int> tc, const Schema& schema) {
  if (tc.size() != schema.dt()) throw SchemaError("categorical vector length does not match schema");
  std::vector<double> zeta(schema.one_hot_width(), 0.0);
  std::size_t offset = 0;
  for (std::size_t v = 0; v < tc.size(); ++v) {
    const auto levels = schema.categoricals[v].level_count();
    if (tc[v] < 1 || tc[v] > static_cast<int>(levels)) {
      throw SchemaError("unknown level " + std::to_string(tc[v]) + " for " + schema.categoricals[v].name);
    }
    zeta[offset + static_cast<std::size_t>(tc[v] - 1)] = 1.0;
    offset += levels;
  }
  return zeta;
}

MixedDataset augment_with_source(std::span<const MixedDataset> sources) {
  if (sources.empty()) throw InvalidArgument("augment_with_source needs at least one dataset");
  Schema merged = sources.front().schema();
  for (const auto& ds : sources) {
    const Schema& s = ds.schema();
    if (s.numeric_names != merged.numeric_names) {
      const std::size_t n = std::max(s.dx(), merged.dx());
      for (std::size_t i = 0; i < n; ++i) {
        const std::string a = i < merged.dx() ? merged.numeric_names[i] : "<missing>";
        const std::string b = i < s.dx() ? s.numeric_names[i] : "<missing>";
        if (a != b) throw SchemaError("schema mismatch in numeric column '" + (a == "<missing>" ? b : a) + "'");
      }
    }
    if (s.dt() != merged.dt()) throw SchemaError("schema mismatch in categorical column count");
    for (std::size_t v = 0; v < s.dt(); ++v) {
      if (s.categoricals[v].name != merged.categoricals[v].name) {
        throw SchemaError("schema mismatch in categorical column '" + s.categoricals[v].name + "'");
      }
      for (const auto& level : s.categoricals[v].levels) {
        if (merged.categoricals[v].find(level) == 0) merged.categoricals[v].levels.push_back(level);
      }
    }
  }
  merged.num_sources = static_cast<int>(sources.size());

  std::vector<Row> rows;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const Schema& s = sources[k].schema();
    for (auto r : sources[k].rows()) {
      for (std::size_t v = 0; v < r.input.tc.size(); ++v) {
        const auto& name = s.categoricals[v].levels[static_cast<std::size_t>(r.input.tc[v] - 1)];
        r.input.tc[v] = merged.categoricals[v].find(name);
      }
      r.input.ts = static_cast<int>(k) + 1;
      rows.push_back(std::move(r));
    }
  }
  return MixedDataset(std::move(merged), std::move(rows));
}

TrainTestSplit split(const MixedDataset& dataset, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InvalidArgument("holdout fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (int s = 1; s <= dataset.schema().num_sources; ++s) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.row(i).input.ts == s) members.push_back(i);
    }
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw InvalidArgument("source " + std::to_string(s) + " has fewer than 2 rows and cannot be split");
    }
    const auto n = static_cast<double>(members.size());
    auto n_train = static_cast<std::size_t>(std::llround(n * (1.0 - holdout_fraction)));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    RngStream rng(seed, "split", static_cast<std::uint64_t>(s));
    rng.shuffle(std::span<std::size_t>(members));
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {dataset.subset(train_idx), dataset.subset(test_idx)};
}

std::pair<double, double> shift_and_scale(std::span<const double> values) {
  if (values.empty()) return {0.0, 1.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return {mean, 1.0};
  return {mean, sd};
}

Standardizer Standardizer::fit(const MixedDataset& dataset) {
  Standardizer st;
  const std::size_t dx = dataset.schema().dx();
  std::vector<double> column(dataset.size());
  for (std::size_t j = 0; j < dx; ++j) {
    for (std::size_t i = 0; i < dataset.size(); ++i) column[i] = dataset.row(i).input.x[j];
    const auto [shift, scale] = shift_and_scale(column);
    st.x_shift_.push_back(shift);
    st.x_scale_.push_back(scale);
  }
  const auto y = dataset.outputs();
  std::tie(st.y_shift_, st.y_scale_) = shift_and_scale(y);
  return st;
}

Standardizer Standardizer::from_parts(std::vector<double> x_shift, std::vector<double> x_scale,
                                      double y_shift, double y_scale) {
  if (x_shift.size() != x_scale.size()) throw SchemaError("standardizer shift/scale length mismatch");
  for (double s : x_scale) {
    if (!(s > 0.0)) throw SchemaError("standardizer scale must be positive");
  }
  if (!(y_scale > 0.0)) throw SchemaError("standardizer scale must be positive");
  Standardizer st;
  st.x_shift_ = std::move(x_shift);
  st.x_scale_ = std::move(x_scale);
  st.y_shift_ = y_shift;
  st.y_scale_ = y_scale;
  return st;
}

std::vector<double> Standardizer::apply_x(std::span<const double> x) const {
  if (x.size() != x_shift_.size()) throw SchemaError("standardizer dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - x_shift_[j]) / x_scale_[j];
  return out;
}

std::vector<double> Standardizer::invert_x(std::span<const double> x) const {
  if (x.size() != x_shift_.size()) throw SchemaError("standardizer dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] * x_scale_[j] + x_shift_[j];
  return out;
}

MixedDataset Standardizer::apply(const MixedDataset& dataset) const {
  std::vector<Row> rows(dataset.rows().begin(), dataset.rows().end());
  for (auto& r : rows) {
    r.input.x = apply_x(r.input.x);
    r.y = apply_y(r.y);
  }
  return MixedDataset(dataset.schema(), std::move(rows));
}

MixedDataset Standardizer::invert(const MixedDataset& dataset) const {
  std::vector<Row> rows(dataset.rows().begin(), dataset.rows().end());
  for (auto& r : rows) {
    r.input.x = invert_x(r.input.x);
    r.y = invert_y(r.y);
  }
  return MixedDataset(dataset.schema(), std::move(rows));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

bool indexed_name(const std::string& name, char prefix, int& index) {
  if (name.size() < 2 || name[0] != prefix) return false;
  const auto* first = name.data() + 1;
  const auto* last = name.data() + name.size();
  const auto [ptr, ec] = std::from_chars(first, last, index);
  return ec == std::errc() && ptr == last && index >= 1;
}

double parse_real(const std::string& text, std::size_t line, const std::string& column) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw SchemaError("line " + std::to_string(line) + ": non-numeric value '" + text + "' in column " + column);
  }
  return value;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MixedDataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw SchemaError("CSV has no header row");

  std::vector<std::pair<int, std::size_t>> numeric_cols, categorical_cols;
  std::ptrdiff_t source_col = -1, y_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    int index = 0;
    if (header[c] == "source") {
      source_col = static_cast<std::ptrdiff_t>(c);
    } else if (header[c] == "y") {
      y_col = static_cast<std::ptrdiff_t>(c);
    } else if (indexed_name(header[c], 'x', index)) {
      numeric_cols.emplace_back(index, c);
    } else if (indexed_name(header[c], 't', index)) {
      categorical_cols.emplace_back(index, c);
    } else {
      throw SchemaError("unrecognized CSV column '" + header[c] + "'");
    }
  }
  if (source_col < 0) throw SchemaError("CSV is missing the required 'source' column");
  if (y_col < 0) throw SchemaError("CSV is missing the required 'y' column");
  std::sort(numeric_cols.begin(), numeric_cols.end());
  std::sort(categorical_cols.begin(), categorical_cols.end());

  Schema schema;
  for (const auto& [idx, c] : numeric_cols) schema.numeric_names.push_back(header[c]);
  for (const auto& [idx, c] : categorical_cols) schema.categoricals.push_back({header[c], {}});

  std::vector<Row> rows;
  int max_source = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw SchemaError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(fields.size()));
    }
    Row row;
    for (const auto& [idx, c] : numeric_cols) row.input.x.push_back(parse_real(fields[c], line_no, header[c]));
    for (std::size_t v = 0; v < categorical_cols.size(); ++v) {
      const auto& level = fields[categorical_cols[v].second];
      if (level.empty()) throw SchemaError("line " + std::to_string(line_no) + ": empty categorical level");
      auto& var = schema.categoricals[v];
      int id = var.find(level);
      if (id == 0) {
        var.levels.push_back(level);
        id = static_cast<int>(var.levels.size());
      }
      row.input.tc.push_back(id);
    }
    const auto& src = fields[static_cast<std::size_t>(source_col)];
    int source = 0;
    const auto [ptr, ec] = std::from_chars(src.data(), src.data() + src.size(), source);
    if (ec != std::errc() || ptr != src.data() + src.size() || source < 1) {
      throw SchemaError("line " + std::to_string(line_no) + ": source must be an integer >= 1, got '" + src + "'");
    }
    row.input.ts = source;
    max_source = std::max(max_source, source);
    row.y = parse_real(fields[static_cast<std::size_t>(y_col)], line_no, "y");
    rows.push_back(std::move(row));
  }
  schema.num_sources = max_source;
  return MixedDataset(std::move(schema), std::move(rows));
}

MixedDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

std::string to_csv(const MixedDataset& dataset) {
  const Schema& schema = dataset.schema();
  std::string out;
  for (const auto& name : schema.numeric_names) out += name + ",";
  for (const auto& var : schema.categoricals) out += var.name + ",";
  out += "source,y\n";
  for (const auto& r : dataset.rows()) {
    for (double v : r.input.x) out += format_real(v) + ",";
    for (std::size_t v = 0; v < r.input.tc.size(); ++v) {
      out += schema.categoricals[v].levels[static_cast<std::size_t>(r.input.tc[v] - 1)] + ",";
    }
    out += std::to_string(r.input.ts) + "," + format_real(r.y) + "\n";
  }
  return out;
}

void save_csv(const MixedDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + path.string());
  out << to_csv(dataset);
}

}  // namespace mfusion
