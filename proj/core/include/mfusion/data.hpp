#pragma once

// Mixed-variable, multi-source data model.
//
// A row carries numeric inputs x, categorical level indices tc and a source
// index ts. Level and source indices are 1-based, matching the `source`
// column of the CSV format. Source 1 is the high-fidelity source.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mfusion {

struct CategoricalVariable {
  std::string name;
  std::vector<std::string> levels;  // first-appearance order

  std::size_t level_count() const { return levels.size(); }
  /// 1-based index of `level`, or 0 when the level is unknown.
  int find(const std::string& level) const;
};

struct Schema {
  std::vector<std::string> numeric_names;
  std::vector<CategoricalVariable> categoricals;
  int num_sources = 1;

  std::size_t dx() const { return numeric_names.size(); }
  std::size_t dt() const { return categoricals.size(); }
  /// Sum of level counts, the length of the categorical one-hot vector.
  std::size_t one_hot_width() const;

  /// Same numeric and categorical variables (names and level lists).
  bool same_variables(const Schema& other) const;
};

struct MixedInput {
  std::vector<double> x;
  std::vector<int> tc;
  int ts = 1;

  bool operator==(const MixedInput&) const = default;
};

struct Row {
  MixedInput input;
  double y = 0.0;

  bool operator==(const Row&) const = default;
};

/// Rows from one or more sources sharing a schema. Immutable once built.
class MixedDataset {
 public:
  MixedDataset() = default;
  /// Validates every row against `schema`; throws SchemaError on violation.
  MixedDataset(Schema schema, std::vector<Row> rows);

  const Schema& schema() const { return schema_; }
  std::span<const Row> rows() const { return rows_; }
  const Row& row(std::size_t i) const { return rows_[i]; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  /// Row count per source, length schema().num_sources.
  std::vector<std::size_t> source_counts() const;
  std::vector<double> outputs() const;

  /// Rows at `indices`, in the given order, with the same schema.
  MixedDataset subset(std::span<const std::size_t> indices) const;
  MixedDataset only_source(int source) const;
  /// Drops `source` and renumbers the remaining sources contiguously.
  MixedDataset without_source(int source) const;
  /// Re-expresses categorical levels in `target`'s level numbering.
  /// Throws SchemaError on a variable mismatch or an unseen level.
  MixedDataset conform_to(const Schema& target) const;

  bool operator==(const MixedDataset& other) const;

 private:
  Schema schema_;
  std::vector<Row> rows_;
};

/// One-hot encoding of categorical levels, blocks concatenated in variable order.
std::vector<double> one_hot_encode(std::span<const int> tc, const Schema& schema);

/// Concatenates per-source datasets; row i of `sources[k]` gets ts = k + 1.
/// Each input must carry a single source. Categorical level lists are merged
/// by name in first-appearance order.
MixedDataset augment_with_source(std::span<const MixedDataset> sources);

struct TrainTestSplit {
  MixedDataset train;
  MixedDataset test;
};

/// Per-source stratified split; each source keeps round(n_i * (1 - f)) rows
/// for training (clamped to [1, n_i - 1]).
TrainTestSplit split(const MixedDataset& dataset, double holdout_fraction, std::uint64_t seed);

/// Affine standardization of numeric inputs and the output, population std.
class Standardizer {
 public:
  Standardizer() = default;
  static Standardizer fit(const MixedDataset& dataset);

  MixedDataset apply(const MixedDataset& dataset) const;
  MixedDataset invert(const MixedDataset& dataset) const;

  std::vector<double> apply_x(std::span<const double> x) const;
  std::vector<double> invert_x(std::span<const double> x) const;
  double apply_y(double y) const { return (y - y_shift_) / y_scale_; }
  double invert_y(double y) const { return y * y_scale_ + y_shift_; }

  std::span<const double> x_shift() const { return x_shift_; }
  std::span<const double> x_scale() const { return x_scale_; }
  double y_shift() const { return y_shift_; }
  double y_scale() const { return y_scale_; }

  static Standardizer from_parts(std::vector<double> x_shift, std::vector<double> x_scale,
                                 double y_shift, double y_scale);

 private:
  std::vector<double> x_shift_, x_scale_;
  double y_shift_ = 0.0, y_scale_ = 1.0;
};

/// Mean and population standard deviation, with the degenerate-scale rule
/// (scale 1 for a constant column).
std::pair<double, double> shift_and_scale(std::span<const double> values);

MixedDataset load_csv(const std::filesystem::path& path);
MixedDataset parse_csv(const std::string& text);
void save_csv(const MixedDataset& dataset, const std::filesystem::path& path);
std::string to_csv(const MixedDataset& dataset);

}  // namespace mfusion
