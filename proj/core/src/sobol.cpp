#include "mfusion/sobol.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "mfusion/error.hpp"

namespace mfusion {

namespace {
constexpr int kBits = 32;
}

const std::vector<DirectionRow>& default_direction_table() {
  static const std::vector<DirectionRow> table = {
      {2, 1, 0, {1}},
      {3, 2, 1, {1, 3}},
      {4, 3, 1, {1, 3, 1}},
      {5, 3, 2, {1, 1, 1}},
      {6, 4, 1, {1, 1, 3, 3}},
      {7, 4, 4, {1, 3, 5, 13}},
      {8, 5, 2, {1, 1, 5, 5, 17}},
      {9, 5, 4, {1, 1, 5, 5, 5}},
      {10, 5, 7, {1, 1, 7, 11, 19}},
  };
  return table;
}

std::vector<DirectionRow> parse_direction_table(const std::string& text) {
  std::vector<DirectionRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string first;
    if (!(fields >> first) || first == "d") continue;
    DirectionRow row;
    try {
      row.dimension = std::stoi(first);
    } catch (const std::exception&) {
      throw SchemaError("direction table: bad dimension field '" + first + "'");
    }
    if (!(fields >> row.degree >> row.coefficients) || row.degree < 1) {
      throw SchemaError("direction table: malformed row for dimension " + first);
    }
    std::uint32_t m = 0;
    while (fields >> m) row.initial.push_back(m);
    if (static_cast<int>(row.initial.size()) != row.degree) {
      throw SchemaError("direction table: dimension " + first + " needs " + std::to_string(row.degree) +
                        " initial values");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<DirectionRow> load_direction_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open direction table " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_direction_table(buf.str());
}

SobolSequence::SobolSequence(std::size_t dimension, const std::vector<DirectionRow>& table) {
  if (dimension < 1 || dimension > kMaxSobolDimension) {
    throw InvalidArgument("Sobol dimension must be in 1.." + std::to_string(kMaxSobolDimension));
  }
  if (table.size() + 1 < dimension) throw InvalidArgument("direction table too short");
  directions_.assign(dimension, std::vector<std::uint32_t>(kBits));
  for (int i = 0; i < kBits; ++i) directions_[0][static_cast<std::size_t>(i)] = 1u << (kBits - 1 - i);
  for (std::size_t d = 1; d < dimension; ++d) {
    const auto& row = table[d - 1];
    const int s = row.degree;
    auto& v = directions_[d];
    for (int i = 0; i < s && i < kBits; ++i) {
      v[static_cast<std::size_t>(i)] = row.initial[static_cast<std::size_t>(i)] << (kBits - 1 - i);
    }
    for (int i = s; i < kBits; ++i) {
      std::uint32_t x = v[static_cast<std::size_t>(i - s)] ^ (v[static_cast<std::size_t>(i - s)] >> s);
      for (int k = 1; k < s; ++k) {
        if ((row.coefficients >> (s - 1 - k)) & 1u) x ^= v[static_cast<std::size_t>(i - k)];
      }
      v[static_cast<std::size_t>(i)] = x;
    }
  }
  state_.assign(dimension, 0u);
}

void SobolSequence::next(std::span<double> out) {
  if (out.size() != state_.size()) throw InvalidArgument("Sobol output span has wrong length");
  if (index_ > 0) {
    const auto bit = static_cast<std::size_t>(std::countr_one(index_ - 1));
    if (bit >= static_cast<std::size_t>(kBits)) throw NumericalError("Sobol sequence exhausted");
    for (std::size_t d = 0; d < state_.size(); ++d) state_[d] ^= directions_[d][bit];
  }
  ++index_;
  for (std::size_t d = 0; d < state_.size(); ++d) out[d] = static_cast<double>(state_[d]) * 0x1.0p-32;
}

void SobolSequence::skip(std::size_t count) {
  std::vector<double> scratch(state_.size());
  for (std::size_t i = 0; i < count; ++i) next(scratch);
}

Matrix sobol(std::size_t dim, std::size_t count, std::size_t skip) {
  SobolSequence seq(dim);
  seq.skip(skip);
  Matrix points(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  std::vector<double> p(dim);
  for (std::size_t i = 0; i < count; ++i) {
    seq.next(p);
    for (std::size_t d = 0; d < dim; ++d) points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = p[d];
  }
  return points;
}

}  // namespace mfusion
