#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mfusion/linalg.hpp"

namespace mfusion {

/// One dimension of a Joe-Kuo direction-number table.
struct DirectionRow {
  int dimension = 0;
  int degree = 0;
  std::uint32_t coefficients = 0;
  std::vector<std::uint32_t> initial;
};

inline constexpr std::size_t kMaxSobolDimension = 10;

/// Built-in table for dimensions 2..10 (new-joe-kuo-6.21201).
const std::vector<DirectionRow>& default_direction_table();

/// Parses the text format of core/data/sobol_joe_kuo_10.txt: '#' comments,
/// an optional "d s a m_i" header, then one row per dimension.
std::vector<DirectionRow> parse_direction_table(const std::string& text);
std::vector<DirectionRow> load_direction_table(const std::filesystem::path& path);

/// Gray-code Sobol generator in 32-bit precision. Point 0 is the origin.
class SobolSequence {
 public:
  explicit SobolSequence(std::size_t dimension,
                         const std::vector<DirectionRow>& table = default_direction_table());

  std::size_t dimension() const { return directions_.size(); }
  /// Writes the next point into `out` (length dimension()).
  void next(std::span<double> out);
  void skip(std::size_t count);

 private:
  std::vector<std::vector<std::uint32_t>> directions_;
  std::vector<std::uint32_t> state_;
  std::uint64_t index_ = 0;
};

/// `count` points in [0,1)^dim as matrix rows, starting at sequence index `skip`.
Matrix sobol(std::size_t dim, std::size_t count, std::size_t skip = 0);

}  // namespace mfusion
