#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace mfusion {

/// Counter-based random stream.
///
/// Draw k of stream (seed, name, index) is SplitMix64's finalizer applied to
/// key + (k + 1) * 0x9E3779B97F4A7C15, where key mixes the seed with the
/// FNV-1a hash of the name and the index. The output depends only on
/// (seed, name, index, counter), so it is identical on every platform and
/// adding a new named stream never perturbs an existing one.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal by Box-Muller; consumes two uniforms per draw.
  double normal();
  /// Uniform integer on [0, n).
  std::size_t uniform_index(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[uniform_index(i)]);
    }
  }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t fnv1a(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mfusion
