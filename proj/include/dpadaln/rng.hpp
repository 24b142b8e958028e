#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>

namespace dpadaln {

/// Counter-based random stream. Draw i is splitmix64_mix(key + (i + 1) * golden),
/// so the stream is a pure function of (seed, stream id, position) and is
/// bit-identical on every platform. Normals use the Box-Muller transform and
/// consume two uniforms per pair; the second value of each pair is cached.
class CounterRng {
 public:
  struct Position {
    std::uint64_t counter = 0;
    bool has_spare = false;
    auto operator<=>(const Position&) const = default;
  };

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller.
  double normal();
  /// Unbiased integer on [0, n).
  std::size_t index(std::size_t n);

  Position position() const { return {counter_, has_spare_}; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace dpadaln
