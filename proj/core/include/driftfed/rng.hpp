#pragma once

// Portable random numbers.
//
// All randomness in driftfed comes from std::mt19937_64, whose output
// sequence is fixed by the C++ standard. The std::*_distribution adaptors are
// implementation-defined, so the conversions to doubles, bounded integers and
// normals live here instead.
//
// Seeds are derived hierarchically: derive_seed(parent, tag, a, b) mixes a
// parent seed with a component tag and up to two indices through splitmix64.
// Every component (client data, endpoint data, model init, shuffles, KSWIN
// sampling, retention sampling) gets its own stream, so adding a consumer
// never shifts the numbers another one sees.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace driftfed {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Mixes `parent` with a tag string and two indices into an independent seed.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag,
                          std::uint64_t a = 0, std::uint64_t b = 0) noexcept;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via the Marsaglia polar method (no cached spare).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace driftfed
