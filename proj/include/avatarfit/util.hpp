#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace avatarfit {

/// Seeded random source with platform-independent output.
///
/// std::mt19937_64 is fully specified by the standard, but the std
/// distributions are not, so uniform and normal draws are derived here
/// directly from the raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  /// Standard normal (Box-Muller, no cached second value).
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// Mixes several integers into one well-distributed seed (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Default worker count: AVATARFIT_THREADS if set and positive, else 1.
int default_jobs();

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Each index is
/// visited exactly once; callers write results into per-index slots so the
/// outcome does not depend on the thread count.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

}  // namespace avatarfit
