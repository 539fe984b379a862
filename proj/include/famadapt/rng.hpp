#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace famadapt {

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull);

// Seeded generator wrapper. All draws are derived from raw engine output with
// fixed arithmetic, so streams are reproducible independent of the standard
// library's distribution implementations, and the engine state round-trips
// exactly through save_state()/load_state().
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes exactly two engine draws per call (no cached spare).
  double normal();

  // [0,n)
  std::int64_t randint(std::int64_t n);

  // Independent child stream; derived from the construction seed and a label,
  // without consuming any parent draws.
  Rng fork(std::string_view label) const {
    return Rng(fnv1a(label, seed_ ^ 0x9e3779b97f4a7c15ull));
  }

  std::uint64_t seed() const { return seed_; }

  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace famadapt
