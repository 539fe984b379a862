#include "famadapt/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "famadapt/error.hpp"

namespace famadapt {

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

double Rng::normal() {
  // u1 in (0,1] so log() stays finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t Rng::randint(std::int64_t n) {
  if (n <= 0) throw DomainError("randint: n must be positive, got " + std::to_string(n));
  unsigned __int128 wide = static_cast<unsigned __int128>(next_u64());
  return static_cast<std::int64_t>((wide * static_cast<unsigned __int128>(n)) >> 64);
}

std::string Rng::save_state() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

void Rng::load_state(const std::string& state) {
  std::istringstream is(state);
  is >> seed_ >> engine_;
  if (!is) throw IoError("rng: malformed saved state");
}

}  // namespace famadapt
