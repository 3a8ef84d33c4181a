#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gsct/common.hpp"

namespace gsct {

// Seeded RNG with explicit output mappings. std::mt19937_64 state transitions
// are fully specified by the standard; the standard <random> distributions are
// not, so uniform/normal draws are mapped here to keep sequences a pure
// function of the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), unbiased
  std::int64_t uniform_int(std::int64_t n) {
    check(n > 0, "Rng::uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t r = next();
    while (r >= limit) r = next();
    return static_cast<std::int64_t>(r % un);
  }

  // Standard normal via Box-Muller; consumes two draws, keeps no cache so the
  // engine state alone captures the generator.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
  }

  void restore_state(const std::string& state) {
    std::istringstream in(state);
    in >> engine_;
    check(!in.fail(), "Rng::restore_state: malformed engine state");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gsct
