#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace handrec {

using Real = double;

enum class Handed { left, right };

// Error taxonomy shared by the library and the CLI. The CLI maps kinds to
// exit codes (config -> 2, data -> 3, numeric -> 4); `invalid` covers
// contract violations on user-reachable surfaces and also exits 2.
struct Error : std::runtime_error {
  enum class Kind { invalid, config, data, numeric };
  Kind kind;
  Error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
  throw Error(Error::Kind::invalid, msg);
}
[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(Error::Kind::config, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(Error::Kind::data, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(Error::Kind::numeric, msg);
}

// Deterministic RNG (splitmix64 core). Implemented by hand so that streams
// are identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  Real uniform() {
    return Real(next_u64() >> 11) * 0x1.0p-53;
  }

  Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + int(next_u64() % uint64_t(hi - lo + 1));
  }

  // Box-Muller; one draw per call keeps the stream position predictable.
  Real normal() {
    Real u1 = uniform();
    Real u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Real normal(Real mean, Real sigma) { return mean + sigma * normal(); }

  bool bernoulli(Real p) { return uniform() < p; }

 private:
  uint64_t state_;
};

// Stable stream derivation: children seeded from (seed, tag, index) so that
// sample i is the same no matter which worker generates it.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag, uint64_t index = 0) {
  Rng r(seed ^ (tag * 0x9e3779b97f4a7c15ull) ^ (index * 0xd1b54a32d192ed03ull));
  return r.next_u64();
}

// FNV-1a over a string; used to give every named parameter its own stream.
inline uint64_t hash_str(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace handrec
