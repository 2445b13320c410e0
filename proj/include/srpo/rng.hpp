#ifndef SRPO_RNG_HPP_
#define SRPO_RNG_HPP_

#include <cmath>
#include <cstdint>

// Deterministic, implementation-independent RNG. std::normal_distribution and
// friends are implementation-defined, so everything here is spelled out
// explicitly to keep runs bit-identical across compilers.

namespace srpo {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // rejection-free for our purposes; n is tiny compared to 2^64
    return next_u64() % n;
  }

  // standard normal via Box-Muller
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream from a base seed and up to three stream
// coordinates (e.g. step, group, purpose tag). Streams for distinct
// coordinates are effectively uncorrelated.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
  auto mix = [](std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    std::uint64_t z = h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed, 0x53525030ULL);
  h = mix(h, a);
  h = mix(h, b);
  h = mix(h, c);
  return Rng(h);
}

namespace stream {
// purpose tags for derive_rng's last coordinate
inline constexpr std::uint64_t kTask = 1;
inline constexpr std::uint64_t kSample = 2;
inline constexpr std::uint64_t kTeacherPick = 3;
inline constexpr std::uint64_t kEval = 4;
inline constexpr std::uint64_t kInit = 5;
}  // namespace stream

}  // namespace srpo

#endif  // SRPO_RNG_HPP_
