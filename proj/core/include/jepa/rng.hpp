#pragma once

#include <cstdint>

namespace jepa {

// Counter-based generator: draw i is a pure function of (seed, i), so a copied
// state replays the same stream. Used for init, dropout masks, shuffling and
// reference sampling.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  // Independent stream derived from this one (does not advance it).
  Rng fork(std::uint64_t stream) const;

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace jepa
