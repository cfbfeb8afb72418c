#pragma once

#include <cstdint>

namespace gibrss {

// Counter-based generator: draw n of stream (seed, stream) is a pure function
// of (seed, stream, n), so streams can be split per sample or per layer and
// consumed from any thread without changing results.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  // [0, 1) with 53 random bits.
  double uniform() noexcept;
  // (0, 1), never exactly 0 or 1.
  double uniform_open() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;
  // Standard logistic variate, log(u) - log(1 - u).
  double logistic() noexcept;

  // Independent child stream; same parent + same key gives the same child.
  RngStream split(std::uint64_t key) const noexcept;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace gibrss
