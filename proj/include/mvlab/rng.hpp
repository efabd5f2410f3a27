#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace mvlab {

// Counter-based random streams.
//
// Every stream is identified by a 64-bit key derived from the master seed and
// a list of integer coordinates (stream tag, replica index, lineage hash,
// lane, ...). The n-th output of a stream is a pure function of (key, n), so
// draws are reproducible regardless of thread scheduling, and distinct
// coordinates give statistically independent streams.
//
// Derivation: key = fold of the SplitMix64 finalizer over the coordinates;
// output(n) = finalizer(key + (n+1) * golden), i.e. the SplitMix64 sequence
// seeded at `key`.

namespace rngdetail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fold(std::uint64_t h, std::uint64_t v) {
  return mix(h + kGolden + v);
}

}  // namespace rngdetail

// Stream key derivation. Tags keep unrelated subsystems on disjoint streams.
enum class StreamTag : std::uint64_t {
  kInit = 1,        // initial-condition sampling
  kJump = 2,        // candidate clocks, thinning, progeny
  kDiffusion = 3,   // Brownian increments
  kLifted = 4,      // lifted ensemble draws
  kValue = 5,       // nested-simulation restarts
  kProbe = 6,       // assumption-validation probes
  kStudy = 7,       // per-replica sub-seeds in studies
  kTest = 99,       // test-local generators
};

inline std::uint64_t derive_key(std::uint64_t master_seed,
                                StreamTag tag,
                                std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = rngdetail::fold(master_seed, static_cast<std::uint64_t>(tag));
  for (std::uint64_t c : coords) h = rngdetail::fold(h, c);
  return h;
}

// A counter-based uniform stream. Copyable; state is (key, counter).
class RngStream {
 public:
  RngStream() : key_(0), counter_(0) {}
  explicit RngStream(std::uint64_t key) : key_(key), counter_(0) {}

  RngStream(std::uint64_t master_seed, StreamTag tag,
            std::initializer_list<std::uint64_t> coords)
      : key_(derive_key(master_seed, tag, coords)), counter_(0) {}

  std::uint64_t next_u64() {
    ++counter_;
    return rngdetail::mix(key_ + counter_ * rngdetail::kGolden);
  }

  // Uniform on (0,1): never returns 0 or 1, so logs stay finite.
  double u01() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  // Uniform on [0,1).
  double u01_halfopen() {
    const std::uint64_t bits = next_u64() >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (cosine branch); consumes two uniforms.
  // std::normal_distribution is not bit-stable across standard libraries.
  double normal() {
    const double u1 = u01();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Exponential with the given rate (rate > 0).
  double exponential(double rate) { return -std::log(u01()) / rate; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Hash of a label path for lineage-keyed streams.
inline std::uint64_t hash_path(const std::uint32_t* digits, std::size_t n) {
  std::uint64_t h = rngdetail::fold(0x243F6A8885A308D3ull, n);
  for (std::size_t i = 0; i < n; ++i) h = rngdetail::fold(h, digits[i]);
  return h;
}

}  // namespace mvlab
