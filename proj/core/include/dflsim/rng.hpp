#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dflsim {

// All randomness in the simulator flows through keyed streams: an engine is
// seeded by hashing (seed, stream, tags...) so any client/round/step draws
// the same numbers regardless of scheduling or thread count.

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class Stream : std::uint64_t {
  dataset = 1,
  partition = 2,
  client = 3,
  batch = 4,
  init = 5,
  client_sample = 6,
  topology = 7,
  hessian_probe = 8,
  power_iteration = 9,
};

inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(seed);
  for (std::uint64_t t : tags) s = mix64(s ^ mix64(t));
  return s;
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return derive_seed(seed, {static_cast<std::uint64_t>(stream), a, b, c});
}

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream,
                                std::uint64_t a = 0, std::uint64_t b = 0,
                                std::uint64_t c = 0) {
  return std::mt19937_64(derive_seed(seed, stream, a, b, c));
}

}  // namespace dflsim
