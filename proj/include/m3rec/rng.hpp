// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace m3rec {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Deterministic pseudo-random stream (xoshiro-free, stdlib-free draws so that
// outputs are identical across standard library implementations). Streams are
// hierarchical: derive(label) yields an independent child stream, which lets
// per-parameter / per-user / per-task draws stay stable when unrelated parts
// of a run change.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {
    // warm up so that small seeds do not produce correlated first draws
    detail::splitmix64(state_);
    detail::splitmix64(state_);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [0, n); n must be > 0
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal, Box-Muller (single value; the pair's second half is dropped
  // to keep the stream position independent of call parity)
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  Rng derive(std::string_view label) const {
    std::uint64_t s = seed_ ^ detail::fnv1a64(label);
    detail::splitmix64(s);
    return Rng(s);
  }

  Rng derive(std::uint64_t salt) const {
    std::uint64_t s = seed_ + 0x9e3779b97f4a7c15ULL * (salt + 1);
    detail::splitmix64(s);
    return Rng(s);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace m3rec
