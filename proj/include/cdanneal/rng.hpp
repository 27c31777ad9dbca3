// Copyright 2026 The cdanneal Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CDANNEAL_RNG_HPP
#define CDANNEAL_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <limits>

namespace cdanneal {

/// SplitMix64 finalizer (Steele, Lea & Flood). Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a sequence of words into one key; order-sensitive.
constexpr std::uint64_t hash_words(std::uint64_t seed) noexcept { return mix64(seed); }

template <class... Rest>
constexpr std::uint64_t hash_words(std::uint64_t seed, std::uint64_t next,
                                   Rest... rest) noexcept {
  return hash_words(mix64(seed + 0x9e3779b97f4a7c15ULL) ^ next, rest...);
}

/// Stream identity for one Gibbs chain (or any other draw sequence):
/// the RNG state is a pure function of (master, replicate, step, item), so
/// streams can be regenerated in any order or on any thread.
struct StreamKey {
  std::uint64_t master = 0;
  std::uint64_t replicate = 0;
  std::uint64_t step = 0;
  std::uint64_t item = 0;
};

/// Counter-based SplitMix64 stream. Satisfies UniformRandomBitGenerator, but
/// the uniform()/below() helpers should be preferred: the standard
/// distributions are not bit-reproducible across library implementations.
class StreamRng {
 public:
  using result_type = std::uint64_t;

  explicit StreamRng(std::uint64_t seed) noexcept : state_(mix64(seed)) {}
  explicit StreamRng(const StreamKey& key) noexcept
      : state_(hash_words(key.master, key.replicate, key.step, key.item)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Multiply-high reduction; bias below n / 2^64.
  std::size_t below(std::size_t n) noexcept {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

}  // namespace cdanneal

#endif  // CDANNEAL_RNG_HPP
