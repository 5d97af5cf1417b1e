#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace mleig {

/// Deterministic pseudo-random stream. Independent substreams are derived
/// from a root seed and a tuple of integer keys (level, sample index, ...).
class RandomStream {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit RandomStream(std::uint64_t seed = 0) : engine_(seed) {}
  RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::seed_seq seq = make_seq(seed, keys);
    engine_.seed(seq);
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

 private:
  static std::seed_seq make_seq(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * keys.size());
    auto push = [&](std::uint64_t v) {
      words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
      words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto k : keys) push(k);
    return std::seed_seq(words.begin(), words.end());
  }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline double standard_normal(RandomStream& rng) { return rng.normal(); }
inline double uniform01(RandomStream& rng) { return rng.uniform(); }

}  // namespace mleig
