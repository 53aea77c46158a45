#pragma once

#include <cstdint>
#include <random>

namespace cinediff {

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `index` of `master`; independent of the order streams are requested in.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
  return splitmix64(splitmix64(master) ^ splitmix64(index * 0x632be59bd9b4e019ULL + 1));
}

/// Seeded generator. All library randomness goes through this type so that runs are a pure
/// function of their seeds.
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : engine_(splitmix64(seed))
  {
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  std::mt19937_64 &engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace cinediff
