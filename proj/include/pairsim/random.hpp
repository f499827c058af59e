#pragma once

#include <cstdint>
#include <random>

namespace pairsim {

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
} // namespace detail

/// Reproducible random stream identified by (seed, stream_id). Substreams are
/// derived by hashing, so parallel chunks never share state.
class RandomStream {
public:
  using result_type = std::mt19937_64::result_type;

  RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id), engine_(mix(seed, stream_id)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Independent child stream; same (parent, index) always yields the same child.
  RandomStream derive(std::uint64_t index) const {
    std::uint64_t s = mix(stream_id_, index + 1);
    return RandomStream(seed_, detail::splitmix64(s));
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return std::generate_canonical<double, 53>(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  double normal(double mean, double sigma) {
    return sigma > 0 ? std::normal_distribution<double>(mean, sigma)(engine_) : mean;
  }
  double exponential(double rate) { return std::exponential_distribution<double>(rate)(engine_); }
  std::uint64_t poisson(double mean) {
    if (!(mean > 0)) return 0;
    return std::poisson_distribution<std::uint64_t>(mean)(engine_);
  }

private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (0xD1B54A32D192ED03ULL * (b + 1));
    std::uint64_t h = detail::splitmix64(s);
    return h ^ detail::splitmix64(s);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

} // namespace pairsim
