#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter words), so paths and time steps can be generated in
// any order and still reproduce bit for bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace sbmmd {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter apply(Counter ctr, Key key) noexcept {
    ctr = round(ctr, key);
    for (int r = 1; r < 10; ++r) {
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
      ctr = round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr Counter round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
    const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Purpose tags; the tag occupies the top byte of a stream id.
enum class StreamTag : std::uint64_t {
  initial = 1,
  noise = 2,
  tau = 3,
  eval = 4,
  dataset = 5,
  init_weights = 6,
  target = 7,
  user = 8,
};

constexpr std::uint64_t make_stream(StreamTag tag, std::uint64_t index) noexcept {
  return (static_cast<std::uint64_t>(tag) << 56) | (index & ((std::uint64_t{1} << 56) - 1));
}

/// A keyed family of random draws indexed by three 32-bit counter words.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  /// Raw 128 bits for counter (a, b, c).
  Philox4x32::Counter bits(std::uint32_t a, std::uint32_t b, std::uint32_t c) const noexcept {
    return Philox4x32::apply({a, b, c, 0u}, key_);
  }

  /// Two uniforms in [0, 1) with 53-bit resolution.
  std::array<double, 2> uniform_pair(std::uint32_t a, std::uint32_t b, std::uint32_t c) const noexcept {
    const auto r = bits(a, b, c);
    const std::uint64_t u0 = (std::uint64_t{r[0]} << 32) | r[1];
    const std::uint64_t u1 = (std::uint64_t{r[2]} << 32) | r[3];
    constexpr double scale = 0x1.0p-53;
    return {static_cast<double>(u0 >> 11) * scale, static_cast<double>(u1 >> 11) * scale};
  }

  double uniform(std::uint32_t a, std::uint32_t b, std::uint32_t c) const noexcept {
    return uniform_pair(a, b, c)[0];
  }

  /// Two independent standard normals (Box-Muller).
  std::array<double, 2> normal_pair(std::uint32_t a, std::uint32_t b, std::uint32_t c) const noexcept {
    const auto u = uniform_pair(a, b, c);
    const double radius = std::sqrt(-2.0 * std::log(1.0 - u[0]));
    const double angle = 2.0 * std::numbers::pi * u[1];
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  /// Standard normal for component `j`; components 2k and 2k+1 share one block.
  double normal(std::uint32_t a, std::uint32_t b, std::uint32_t j) const noexcept {
    const auto z = normal_pair(a, b, j / 2);
    return z[j % 2];
  }

 private:
  Philox4x32::Key key_{};
};

}  // namespace sbmmd
