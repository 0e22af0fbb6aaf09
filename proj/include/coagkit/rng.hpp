#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace coagkit {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
/// A pure function of (counter, key): any block of any stream can be
/// produced independently, which is what makes replica-parallel runs and
/// the shared clocks of coupled chains reproducible.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) noexcept {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

namespace detail {
constexpr Philox4x32::Key key_of(std::uint64_t seed) noexcept {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}
// 53 random bits mapped to the open interval (0, 1).
constexpr double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}
} // namespace detail

/// One uniform variate in (0,1) addressed by (seed, four 32-bit coordinates).
inline double uniform_at(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                         std::uint32_t d) noexcept {
  const auto out = Philox4x32::block({a, b, c, d}, detail::key_of(seed));
  return detail::to_open_unit((std::uint64_t{out[0]} << 32) | out[1]);
}

/// Sequential stream over Philox blocks. Streams with different `stream`
/// ids under the same seed never overlap. Satisfies
/// UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(detail::key_of(seed)), stream_(stream) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (have_ == 0) refill();
    --have_;
    return buf_[have_];
  }

  /// Uniform on the open interval (0,1).
  double uniform() noexcept { return detail::to_open_unit((*this)()); }

  /// Exponential variate of the given rate (rate > 0).
  double exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

  std::uint64_t blocks_used() const noexcept { return block_; }

 private:
  void refill() noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                  static_cast<std::uint32_t>(block_ >> 32),
                                  static_cast<std::uint32_t>(stream_),
                                  static_cast<std::uint32_t>(stream_ >> 32)};
    const auto out = Philox4x32::block(ctr, key_);
    ++block_;
    buf_[1] = (std::uint64_t{out[0]} << 32) | out[1];
    buf_[0] = (std::uint64_t{out[2]} << 32) | out[3];
    have_ = 2;
  }

  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buf_{};
  int have_ = 0;
};

} // namespace coagkit
