#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mfsoc {

/// Philox4x32-10 counter-based generator (Salmon et al. construction).
///
/// Purely functional: the caller names a (key, counter) pair and gets four
/// 32-bit words. Streams are carved out of the counter space, so any worker
/// can reproduce any draw without sequential state — reruns are byte-identical
/// no matter how work is scheduled.
namespace philox {

inline constexpr std::uint32_t kWeylA = 0x9E3779B9u;
inline constexpr std::uint32_t kWeylB = 0xBB67AE85u;
inline constexpr std::uint32_t kMulA = 0xD2511F53u;
inline constexpr std::uint32_t kMulB = 0xCD9E8D57u;

[[nodiscard]] inline std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMulA) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMulB) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeylA;  // bump between rounds; the final bump is discarded
    key[1] += kWeylB;
  }
  return ctr;
}

}  // namespace philox

/// Deterministic stream of standard normal draws, random-access by index.
///
/// A stream is identified by (seed, purpose, stream id); draw 2b and 2b+1
/// come from counter block b via Box-Muller. `purpose` keeps independent uses
/// (path noise, perturbation directions, ...) from colliding.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint32_t purpose, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        prefix_{purpose, static_cast<std::uint32_t>(stream),
                static_cast<std::uint32_t>(stream >> 32)} {}

  /// The `index`-th normal of the stream (stateless random access).
  [[nodiscard]] double at(std::uint64_t index) const {
    return pair(index >> 1)[index & 1];
  }

  /// Both normals of counter block `b` (draws 2b and 2b+1).
  [[nodiscard]] std::array<double, 2> pair(std::uint64_t b) const {
    const auto words = philox::block(
        {prefix_[0], prefix_[1], prefix_[2], static_cast<std::uint32_t>(b)}, key_);
    // Note: block index b is limited to 2^32 blocks per stream, plenty for
    // any run this tool performs (the cap is checked by callers' loop bounds).
    const double u1 = to_unit(words[0], words[1]);
    const double u2 = to_unit(words[2], words[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(a), r * std::sin(a)};
  }

 private:
  // Uniform on (0, 1): 53 significant bits, offset half a ulp away from 0.
  [[nodiscard]] static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t u = (static_cast<std::uint64_t>(hi) << 32) | lo;
    return (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 3> prefix_;
};

/// Sequential reader over a NormalStream with pair caching (Box-Muller yields
/// two draws per counter block; this avoids recomputing every other block).
class SequentialNormals {
 public:
  explicit SequentialNormals(NormalStream stream) : stream_(stream) {}

  [[nodiscard]] double next() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const auto two = stream_.pair(next_block_++);
    cached_ = two[1];
    have_cached_ = true;
    return two[0];
  }

 private:
  NormalStream stream_;
  std::uint64_t next_block_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace mfsoc
