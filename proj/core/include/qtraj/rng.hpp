#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace qtraj {

// splitmix64 finalizer (Steele, Lea, Flood; public-domain constants).
constexpr std::uint64_t splitmix_fin(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// Mixes a parent seed with a branch label into a new, well-spread seed.
/// Every random stream in the project is derived through this function,
/// so results depend only on (master seed, logical indices) and never on
/// execution or worker order.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t branch) {
  return splitmix_fin(parent + kGolden * (branch + 0x632be59bd9b4e019ULL));
}

/// Minimal counter-based generator: splitmix64 stream.  Fixed arithmetic,
/// no platform-dependent state, cheap to seed per shot.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += kGolden;
    return splitmix_fin(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// One standard-normal pair via Box-Muller.  A pair per call keeps the
  /// draw count deterministic (no cached leftover across call sites).
  std::pair<double, double> gauss_pair() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(a), r * std::sin(a)};
  }

 private:
  std::uint64_t state_;
};

/// Stream labels used when branching off a master seed.
namespace seed_tag {
inline constexpr std::uint64_t kShot = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kAxisPlan = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kShuffle = 5;
}  // namespace seed_tag

inline SplitMix64 stream_for(std::uint64_t master, std::uint64_t tag,
                             std::uint64_t index) {
  return SplitMix64(derive_seed(derive_seed(master, tag), index));
}

}  // namespace qtraj
