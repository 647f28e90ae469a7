#pragma once

#include <cstdint>
#include <span>

namespace leap {

/// Stream families. Every random draw in the library comes from a stream
/// keyed by (root seed, family, index), so results do not depend on the order
/// in which episodes are processed.
enum class StreamKind : std::uint64_t {
  kDemonstration = 1,
  kRollout = 2,
  kValidation = 3,
  kEvaluation = 4,
  kCorrection = 5,
  kTest = 6,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: output i is a hash of (key, i).
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(splitmix64(key)) {}

  static RandomStream derive(std::uint64_t root, StreamKind kind,
                             std::uint64_t index) {
    std::uint64_t k = splitmix64(root);
    k = splitmix64(k ^ static_cast<std::uint64_t>(kind));
    k = splitmix64(k ^ index);
    return RandomStream(k);
  }

  std::uint64_t next_u64() { return splitmix64(key_ + 0xD1B54A32D192ED03ULL * ++counter_); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Inverse-CDF draw from a probability vector. Trailing rounding mass goes
  /// to the last index with positive probability.
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    int last_positive = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = static_cast<int>(i);
      acc += probs[i];
      if (u < acc) return last_positive;
    }
    return last_positive;
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace leap
