#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace leap {

inline double log_sum_exp(std::span<const double> x) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double total = 0.0;
  for (double v : x) total += std::exp(v - hi);
  return hi + std::log(total);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i] - lse);
  return out;
}

inline std::vector<double> uniform_distribution(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

/// KL(p || q) in nats. Terms with p_i = 0 contribute zero.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    total += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(total, 0.0);
}

inline double l1_distance(std::span<const double> p, std::span<const double> q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - q[i]);
  return total;
}

/// Index of the largest entry; entries within `tie_tolerance` of the maximum
/// count as ties and the lowest index wins.
inline int argmax_lowest(std::span<const double> x, double tie_tolerance = 1e-12) {
  double best = -std::numeric_limits<double>::infinity();
  for (double v : x) best = std::max(best, v);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= best - tie_tolerance) return static_cast<int>(i);
  }
  return 0;
}

/// Raises every entry to at least `floor` and renormalizes.
inline std::vector<double> floor_distribution(std::span<const double> p, double floor) {
  std::vector<double> out(p.begin(), p.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::max(v, floor);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

inline std::vector<double> one_hot(std::size_t n, int index) {
  std::vector<double> out(n, 0.0);
  out[static_cast<std::size_t>(index)] = 1.0;
  return out;
}

}  // namespace leap
