#pragma once

// Teacher side: privileged value iteration, belief-marginalized
// (non-privileged) expert, KL-constrained privileged expert, the sampled
// penalty approximation, and trajectory correction.

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "leap/pomdp.hpp"
#include "leap/rng.hpp"

namespace leap {

/// Finite-horizon Q and V of the fully observed MDP. Steps are 0-based;
/// the layer after the last step is identically zero and is not stored.
struct ValueTables {
  std::vector<std::vector<std::vector<double>>> q;  // [t][s][a]
  std::vector<std::vector<double>> v;               // [t][s]

  int horizon() const { return static_cast<int>(v.size()); }
};

/// Backward induction on the privileged MDP. Success pairs end the episode,
/// so their continuation value is zero.
ValueTables solve_privileged(const PomdpSpec& spec);

/// A policy on (step, state): the privileged expert, or a self-teacher fit
/// from data.
class PrivilegedPolicy {
 public:
  PrivilegedPolicy() = default;
  explicit PrivilegedPolicy(std::vector<std::vector<Distribution>> table)
      : table_(std::move(table)) {}

  const Distribution& at(int t, int state) const;
  int horizon() const { return static_cast<int>(table_.size()); }
  const std::vector<std::vector<Distribution>>& table() const { return table_; }

 private:
  std::vector<std::vector<Distribution>> table_;  // [t][s]
};

/// Greedy (temperature 0, lowest index among ties) or softmax(q / temperature).
PrivilegedPolicy make_privileged_policy(const ValueTables& tables, double temperature);

/// Rollout adapter that acts on the privileged state.
RolloutPolicy as_rollout_policy(std::shared_ptr<const PrivilegedPolicy> policy);

/// pi(a | h) = sum_s P(s | h) pi_priv(a | s). Beliefs and results are cached
/// per history; queries are thread-safe.
class NonprivilegedExpert {
 public:
  NonprivilegedExpert(std::shared_ptr<const PomdpSpec> spec,
                      std::shared_ptr<const PrivilegedPolicy> privileged);

  /// Throws InconsistentEvidence for histories with zero probability.
  Distribution at(const HistoryKey& history) const;
  Belief belief(const HistoryKey& history) const;
  Distribution from_belief(int t, const Belief& belief) const;

 private:
  std::shared_ptr<const PomdpSpec> spec_;
  std::shared_ptr<const PrivilegedPolicy> privileged_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<HistoryKey, Belief, HistoryKeyHash> beliefs_;
  mutable std::unordered_map<HistoryKey, Distribution, HistoryKeyHash> cache_;
};

/// Convenience wrapper matching the functional form used in tests.
NonprivilegedExpert make_nonprivileged_policy(const PomdpSpec& spec,
                                              const PrivilegedPolicy& privileged);

RolloutPolicy as_rollout_policy(std::shared_ptr<const NonprivilegedExpert> expert);

struct ConstrainedProjection {
  Distribution dist;
  /// Position on the geometric path p^(1-alpha) q^alpha; 0 means the
  /// constraint is inactive, 1 means the output is q.
  double alpha = 0.0;
  bool constraint_active = false;
};

/// argmin KL(x || p) subject to KL(x || q) <= delta. Both inputs must be
/// strictly positive. The solution lies on the geometric path between p and
/// q; alpha is found by bisection so that KL(x || q) = delta within 1e-8.
ConstrainedProjection constrained_projection(std::span<const double> privileged_dist,
                                             std::span<const double> nonprivileged_dist,
                                             double delta);

Distribution constrained_expert(std::span<const double> privileged_dist,
                                std::span<const double> nonprivileged_dist, double delta);

/// Point on the geometric path, normalized in log space.
Distribution geometric_mixture(std::span<const double> p, std::span<const double> q, double alpha);

/// Penalty-method approximation: pool num_samples draws from each input,
/// weight each distinct candidate by p(a) q(a)^lambda, and draw from the
/// self-normalized weights.
int sampled_penalty_correction(std::span<const double> privileged_dist,
                               std::span<const double> nonprivileged_dist, double lambda,
                               int num_samples, RandomStream& rng);

/// Which teacher produces corrections.
struct ExpertKind {
  enum class Type { kPrivileged, kConstrained, kSampled, kExternal };
  Type type = Type::kPrivileged;
  double delta = 0.0;   // kConstrained
  double lambda = 0.0;  // kSampled
  int num_samples = 1;  // kSampled
  std::shared_ptr<const PrivilegedPolicy> external;  // kExternal

  static ExpertKind privileged() { return {}; }
  static ExpertKind constrained(double delta) {
    ExpertKind k;
    k.type = Type::kConstrained;
    k.delta = delta;
    return k;
  }
  static ExpertKind sampled(double lambda, int num_samples) {
    ExpertKind k;
    k.type = Type::kSampled;
    k.lambda = lambda;
    k.num_samples = num_samples;
    return k;
  }
  static ExpertKind external_policy(std::shared_ptr<const PrivilegedPolicy> policy) {
    ExpertKind k;
    k.type = Type::kExternal;
    k.external = std::move(policy);
    return k;
  }
  std::string describe() const;
};

enum class CorrectionMode { kFailedOnly, kAllSteps };

/// Floor applied to both expert rows before any KL computation.
inline constexpr double kExpertFloor = 1e-3;

/// Everything the teacher needs, built once per environment.
struct ExpertBundle {
  std::shared_ptr<const PomdpSpec> spec;
  ValueTables tables;
  std::shared_ptr<const PrivilegedPolicy> privileged;
  std::shared_ptr<const NonprivilegedExpert> nonprivileged;
  double expert_temperature = 0.0;

  static ExpertBundle build(const PomdpSpec& spec, double expert_temperature = 0.0);

  /// pi^E_delta(. | s, h): the KL ball is centred on the floored
  /// non-privileged row. delta <= 0 returns that centre; when the raw
  /// privileged row already lies inside the ball it is returned unchanged.
  Distribution constrained(int t, int state, const HistoryKey& history, double delta) const;

  /// Floored non-privileged row used as the centre of the KL ball.
  Distribution constraint_center(const HistoryKey& history) const;
};

struct CorrectionRecord {
  HistoryKey history;
  int state = 0;
  int student_action = 0;
  int corrected_action = 0;
  Distribution corrected_distribution;
  int iteration = 0;
};

nlohmann::json to_json(const CorrectionRecord& record);
CorrectionRecord correction_from_json(const nlohmann::json& doc);
std::string to_jsonl(const std::vector<CorrectionRecord>& records);
std::vector<CorrectionRecord> corrections_from_jsonl(const std::string& text);

/// Relabels rollouts with the chosen teacher. One record per step of every
/// selected rollout; the corrected action is the argmax of the corrected
/// distribution (lowest index among ties). `root_seed` keys the streams used
/// by the sampled teacher.
std::vector<CorrectionRecord> correct_rollouts(const std::vector<PrivilegedRollout>& rollouts,
                                               const ExpertBundle& expert, CorrectionMode mode,
                                               const ExpertKind& kind, int iteration,
                                               std::uint64_t root_seed = 0);

}  // namespace leap
