#pragma once

// Finite tabular POMDP model, episode simulation, exact Bayes filtering and
// history enumeration.

#include <compare>
#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "leap/rng.hpp"

namespace leap {

using Distribution = std::vector<double>;

/// Tolerance used when validating that a row of probabilities sums to one.
inline constexpr double kRowTolerance = 1e-9;

/// Complete tabular model of a finite-horizon POMDP.
///
/// `observation_model` has `num_actions + 1` columns per next state; the last
/// column (index `null_action()`) is the distribution of the first
/// observation, emitted from the initial state before any action is taken.
struct PomdpSpec {
  std::string name;
  int num_states = 0;
  int num_actions = 0;
  int num_observations = 0;
  int horizon = 0;
  Distribution initial_dist;
  std::vector<std::vector<Distribution>> transition;         // [s][a] -> s'
  std::vector<std::vector<Distribution>> observation_model;  // [s'][a] -> o
  std::vector<std::vector<double>> reward;                   // [s][a]
  /// (state, action) pairs that count as task success. Taking such a pair
  /// ends the episode.
  std::set<std::pair<int, int>> success_predicate;

  int null_action() const { return num_actions; }
  bool is_success(int state, int action) const {
    return success_predicate.contains({state, action});
  }

  /// Throws InvalidArgument when any invariant is broken.
  void validate() const;
};

/// Alternating o_1, a_1, o_2, ..., o_t. Always ends in an observation.
struct HistoryKey {
  std::vector<int> entries;

  HistoryKey() = default;
  explicit HistoryKey(std::vector<int> e) : entries(std::move(e)) {}
  static HistoryKey initial(int observation) { return HistoryKey({observation}); }

  /// Number of observations t.
  int length() const { return static_cast<int>((entries.size() + 1) / 2); }
  bool empty() const { return entries.empty(); }
  int last_observation() const { return entries.back(); }

  HistoryKey extended(int action, int observation) const;

  /// Last `window` observation-action pairs followed by the current
  /// observation. A window of at least length()-1 returns the full history.
  HistoryKey suffix(int window) const;

  std::string to_string() const;

  auto operator<=>(const HistoryKey&) const = default;
  bool operator==(const HistoryKey&) const = default;
};

struct HistoryKeyHash {
  std::size_t operator()(const HistoryKey& key) const noexcept;
};

struct RolloutStep {
  HistoryKey history;
  int state = 0;
  int action = 0;
  double reward = 0.0;
};

/// One episode with the privileged state recorded next to every history.
struct PrivilegedRollout {
  std::vector<RolloutStep> steps;
  double total_reward = 0.0;
  bool succeeded = false;
};

struct Belief {
  Distribution probs;
};

/// What a policy sees at one decision. Student policies must only read
/// `history`; privileged policies may read `state`.
struct DecisionPoint {
  int t;  // 0-based step index
  int state;
  const HistoryKey& history;
};

using RolloutPolicy = std::function<Distribution(const DecisionPoint&)>;

struct StepResult {
  int next_state;
  int observation;
  double reward;
};

/// Samples one transition. Throws InvalidArgument on bad indices.
StepResult step(const PomdpSpec& spec, int state, int action, RandomStream& rng);

/// Simulates one episode. Throws ContractViolation when the policy returns
/// something that is not a probability vector over actions.
PrivilegedRollout rollout(const PomdpSpec& spec, const RolloutPolicy& policy,
                          RandomStream& rng);

/// Posterior over s_1 after the first observation.
Belief initial_belief(const PomdpSpec& spec, int observation);

/// One Bayes filter step. Throws InconsistentEvidence when the observation
/// has zero probability under the belief.
Belief belief_update(const PomdpSpec& spec, const Belief& belief, int action,
                     int observation);

/// Runs the filter over a whole history.
Belief belief_from_history(const PomdpSpec& spec, const HistoryKey& history);

/// Joint mass P(s_t = s, h_t) stored as a normalized belief and a log mass,
/// so long products never underflow.
struct WeightedBelief {
  Distribution belief;
  double log_mass = 0.0;

  double mass() const;
  Distribution joint() const;
};

/// Successor of a weighted belief after an action whose per-state
/// probability is `action_weight[s]`. Episodes ending on a success pair are
/// removed; their mass is returned in `terminated_mass`.
struct Propagation {
  std::vector<std::pair<int, WeightedBelief>> children;  // (observation, node)
  double action_mass = 0.0;                             // P(a_t = a, h_t)
  double terminated_mass = 0.0;
  double expected_reward = 0.0;  // sum_s P(s, h, a) r(s, a)
  double success_mass = 0.0;
};

Propagation propagate(const PomdpSpec& spec, const WeightedBelief& node,
                      int action, std::span<const double> action_weight);

/// Root nodes of the history tree: one per first observation with positive
/// probability.
std::vector<std::pair<HistoryKey, WeightedBelief>> root_histories(
    const PomdpSpec& spec);

/// Default cap on exhaustive enumeration sizes.
inline constexpr std::size_t kDefaultEnumerationCap = 2'000'000;

/// All syntactically valid histories with t observations.
/// Throws ResourceLimit when |O|^t |A|^(t-1) exceeds `cap`.
std::vector<HistoryKey> enumerate_histories(const PomdpSpec& spec, int t,
                                            std::size_t cap = kDefaultEnumerationCap);

struct HistoryOccupancy {
  std::vector<HistoryKey> histories;
  std::vector<Distribution> joint;  // joint[i][s] = P(s_t = s, h_t = histories[i])
  double terminated_mass = 0.0;     // episodes that ended before step t
};

/// Reachable histories at step t (1-based count of observations) with their
/// joint state occupancy under `policy`. Throws ResourceLimit when more than
/// `cap` histories would be expanded.
HistoryOccupancy enumerate_occupancy(const PomdpSpec& spec, int t,
                                     const RolloutPolicy& policy,
                                     std::size_t cap = kDefaultEnumerationCap);

nlohmann::json to_json(const PomdpSpec& spec);
PomdpSpec pomdp_from_json(const nlohmann::json& doc);

/// Checks that `p` is a probability vector of the given size.
bool is_distribution(std::span<const double> p, std::size_t size,
                     double tolerance = kRowTolerance);

}  // namespace leap
