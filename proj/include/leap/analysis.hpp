#pragma once

// Performance evaluation and the imitation-theory diagnostics: imitation and
// realizability gaps, recoverability, measured regret and bound checks.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "leap/expert.hpp"
#include "leap/policy.hpp"
#include "leap/pomdp.hpp"

namespace leap {

struct Performance {
  double J = 0.0;
  double success_rate = 0.0;
  double avg_actions = 0.0;
  // Standard errors; zero for exact evaluation.
  double J_se = 0.0;
  double success_se = 0.0;
  double avg_actions_se = 0.0;
  bool exact = false;
  std::size_t episodes = 0;
};

/// Sums probability x return over the whole history tree. The policy may read
/// the privileged state. Throws ResourceLimit after `cap` expanded nodes.
Performance evaluate_exact(const PomdpSpec& spec, const RolloutPolicy& policy,
                           std::size_t cap = kDefaultEnumerationCap);

/// Seeded sample means over `episodes` episodes drawn from
/// derive(root_seed, kind, i).
Performance evaluate_monte_carlo(const PomdpSpec& spec, const RolloutPolicy& policy,
                                 std::uint64_t root_seed, std::size_t episodes,
                                 StreamKind kind = StreamKind::kEvaluation);

/// One episode per seed, each from derive(seed, kValidation, 0).
Performance evaluate_on_seeds(const PomdpSpec& spec, const RolloutPolicy& policy,
                              std::span<const std::uint64_t> seeds);

/// Forward state-distribution pass for a policy on (step, state).
Performance evaluate_privileged(const PomdpSpec& spec, const PrivilegedPolicy& policy);

/// (J_expert - J_policy) / T.
double imitation_gap(double expert_J, double policy_J, int horizon);

/// Expert evaluated with privileged feedback, the policy from histories; both
/// exact.
double imitation_gap(const PomdpSpec& spec, const PrivilegedPolicy& expert,
                     const RolloutPolicy& policy, std::size_t cap = kDefaultEnumerationCap);

enum class RealizabilityMethod { kExact, kLowerBound };
std::string to_string(RealizabilityMethod method);

struct RealizabilityResult {
  double value = 0.0;
  RealizabilityMethod method = RealizabilityMethod::kExact;
};

/// Teacher row pi^E(. | t, s, h).
using TeacherFn = std::function<Distribution(int t, int state, const HistoryKey& history)>;
/// History-measurable approximator pi*(. | h).
using ApproximatorFn = std::function<Distribution(const HistoryKey& history)>;

/// Teacher and approximator for the privileged expert: pi^E(.|s) against the
/// belief-marginalized expert.
TeacherFn privileged_teacher(const ExpertBundle& bundle);
ApproximatorFn nonprivileged_approximator(const ExpertBundle& bundle);
/// Constrained expert at `delta` against the centre of its KL ball.
TeacherFn constrained_teacher(const ExpertBundle& bundle, double delta);
ApproximatorFn constraint_center_approximator(const ExpertBundle& bundle);

/// sup over deterministic history policies of
/// (1/T) sum_t E_{(s,h) ~ d_t} || teacher(t, s, h) - approx(h) ||_1,
/// solved exactly by expectimax over the history tree.
RealizabilityResult realizability_gap_exact(const PomdpSpec& spec, const TeacherFn& teacher,
                                            const ApproximatorFn& approx,
                                            std::size_t cap = kDefaultEnumerationCap);

/// The same objective under one fixed policy, computed exactly.
double realizability_along(const PomdpSpec& spec, const TeacherFn& teacher,
                           const ApproximatorFn& approx, const RolloutPolicy& policy,
                           std::size_t cap = kDefaultEnumerationCap);

/// Monte Carlo estimate of the objective under one policy. The approximator
/// is re-solved per truncated key as the conditional mean of the teacher row
/// given the key, estimated from the same episodes; with a full window this
/// is the belief-marginalized expert up to sampling noise.
double realizability_monte_carlo(const PomdpSpec& spec, const TeacherFn& teacher,
                                 int truncation_window, const RolloutPolicy& policy,
                                 std::uint64_t root_seed, std::size_t episodes);

/// Maximum over a supplied policy set; always tagged as a lower bound.
RealizabilityResult realizability_lower_bound(const PomdpSpec& spec, const TeacherFn& teacher,
                                              int truncation_window,
                                              std::span<const RolloutPolicy> policies,
                                              std::uint64_t root_seed, std::size_t episodes);

enum class RecoverabilityScope { kReachable, kAll };

/// max over (t, s, a) of |q - v|; the reachable scope keeps (t, s) pairs that
/// some action sequence reaches with positive probability.
double recoverability(const PomdpSpec& spec, const ValueTables& tables, RecoverabilityScope scope);

/// gamma(N) = (1/N) sum_i l_i(pi_{i-1}) - min_pi (1/N) sum_i l_i(pi), where l_i
/// is the mean cross-entropy over iteration i's corrected labels and
/// `iterates[i]` is pi_i. Iterations without records contribute a zero loss.
double measured_regret(const std::vector<std::vector<LabeledExample>>& losses,
                       const std::vector<const TabularHistoryPolicy*>& iterates, int num_actions,
                       int truncation_window);

/// Minimum of the aggregate loss (1/N) sum_i l_i over all tabular policies.
double best_in_hindsight_loss(const std::vector<std::vector<LabeledExample>>& losses,
                              int num_actions, int truncation_window);

struct TheoremInputs {
  double J = 0.0;
  double expert_J = 0.0;
  double H = 0.0;
  double epsilon = 0.0;
  double gamma = 0.0;
  int horizon = 1;
};

/// J/T - (J_E/T - H (epsilon + gamma)).
double theorem1_slack(const TheoremInputs& in);

struct BoundCheck {
  double slack = 0.0;
  /// True when epsilon is exact; a lower-bound epsilon only yields a
  /// necessary-condition check.
  bool strict = false;
  bool holds = false;
};
BoundCheck check_theorem_bound(const TheoremInputs& in, RealizabilityMethod method,
                               double tolerance = 1e-6);

/// epsilon(pi^E_delta) <= sqrt(2 delta) + 1e-9.
bool check_pinsker_bound(double epsilon, double delta);

/// Central finite differences; returns max |analytic - numeric| / max(1, |analytic|).
using LossWithGradient = std::function<double(std::span<const double> x, std::vector<double>* grad)>;
double grad_check(const LossWithGradient& loss, std::span<const double> point, double step);

/// Flattens a logit table in sorted key order, and back.
struct TableLayout {
  std::vector<HistoryKey> keys;
  int num_actions = 0;
};
TableLayout layout_of(const TabularHistoryPolicy::Table& table, int num_actions);
std::vector<double> flatten(const TabularHistoryPolicy::Table& table, const TableLayout& layout);
void unflatten(std::span<const double> x, const TableLayout& layout, TabularHistoryPolicy& policy);

struct MetricsRow {
  int iteration = 0;
  double J = 0.0;
  double J_se = 0.0;
  double success_rate = 0.0;
  double success_se = 0.0;
  double avg_actions = 0.0;
  double imitation_gap = 0.0;
  double realizability_gap = 0.0;
  RealizabilityMethod realizability_method = RealizabilityMethod::kExact;
  double recoverability_reachable = 0.0;
  double recoverability_all = 0.0;
  double measured_regret = 0.0;
  double theorem1_slack = 0.0;
  /// Mean success over the validation seeds; JSON only.
  std::optional<double> validation_success;
};

struct MetricsReport {
  std::string spec_name;
  std::string config_digest;
  std::uint64_t root_seed = 0;
  int horizon = 1;
  double expert_J = 0.0;
  std::vector<MetricsRow> rows;

  nlohmann::json to_json() const;
  /// Header plus one line per row; columns in MetricsRow order minus the
  /// standard errors.
  std::string to_csv() const;
  static const std::vector<std::string>& csv_columns();
};

/// Formats a double with round-trip precision and no locale dependence.
std::string format_number(double value);

}  // namespace leap
