#include "leap/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "leap/errors.hpp"
#include "leap/numerics.hpp"

namespace leap {

namespace {

struct SampleStats {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
  double standard_error() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var =
        std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};

Performance summarize(const SampleStats& J, const SampleStats& success, const SampleStats& actions) {
  Performance out;
  out.J = J.mean();
  out.J_se = J.standard_error();
  out.success_rate = success.mean();
  out.success_se = success.standard_error();
  out.avg_actions = actions.mean();
  out.avg_actions_se = actions.standard_error();
  out.episodes = J.n;
  return out;
}

void accumulate_episode(const PrivilegedRollout& episode, SampleStats& J, SampleStats& success,
                        SampleStats& actions) {
  J.add(episode.total_reward);
  success.add(episode.succeeded ? 1.0 : 0.0);
  actions.add(static_cast<double>(episode.steps.size()));
}

/// Per-state action rows of a policy at one node; empty for zero-mass states.
std::vector<Distribution> policy_rows(const PomdpSpec& spec, const RolloutPolicy& policy, int t,
                                      const HistoryKey& history, const WeightedBelief& node) {
  std::vector<Distribution> rows(static_cast<std::size_t>(spec.num_states));
  for (int s = 0; s < spec.num_states; ++s) {
    if (node.belief[s] == 0.0) continue;
    rows[s] = policy(DecisionPoint{t, s, history});
    if (!is_distribution(rows[s], static_cast<std::size_t>(spec.num_actions))) {
      throw ContractViolation("policy returned a malformed action distribution");
    }
  }
  return rows;
}

/// Column `action` of the per-state rows; false when no state takes it.
bool action_weights(const std::vector<Distribution>& rows, int action, Distribution& weight) {
  bool any = false;
  for (std::size_t s = 0; s < rows.size(); ++s) {
    weight[s] = rows[s].empty() ? 0.0 : rows[s][static_cast<std::size_t>(action)];
    any = any || weight[s] > 0.0;
  }
  return any;
}

class NodeBudget {
 public:
  explicit NodeBudget(std::size_t cap) : cap_(cap) {}
  void charge() {
    if (++used_ > cap_) {
      throw ResourceLimit("history tree exceeds cap " + std::to_string(cap_));
    }
  }

 private:
  std::size_t cap_;
  std::size_t used_ = 0;
};

struct ExactAccumulator {
  const PomdpSpec& spec;
  const RolloutPolicy& policy;
  NodeBudget budget;
  double J = 0.0;
  double success = 0.0;
  double actions = 0.0;

  void visit(const HistoryKey& history, const WeightedBelief& node, int t) {
    if (t >= spec.horizon) return;
    budget.charge();
    const auto rows = policy_rows(spec, policy, t, history, node);
    Distribution weight(static_cast<std::size_t>(spec.num_states), 0.0);
    for (int a = 0; a < spec.num_actions; ++a) {
      if (!action_weights(rows, a, weight)) continue;
      const Propagation prop = propagate(spec, node, a, weight);
      J += prop.expected_reward;
      success += prop.success_mass;
      actions += prop.action_mass;
      for (const auto& [o, child] : prop.children) visit(history.extended(a, o), child, t + 1);
    }
  }
};

double weighted_l1(const PomdpSpec& spec, const TeacherFn& teacher, const Distribution& approx,
                   int t, const HistoryKey& history, const WeightedBelief& node) {
  double cost = 0.0;
  const double mass = node.mass();
  for (int s = 0; s < spec.num_states; ++s) {
    const double w = node.belief[s];
    if (w == 0.0) continue;
    cost += w * l1_distance(teacher(t, s, history), approx);
  }
  return cost * mass;
}

struct Expectimax {
  const PomdpSpec& spec;
  const TeacherFn& teacher;
  const ApproximatorFn& approx;
  NodeBudget budget;

  double value(const HistoryKey& history, const WeightedBelief& node, int t) {
    if (t >= spec.horizon) return 0.0;
    budget.charge();
    const double here = weighted_l1(spec, teacher, approx(history), t, history, node);
    const Distribution all_states(static_cast<std::size_t>(spec.num_states), 1.0);
    double best = 0.0;
    for (int a = 0; a < spec.num_actions; ++a) {
      const Propagation prop = propagate(spec, node, a, all_states);
      double total = 0.0;
      for (const auto& [o, child] : prop.children) total += value(history.extended(a, o), child, t + 1);
      best = std::max(best, total);
    }
    return here + best;
  }
};

struct PolicyExpectation {
  const PomdpSpec& spec;
  const TeacherFn& teacher;
  const ApproximatorFn& approx;
  const RolloutPolicy& policy;
  NodeBudget budget;

  double value(const HistoryKey& history, const WeightedBelief& node, int t) {
    if (t >= spec.horizon) return 0.0;
    budget.charge();
    double total = weighted_l1(spec, teacher, approx(history), t, history, node);
    const auto rows = policy_rows(spec, policy, t, history, node);
    Distribution weight(static_cast<std::size_t>(spec.num_states), 0.0);
    for (int a = 0; a < spec.num_actions; ++a) {
      if (!action_weights(rows, a, weight)) continue;
      const Propagation prop = propagate(spec, node, a, weight);
      for (const auto& [o, child] : prop.children) total += value(history.extended(a, o), child, t + 1);
    }
    return total;
  }
};

}  // namespace

Performance evaluate_exact(const PomdpSpec& spec, const RolloutPolicy& policy, std::size_t cap) {
  ExactAccumulator acc{spec, policy, NodeBudget(cap)};
  for (const auto& [history, node] : root_histories(spec)) acc.visit(history, node, 0);
  Performance out;
  out.J = acc.J;
  out.success_rate = acc.success;
  out.avg_actions = acc.actions;
  out.exact = true;
  return out;
}

Performance evaluate_monte_carlo(const PomdpSpec& spec, const RolloutPolicy& policy,
                                 std::uint64_t root_seed, std::size_t episodes, StreamKind kind) {
  SampleStats J, success, actions;
  for (std::size_t i = 0; i < episodes; ++i) {
    RandomStream rng = RandomStream::derive(root_seed, kind, i);
    accumulate_episode(rollout(spec, policy, rng), J, success, actions);
  }
  return summarize(J, success, actions);
}

Performance evaluate_on_seeds(const PomdpSpec& spec, const RolloutPolicy& policy,
                              std::span<const std::uint64_t> seeds) {
  SampleStats J, success, actions;
  for (std::uint64_t seed : seeds) {
    RandomStream rng = RandomStream::derive(seed, StreamKind::kValidation, 0);
    accumulate_episode(rollout(spec, policy, rng), J, success, actions);
  }
  return summarize(J, success, actions);
}

Performance evaluate_privileged(const PomdpSpec& spec, const PrivilegedPolicy& policy) {
  const auto S = static_cast<std::size_t>(spec.num_states);
  Distribution dist = spec.initial_dist;
  Performance out;
  out.exact = true;
  for (int t = 0; t < spec.horizon; ++t) {
    Distribution next(S, 0.0);
    for (int s = 0; s < spec.num_states; ++s) {
      if (dist[s] == 0.0) continue;
      const Distribution& row = policy.at(t, s);
      for (int a = 0; a < spec.num_actions; ++a) {
        const double w = dist[s] * row[a];
        if (w == 0.0) continue;
        out.J += w * spec.reward[s][a];
        out.avg_actions += w;
        if (spec.is_success(s, a)) {
          out.success_rate += w;
          continue;
        }
        const Distribution& trans = spec.transition[s][a];
        for (std::size_t n = 0; n < S; ++n) next[n] += w * trans[n];
      }
    }
    dist = std::move(next);
  }
  return out;
}

double imitation_gap(double expert_J, double policy_J, int horizon) {
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  return (expert_J - policy_J) / static_cast<double>(horizon);
}

double imitation_gap(const PomdpSpec& spec, const PrivilegedPolicy& expert,
                     const RolloutPolicy& policy, std::size_t cap) {
  return imitation_gap(evaluate_privileged(spec, expert).J, evaluate_exact(spec, policy, cap).J,
                       spec.horizon);
}

std::string to_string(RealizabilityMethod method) {
  return method == RealizabilityMethod::kExact ? "exact" : "lower_bound";
}

TeacherFn privileged_teacher(const ExpertBundle& bundle) {
  auto policy = bundle.privileged;
  return [policy](int t, int s, const HistoryKey&) { return policy->at(t, s); };
}

ApproximatorFn nonprivileged_approximator(const ExpertBundle& bundle) {
  auto expert = bundle.nonprivileged;
  return [expert](const HistoryKey& h) { return expert->at(h); };
}

TeacherFn constrained_teacher(const ExpertBundle& bundle, double delta) {
  return [&bundle, delta](int t, int s, const HistoryKey& h) {
    return bundle.constrained(t, s, h, delta);
  };
}

ApproximatorFn constraint_center_approximator(const ExpertBundle& bundle) {
  return [&bundle](const HistoryKey& h) { return bundle.constraint_center(h); };
}

RealizabilityResult realizability_gap_exact(const PomdpSpec& spec, const TeacherFn& teacher,
                                            const ApproximatorFn& approx, std::size_t cap) {
  Expectimax solver{spec, teacher, approx, NodeBudget(cap)};
  double total = 0.0;
  for (const auto& [history, node] : root_histories(spec)) total += solver.value(history, node, 0);
  return {total / static_cast<double>(spec.horizon), RealizabilityMethod::kExact};
}

double realizability_along(const PomdpSpec& spec, const TeacherFn& teacher,
                           const ApproximatorFn& approx, const RolloutPolicy& policy,
                           std::size_t cap) {
  PolicyExpectation solver{spec, teacher, approx, policy, NodeBudget(cap)};
  double total = 0.0;
  for (const auto& [history, node] : root_histories(spec)) total += solver.value(history, node, 0);
  return total / static_cast<double>(spec.horizon);
}

double realizability_monte_carlo(const PomdpSpec& spec, const TeacherFn& teacher,
                                 int truncation_window, const RolloutPolicy& policy,
                                 std::uint64_t root_seed, std::size_t episodes) {
  if (episodes == 0) throw InvalidArgument("episodes must be >= 1");
  struct Visit {
    std::size_t key_index;
    Distribution row;
  };
  std::map<HistoryKey, std::size_t> key_index;
  std::vector<Distribution> key_sum;
  std::vector<double> key_count;
  std::vector<Visit> visits;
  for (std::size_t i = 0; i < episodes; ++i) {
    RandomStream rng = RandomStream::derive(root_seed, StreamKind::kEvaluation, i);
    const PrivilegedRollout episode = rollout(spec, policy, rng);
    for (const RolloutStep& step : episode.steps) {
      const HistoryKey key = step.history.suffix(truncation_window);
      auto [it, inserted] = key_index.emplace(key, key_sum.size());
      if (inserted) {
        key_sum.emplace_back(static_cast<std::size_t>(spec.num_actions), 0.0);
        key_count.push_back(0.0);
      }
      Distribution row = teacher(step.history.length() - 1, step.state, step.history);
      for (std::size_t a = 0; a < row.size(); ++a) key_sum[it->second][a] += row[a];
      key_count[it->second] += 1.0;
      visits.push_back({it->second, std::move(row)});
    }
  }
  for (std::size_t k = 0; k < key_sum.size(); ++k) {
    for (double& x : key_sum[k]) x /= key_count[k];
  }
  double total = 0.0;
  for (const Visit& v : visits) total += l1_distance(v.row, key_sum[v.key_index]);
  return total / (static_cast<double>(episodes) * static_cast<double>(spec.horizon));
}

RealizabilityResult realizability_lower_bound(const PomdpSpec& spec, const TeacherFn& teacher,
                                              int truncation_window,
                                              std::span<const RolloutPolicy> policies,
                                              std::uint64_t root_seed, std::size_t episodes) {
  double best = 0.0;
  for (const RolloutPolicy& policy : policies) {
    best = std::max(best, realizability_monte_carlo(spec, teacher, truncation_window, policy,
                                                    root_seed, episodes));
  }
  return {best, RealizabilityMethod::kLowerBound};
}

double recoverability(const PomdpSpec& spec, const ValueTables& tables, RecoverabilityScope scope) {
  const auto S = static_cast<std::size_t>(spec.num_states);
  std::vector<char> reachable(S, 0);
  for (std::size_t s = 0; s < S; ++s) reachable[s] = spec.initial_dist[s] > 0.0;
  double best = 0.0;
  for (int t = 0; t < tables.horizon(); ++t) {
    std::vector<char> next(S, 0);
    for (std::size_t s = 0; s < S; ++s) {
      const bool counted = scope == RecoverabilityScope::kAll || reachable[s];
      if (counted) {
        for (double q : tables.q[t][s]) best = std::max(best, std::abs(q - tables.v[t][s]));
      }
      if (!reachable[s]) continue;
      for (int a = 0; a < spec.num_actions; ++a) {
        if (spec.is_success(static_cast<int>(s), a)) continue;
        const Distribution& row = spec.transition[s][a];
        for (std::size_t n = 0; n < S; ++n) {
          if (row[n] > 0.0) next[n] = 1;
        }
      }
    }
    reachable = std::move(next);
  }
  return best;
}

namespace {

/// Weighted label counts per truncated key.
using KeyCounts = std::map<HistoryKey, std::vector<double>>;

void add_counts(KeyCounts& counts, std::span<const LabeledExample> examples, double weight,
                int num_actions, int truncation_window) {
  for (const LabeledExample& ex : examples) {
    auto [it, inserted] = counts.try_emplace(ex.history.suffix(truncation_window),
                                             static_cast<std::size_t>(num_actions), 0.0);
    it->second[static_cast<std::size_t>(ex.action)] += weight;
  }
}

}  // namespace

double best_in_hindsight_loss(const std::vector<std::vector<LabeledExample>>& losses,
                              int num_actions, int truncation_window) {
  if (losses.empty()) return 0.0;
  KeyCounts counts;
  for (const auto& block : losses) {
    if (block.empty()) continue;
    add_counts(counts, block, 1.0 / static_cast<double>(block.size()), num_actions,
               truncation_window);
  }
  double total = 0.0;
  for (const auto& [key, row] : counts) {
    double mass = 0.0;
    for (double c : row) mass += c;
    for (double c : row) {
      if (c > 0.0) total -= c * std::log(c / mass);
    }
  }
  return total / static_cast<double>(losses.size());
}

double measured_regret(const std::vector<std::vector<LabeledExample>>& losses,
                       const std::vector<const TabularHistoryPolicy*>& iterates, int num_actions,
                       int truncation_window) {
  if (losses.empty()) return 0.0;
  if (iterates.size() < losses.size()) {
    throw InvalidArgument("measured_regret needs the iterate that played each round");
  }
  double played = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (losses[i].empty()) continue;
    played += mean_cross_entropy(*iterates[i], losses[i]);
  }
  played /= static_cast<double>(losses.size());
  return played - best_in_hindsight_loss(losses, num_actions, truncation_window);
}

double theorem1_slack(const TheoremInputs& in) {
  const double T = static_cast<double>(in.horizon);
  return in.J / T - (in.expert_J / T - in.H * (in.epsilon + in.gamma));
}

BoundCheck check_theorem_bound(const TheoremInputs& in, RealizabilityMethod method,
                               double tolerance) {
  BoundCheck out;
  out.slack = theorem1_slack(in);
  out.strict = method == RealizabilityMethod::kExact;
  out.holds = out.slack >= -tolerance;
  return out;
}

bool check_pinsker_bound(double epsilon, double delta) {
  return epsilon <= std::sqrt(2.0 * std::max(delta, 0.0)) + 1e-9;
}

double grad_check(const LossWithGradient& loss, std::span<const double> point, double step) {
  if (!(step > 0.0)) throw InvalidArgument("grad_check step must be positive");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> analytic;
  loss(x, &analytic);
  if (analytic.size() != x.size()) throw ContractViolation("gradient has the wrong size");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = loss(x, nullptr);
    x[i] = saved - step;
    const double down = loss(x, nullptr);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

TableLayout layout_of(const TabularHistoryPolicy::Table& table, int num_actions) {
  TableLayout layout;
  layout.num_actions = num_actions;
  for (const auto& [key, logits] : table) layout.keys.push_back(key);
  std::sort(layout.keys.begin(), layout.keys.end());
  return layout;
}

std::vector<double> flatten(const TabularHistoryPolicy::Table& table, const TableLayout& layout) {
  std::vector<double> out;
  out.reserve(layout.keys.size() * static_cast<std::size_t>(layout.num_actions));
  for (const HistoryKey& key : layout.keys) {
    auto it = table.find(key);
    for (int a = 0; a < layout.num_actions; ++a) {
      out.push_back(it == table.end() ? 0.0 : it->second[static_cast<std::size_t>(a)]);
    }
  }
  return out;
}

void unflatten(std::span<const double> x, const TableLayout& layout, TabularHistoryPolicy& policy) {
  const auto A = static_cast<std::size_t>(layout.num_actions);
  if (x.size() != layout.keys.size() * A) throw InvalidArgument("flat vector has the wrong size");
  for (std::size_t k = 0; k < layout.keys.size(); ++k) {
    policy.set_logits(layout.keys[k], std::vector<double>(x.begin() + k * A, x.begin() + (k + 1) * A));
  }
}

std::string format_number(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, result.ptr);
}

const std::vector<std::string>& MetricsReport::csv_columns() {
  static const std::vector<std::string> columns = {
      "iteration",           "J",
      "success_rate",        "avg_actions",
      "imitation_gap",       "realizability_gap",
      "realizability_method", "recoverability_reachable",
      "recoverability_all",  "measured_regret",
      "theorem1_slack"};
  return columns;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const MetricsRow& r : rows) {
    rows_json.push_back({{"iteration", r.iteration},
                         {"J", r.J},
                         {"J_se", r.J_se},
                         {"success_rate", r.success_rate},
                         {"success_se", r.success_se},
                         {"avg_actions", r.avg_actions},
                         {"imitation_gap", r.imitation_gap},
                         {"realizability_gap", r.realizability_gap},
                         {"realizability_method", to_string(r.realizability_method)},
                         {"recoverability_reachable", r.recoverability_reachable},
                         {"recoverability_all", r.recoverability_all},
                         {"measured_regret", r.measured_regret},
                         {"theorem1_slack", r.theorem1_slack}});
    if (r.validation_success) rows_json.back()["validation_success"] = *r.validation_success;
  }
  return {{"metadata",
           {{"spec_name", spec_name},
            {"config_digest", config_digest},
            {"root_seed", root_seed},
            {"horizon", horizon},
            {"expert_J", expert_J}}},
          {"rows", rows_json}};
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  const auto& columns = csv_columns();
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << '\n';
  for (const MetricsRow& r : rows) {
    out << r.iteration << ',' << format_number(r.J) << ',' << format_number(r.success_rate) << ','
        << format_number(r.avg_actions) << ',' << format_number(r.imitation_gap) << ','
        << format_number(r.realizability_gap) << ',' << to_string(r.realizability_method) << ','
        << format_number(r.recoverability_reachable) << ',' << format_number(r.recoverability_all)
        << ',' << format_number(r.measured_regret) << ',' << format_number(r.theorem1_slack)
        << '\n';
  }
  return out.str();
}

}  // namespace leap
