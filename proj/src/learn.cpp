#include "leap/learn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "leap/errors.hpp"
#include "leap/numerics.hpp"

namespace leap {

namespace {

constexpr double kFrequencyFloor = 1e-15;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_prob(const TabularHistoryPolicy& policy, const HistoryKey& key, int action) {
  const Distribution dist = policy.distribution_for_key(key);
  return std::log(dist[static_cast<std::size_t>(action)]);
}

/// gradient[key] += scale * (one_hot(action) - softmax(logits[key])).
void add_log_prob_gradient(TabularHistoryPolicy::Table& gradient, const HistoryKey& key,
                           const Distribution& dist, int action, double scale) {
  auto [it, inserted] = gradient.try_emplace(key, dist.size(), 0.0);
  for (std::size_t a = 0; a < dist.size(); ++a) {
    const double indicator = static_cast<int>(a) == action ? 1.0 : 0.0;
    it->second[a] += scale * (indicator - dist[a]);
  }
}

void descend(TabularHistoryPolicy& policy, const TabularHistoryPolicy::Table& gradient,
             double learning_rate) {
  // Sorted key order keeps the update independent of hash iteration order.
  std::vector<const HistoryKey*> keys;
  keys.reserve(gradient.size());
  for (const auto& [key, g] : gradient) keys.push_back(&key);
  std::sort(keys.begin(), keys.end(), [](const HistoryKey* a, const HistoryKey* b) { return *a < *b; });
  for (const HistoryKey* key : keys) {
    std::vector<double>& logits = policy.logits_for(*key);
    const std::vector<double>& g = gradient.at(*key);
    for (std::size_t a = 0; a < logits.size(); ++a) logits[a] -= learning_rate * g[a];
  }
}

void check_action(int action, int num_actions) {
  if (action < 0 || action >= num_actions) throw InvalidArgument("action index out of range");
}

}  // namespace

void CorrectionDataset::append_iteration(std::vector<CorrectionRecord> block) {
  const int next = num_iterations() + 1;
  for (const CorrectionRecord& r : block) {
    if (r.iteration > next) {
      throw InvalidArgument("record from iteration " + std::to_string(r.iteration) +
                            " appended at iteration " + std::to_string(next));
    }
  }
  records.insert(records.end(), std::make_move_iterator(block.begin()),
                 std::make_move_iterator(block.end()));
  partition.push_back(records.size());
}

std::span<const CorrectionRecord> CorrectionDataset::iteration_records(int iteration) const {
  if (iteration < 1 || iteration > num_iterations()) {
    throw InvalidArgument("no correction block for iteration " + std::to_string(iteration));
  }
  const std::size_t begin = partition[static_cast<std::size_t>(iteration - 1)];
  const std::size_t end = partition[static_cast<std::size_t>(iteration)];
  return std::span<const CorrectionRecord>(records).subspan(begin, end - begin);
}

std::vector<LabeledExample> CorrectionDataset::sft_examples() const {
  std::vector<LabeledExample> out;
  out.reserve(size());
  for (const DemoRecord& d : demo_records) out.push_back({d.history, d.action});
  for (const CorrectionRecord& r : records) out.push_back({r.history, r.corrected_action});
  return out;
}

std::vector<DemoRecord> generate_demonstrations(const PomdpSpec& spec, const ExpertBundle& expert,
                                                int episodes, std::uint64_t root_seed,
                                                bool greedy) {
  if (episodes < 1) throw InvalidArgument("demo episode count must be >= 1");
  auto nonprivileged = expert.nonprivileged;
  const RolloutPolicy demonstrator = [nonprivileged, greedy](const DecisionPoint& point) {
    Distribution dist = nonprivileged->at(point.history);
    if (greedy) dist = one_hot(dist.size(), argmax_lowest(dist));
    return dist;
  };
  std::vector<DemoRecord> out;
  for (int e = 0; e < episodes; ++e) {
    RandomStream rng =
        RandomStream::derive(root_seed, StreamKind::kDemonstration, static_cast<std::uint64_t>(e));
    for (const RolloutStep& step : rollout(spec, demonstrator, rng).steps) {
      out.push_back({step.history, step.state, step.action});
    }
  }
  return out;
}

void LeapConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument(what); };
  if (num_iterations < 1) fail("num_iterations must be >= 1");
  if (rollouts_per_iteration < 1) fail("rollouts_per_iteration must be >= 1");
  if (update_rule != UpdateRule::kSft && !(beta > 0.0)) fail("beta must be > 0");
  if (lambda_desirable < 0.0 || lambda_undesirable < 0.0) fail("KTO weights must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (optimization_steps < 0) fail("optimization_steps must be >= 0");
  if (truncation_window < 0) fail("truncation_window must be >= 0");
  if (demo_episodes < 1) fail("demo_episodes must be >= 1");
  if (expert_temperature < 0.0) fail("expert_temperature must be >= 0");
  if (teacher.lambda < 0.0) fail("teacher lambda must be >= 0");
  if (teacher.num_samples < 1) fail("teacher num_samples must be >= 1");
}

ObjectiveValue sft_objective(const TabularHistoryPolicy& policy,
                             std::span<const LabeledExample> examples) {
  ObjectiveValue out;
  if (examples.empty()) return out;
  const double scale = 1.0 / static_cast<double>(examples.size());
  for (const LabeledExample& ex : examples) {
    check_action(ex.action, policy.num_actions());
    const HistoryKey key = policy.key_for(ex.history);
    const Distribution dist = policy.distribution_for_key(key);
    out.loss -= scale * std::log(dist[static_cast<std::size_t>(ex.action)]);
    add_log_prob_gradient(out.gradient, key, dist, ex.action, -scale);
  }
  return out;
}

ObjectiveValue dpo_objective(const TabularHistoryPolicy& policy,
                             const TabularHistoryPolicy& reference,
                             std::span<const PreferencePair> pairs, double beta) {
  ObjectiveValue out;
  if (pairs.empty()) return out;
  const double scale = 1.0 / static_cast<double>(pairs.size());
  for (const PreferencePair& pair : pairs) {
    check_action(pair.preferred, policy.num_actions());
    check_action(pair.dispreferred, policy.num_actions());
    const HistoryKey key = policy.key_for(pair.history);
    const HistoryKey ref_key = reference.key_for(pair.history);
    const Distribution dist = policy.distribution_for_key(key);
    const double margin =
        (std::log(dist[pair.preferred]) - log_prob(reference, ref_key, pair.preferred)) -
        (std::log(dist[pair.dispreferred]) - log_prob(reference, ref_key, pair.dispreferred));
    const double z = beta * margin;
    out.loss += scale * softplus(-z);
    // d/dz softplus(-z) = -sigmoid(-z).
    const double coeff = -scale * sigmoid(-z) * beta;
    add_log_prob_gradient(out.gradient, key, dist, pair.preferred, coeff);
    add_log_prob_gradient(out.gradient, key, dist, pair.dispreferred, -coeff);
  }
  return out;
}

double kto_reference_point(const TabularHistoryPolicy& policy,
                           const TabularHistoryPolicy& reference,
                           std::span<const KtoExample> examples) {
  std::set<HistoryKey> keys;
  for (const KtoExample& ex : examples) keys.insert(policy.key_for(ex.history));
  if (keys.empty()) return 0.0;
  double total = 0.0;
  for (const HistoryKey& key : keys) {
    total += kl_divergence(policy.distribution_for_key(key), reference.distribution_for_key(key));
  }
  return std::max(0.0, total / static_cast<double>(keys.size()));
}

ObjectiveValue kto_objective(const TabularHistoryPolicy& policy,
                             const TabularHistoryPolicy& reference,
                             std::span<const KtoExample> examples, double beta,
                             double lambda_desirable, double lambda_undesirable, double z0) {
  ObjectiveValue out;
  if (examples.empty()) return out;
  const double scale = 1.0 / static_cast<double>(examples.size());
  for (const KtoExample& ex : examples) {
    check_action(ex.action, policy.num_actions());
    const double weight = ex.desirable ? lambda_desirable : lambda_undesirable;
    if (weight == 0.0) {
      // Term is identically zero; keep the loss exact without touching keys.
      continue;
    }
    const HistoryKey key = policy.key_for(ex.history);
    const Distribution dist = policy.distribution_for_key(key);
    const double ratio = std::log(dist[ex.action]) - log_prob(reference, reference.key_for(ex.history), ex.action);
    const double x = ex.desirable ? beta * (ratio - z0) : beta * (z0 - ratio);
    const double s = sigmoid(x);
    out.loss += scale * weight * (1.0 - s);
    // d(1 - sigmoid(x))/d ratio = -s (1 - s) dx/d ratio.
    const double dx = ex.desirable ? beta : -beta;
    add_log_prob_gradient(out.gradient, key, dist, ex.action, -scale * weight * s * (1.0 - s) * dx);
  }
  return out;
}

TabularHistoryPolicy fit_sft(std::span<const LabeledExample> examples, int num_actions,
                             int truncation_window) {
  if (examples.empty()) throw InvalidArgument("fit_sft needs a nonempty dataset");
  TabularHistoryPolicy policy(num_actions, truncation_window);
  std::map<HistoryKey, std::vector<double>> counts;
  for (const LabeledExample& ex : examples) {
    check_action(ex.action, num_actions);
    auto [it, inserted] =
        counts.try_emplace(policy.key_for(ex.history), static_cast<std::size_t>(num_actions), 0.0);
    it->second[static_cast<std::size_t>(ex.action)] += 1.0;
  }
  for (auto& [key, row] : counts) {
    double total = 0.0;
    for (double c : row) total += c;
    std::vector<double> logits(row.size());
    for (std::size_t a = 0; a < row.size(); ++a) {
      logits[a] = std::log(std::max(row[a] / total, kFrequencyFloor));
    }
    policy.set_logits(key, std::move(logits));
  }
  return policy;
}

TabularHistoryPolicy fit_sft(const CorrectionDataset& dataset, int num_actions,
                             int truncation_window) {
  const std::vector<LabeledExample> examples = dataset.sft_examples();
  return fit_sft(examples, num_actions, truncation_window);
}

TabularHistoryPolicy fit_sft_gradient(std::span<const LabeledExample> examples, int num_actions,
                                      int truncation_window, double learning_rate, int steps) {
  if (examples.empty()) throw InvalidArgument("fit_sft needs a nonempty dataset");
  TabularHistoryPolicy policy(num_actions, truncation_window);
  for (int i = 0; i < steps; ++i) {
    descend(policy, sft_objective(policy, examples).gradient, learning_rate);
  }
  return policy;
}

std::vector<PreferencePair> preference_pairs(std::span<const CorrectionRecord> records) {
  std::vector<PreferencePair> out;
  for (const CorrectionRecord& r : records) {
    if (r.corrected_action == r.student_action) continue;
    out.push_back({r.history, r.corrected_action, r.student_action});
  }
  return out;
}

std::vector<KtoExample> kto_examples(std::span<const CorrectionRecord> records) {
  std::vector<KtoExample> out;
  for (const CorrectionRecord& r : records) {
    out.push_back({r.history, r.corrected_action, true});
    if (r.corrected_action != r.student_action) out.push_back({r.history, r.student_action, false});
  }
  return out;
}

TabularHistoryPolicy fit_dpo(const PolicySnapshot& reference, std::span<const PreferencePair> pairs,
                             double beta, double learning_rate, int steps) {
  for (const PreferencePair& p : pairs) {
    if (p.preferred == p.dispreferred) throw InvalidArgument("DPO pair prefers an action over itself");
  }
  TabularHistoryPolicy policy = *reference;
  for (int i = 0; i < steps; ++i) {
    descend(policy, dpo_objective(policy, *reference, pairs, beta).gradient, learning_rate);
  }
  return policy;
}

TabularHistoryPolicy fit_kto(const PolicySnapshot& reference, std::span<const KtoExample> examples,
                             double beta, double lambda_desirable, double lambda_undesirable,
                             double learning_rate, int steps) {
  TabularHistoryPolicy policy = *reference;
  for (int i = 0; i < steps; ++i) {
    const double z0 = kto_reference_point(policy, *reference, examples);
    descend(policy,
            kto_objective(policy, *reference, examples, beta, lambda_desirable, lambda_undesirable, z0)
                .gradient,
            learning_rate);
  }
  return policy;
}

PrivilegedPolicy fit_privileged_student(const CorrectionDataset& dataset, int horizon,
                                        int num_states, int num_actions) {
  if (dataset.empty()) throw InvalidArgument("fit_privileged_student needs a nonempty dataset");
  const auto A = static_cast<std::size_t>(num_actions);
  std::vector<std::vector<Distribution>> counts(
      static_cast<std::size_t>(horizon),
      std::vector<Distribution>(static_cast<std::size_t>(num_states), Distribution(A, 0.0)));
  auto add = [&](const HistoryKey& h, int state, int action) {
    const int t = h.length() - 1;
    if (t < 0 || t >= horizon || state < 0 || state >= num_states) {
      throw InvalidArgument("record outside the (step, state) table");
    }
    check_action(action, num_actions);
    counts[t][state][action] += 1.0;
  };
  for (const DemoRecord& d : dataset.demo_records) add(d.history, d.state, d.action);
  for (const CorrectionRecord& r : dataset.records) add(r.history, r.state, r.corrected_action);
  for (auto& layer : counts) {
    for (Distribution& row : layer) {
      double total = 0.0;
      for (double c : row) total += c;
      if (total == 0.0) {
        row = uniform_distribution(A);
      } else {
        for (double& c : row) c /= total;
      }
    }
  }
  return PrivilegedPolicy(std::move(counts));
}

namespace {

ExpertKind expert_kind_for(const LeapConfig& config, const CorrectionDataset& dataset,
                           const PomdpSpec& spec) {
  switch (config.teacher.type) {
    case TeacherType::kPrivileged: return ExpertKind::privileged();
    case TeacherType::kNonprivileged: return ExpertKind::constrained(0.0);
    case TeacherType::kConstrained: return ExpertKind::constrained(config.teacher.delta);
    case TeacherType::kSampled:
      return ExpertKind::sampled(config.teacher.lambda, config.teacher.num_samples);
    case TeacherType::kSelf:
      return ExpertKind::external_policy(std::make_shared<const PrivilegedPolicy>(
          fit_privileged_student(dataset, spec.horizon, spec.num_states, spec.num_actions)));
  }
  throw InvalidArgument("unknown teacher type");
}

/// Teacher row used for the realizability diagnostics. Sampled and self
/// teachers are measured through the privileged expert they approximate.
struct GapTeacher {
  TeacherFn teacher;
  ApproximatorFn approx;
};

GapTeacher gap_teacher_for(const LeapConfig& config, const ExpertBundle& bundle) {
  switch (config.teacher.type) {
    case TeacherType::kNonprivileged:
      return {constrained_teacher(bundle, 0.0), constraint_center_approximator(bundle)};
    case TeacherType::kConstrained:
      return {constrained_teacher(bundle, config.teacher.delta),
              constraint_center_approximator(bundle)};
    default:
      return {privileged_teacher(bundle), nonprivileged_approximator(bundle)};
  }
}

Performance evaluate_iterate(const PomdpSpec& spec, const RolloutPolicy& policy,
                             const LeapConfig& config, const AnalysisOptions& options) {
  if (options.try_exact) {
    try {
      return evaluate_exact(spec, policy, options.exact_cap);
    } catch (const ResourceLimit&) {
    }
  }
  return evaluate_monte_carlo(spec, policy, config.root_seed, options.evaluation_episodes);
}

MetricsReport build_report(const PomdpSpec& spec, const LeapConfig& config,
                           const ExpertBundle& bundle, const std::vector<PolicySnapshot>& snapshots,
                           const CorrectionDataset& dataset, const AnalysisOptions& options) {
  MetricsReport report;
  report.spec_name = spec.name;
  report.root_seed = config.root_seed;
  report.horizon = spec.horizon;
  report.expert_J = evaluate_privileged(spec, *bundle.privileged).J;
  const double h_all = recoverability(spec, bundle.tables, RecoverabilityScope::kAll);
  const double h_reachable = recoverability(spec, bundle.tables, RecoverabilityScope::kReachable);

  const GapTeacher gap = gap_teacher_for(config, bundle);
  const bool full_window = config.truncation_window >= spec.horizon - 1;
  std::optional<RealizabilityResult> exact_gap;
  if (full_window && options.try_exact) {
    try {
      exact_gap = realizability_gap_exact(spec, gap.teacher, gap.approx, options.exact_cap);
    } catch (const ResourceLimit&) {
    }
  }

  std::vector<std::vector<LabeledExample>> losses;
  std::vector<const TabularHistoryPolicy*> played;
  double running_lower_bound = 0.0;
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const PolicySnapshot& snap = snapshots[i];
    const RolloutPolicy policy = as_rollout_policy(snap.policy);
    const Performance perf = evaluate_iterate(spec, policy, config, options);

    MetricsRow row;
    row.iteration = snap.iteration;
    row.J = perf.J;
    row.J_se = perf.J_se;
    row.success_rate = perf.success_rate;
    row.success_se = perf.success_se;
    row.avg_actions = perf.avg_actions;
    row.imitation_gap = imitation_gap(report.expert_J, perf.J, spec.horizon);
    if (exact_gap) {
      row.realizability_gap = exact_gap->value;
      row.realizability_method = RealizabilityMethod::kExact;
    } else {
      running_lower_bound = std::max(
          running_lower_bound,
          realizability_monte_carlo(spec, gap.teacher, config.truncation_window, policy,
                                    config.root_seed, options.realizability_episodes));
      row.realizability_gap = running_lower_bound;
      row.realizability_method = RealizabilityMethod::kLowerBound;
    }
    row.recoverability_reachable = h_reachable;
    row.recoverability_all = h_all;
    if (i > 0) {
      std::vector<LabeledExample> block;
      for (const CorrectionRecord& r : dataset.iteration_records(static_cast<int>(i))) {
        block.push_back({r.history, r.corrected_action});
      }
      losses.push_back(std::move(block));
      played.push_back(snapshots[i - 1].policy.get());
      row.measured_regret =
          measured_regret(losses, played, spec.num_actions, config.truncation_window);
    }
    row.theorem1_slack = theorem1_slack({row.J, report.expert_J, h_all, row.realizability_gap,
                                         row.measured_regret, spec.horizon});
    if (!config.validation_seeds.empty()) {
      row.validation_success = evaluate_on_seeds(spec, policy, config.validation_seeds).success_rate;
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace

LeapResult leap_run(const PomdpSpec& spec, const LeapConfig& config, const CorrectionDataset& demos,
                    const AnalysisOptions& analysis) {
  config.validate();
  if (demos.empty()) throw InvalidArgument("leap_run needs demonstrations");
  const ExpertBundle bundle = ExpertBundle::build(spec, config.expert_temperature);

  LeapResult result;
  result.dataset = demos;
  CorrectionDataset& dataset = result.dataset;
  result.snapshots.push_back(PolicySnapshot::capture(
      fit_sft(dataset, spec.num_actions, config.truncation_window), 0));

  for (int i = 1; i <= config.num_iterations; ++i) {
    const PolicySnapshot& previous = result.snapshots.back();
    const RolloutPolicy student = as_rollout_policy(previous.policy);
    std::vector<PrivilegedRollout> rollouts;
    rollouts.reserve(static_cast<std::size_t>(config.rollouts_per_iteration));
    for (int r = 0; r < config.rollouts_per_iteration; ++r) {
      RandomStream rng = RandomStream::derive(
          config.root_seed, StreamKind::kRollout,
          (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint64_t>(r));
      rollouts.push_back(rollout(spec, student, rng));
    }
    const ExpertKind kind = expert_kind_for(config, dataset, spec);
    dataset.append_iteration(
        correct_rollouts(rollouts, bundle, config.mode, kind, i, config.root_seed));
    const auto block = dataset.iteration_records(i);

    TabularHistoryPolicy next(spec.num_actions, config.truncation_window);
    switch (config.update_rule) {
      case UpdateRule::kSft:
        next = fit_sft(dataset, spec.num_actions, config.truncation_window);
        break;
      case UpdateRule::kDpo: {
        const auto pairs = preference_pairs(block);
        next = fit_dpo(previous, pairs, config.beta, config.learning_rate, config.optimization_steps);
        break;
      }
      case UpdateRule::kKto: {
        const auto examples = kto_examples(block);
        next = fit_kto(previous, examples, config.beta, config.lambda_desirable,
                       config.lambda_undesirable, config.learning_rate, config.optimization_steps);
        break;
      }
    }
    result.snapshots.push_back(PolicySnapshot::capture(next, i));
  }

  result.report = build_report(spec, config, bundle, result.snapshots, dataset, analysis);
  return result;
}

PolicySnapshot select_best(const std::vector<PolicySnapshot>& snapshots, const PomdpSpec& spec,
                           const std::vector<std::uint64_t>& validation_seeds) {
  if (snapshots.empty()) throw InvalidArgument("select_best needs at least one snapshot");
  if (snapshots.size() == 1) return snapshots.front();
  std::size_t best = 0;
  double best_success = -1.0;
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const double success =
        evaluate_on_seeds(spec, as_rollout_policy(snapshots[i].policy), validation_seeds).success_rate;
    if (success > best_success) {
      best_success = success;
      best = i;
    }
  }
  return snapshots[best];
}

std::string to_string(UpdateRule rule) {
  switch (rule) {
    case UpdateRule::kSft: return "sft";
    case UpdateRule::kDpo: return "dpo";
    case UpdateRule::kKto: return "kto";
  }
  return "unknown";
}

std::string to_string(TeacherType type) {
  switch (type) {
    case TeacherType::kPrivileged: return "privileged";
    case TeacherType::kNonprivileged: return "nonprivileged";
    case TeacherType::kConstrained: return "constrained";
    case TeacherType::kSampled: return "sampled";
    case TeacherType::kSelf: return "self";
  }
  return "unknown";
}

}  // namespace leap
