#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "leap/analysis.hpp"
#include "leap/environments.hpp"
#include "leap/errors.hpp"
#include "leap/learn.hpp"
#include "leap/numerics.hpp"
#include "oracles.hpp"

using namespace leap;

namespace {

RolloutPolicy fixed(Distribution d) {
  return [d](const DecisionPoint&) { return d; };
}

// Listens first, then mostly trusts the last observation.
RolloutPolicy tiger_heuristic() {
  return [](const DecisionPoint& d) {
    if (d.history.length() == 1) return Distribution{0.7, 0.15, 0.15};
    return d.history.last_observation() == tiger::kHearLeft ? Distribution{0.3, 0.1, 0.6}
                                                            : Distribution{0.3, 0.6, 0.1};
  };
}

oracle::AnyPolicy as_any(const RolloutPolicy& p) {
  return [p](int t, int s, const HistoryKey& h) { return p(DecisionPoint{t, s, h}); };
}

}  // namespace

TEST_CASE("exact evaluation") {
  PomdpSpec chain;
  chain.name = "unit";
  chain.num_states = 1;
  chain.num_actions = 1;
  chain.num_observations = 1;
  chain.horizon = 7;
  chain.initial_dist = {1.0};
  chain.transition = {{{1.0}}};
  chain.observation_model = {{{1.0}, {1.0}}};
  chain.reward = {{1.0}};
  chain.validate();
  const Performance unit = evaluate_exact(chain, fixed({1.0}));
  CHECK(unit.J == 7.0);
  CHECK(unit.avg_actions == 7.0);
  CHECK(unit.exact);

  const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, 3);
  const Performance perf = evaluate_exact(spec, tiger_heuristic());
  const oracle::Value expected = oracle::evaluate(spec, as_any(tiger_heuristic()));
  CHECK(std::abs(perf.J - expected.J) <= 1e-12);
  CHECK(std::abs(perf.success_rate - expected.success) <= 1e-12);
  CHECK(std::abs(perf.avg_actions - expected.actions) <= 1e-12);
  CHECK_THROWS_AS(evaluate_exact(spec, tiger_heuristic(), 5), ResourceLimit);
}

TEST_CASE("exact and Monte Carlo agree on tiger") {
  const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, 3);
  const Performance exact = evaluate_exact(spec, tiger_heuristic());
  const Performance mc = evaluate_monte_carlo(spec, tiger_heuristic(), 12, 100000);
  CHECK(mc.episodes == 100000);
  CHECK_FALSE(mc.exact);
  CHECK(std::abs(mc.J - exact.J) <= 3 * mc.J_se);
  CHECK(std::abs(mc.success_rate - exact.success_rate) <= 3 * mc.success_se);
  CHECK(std::abs(mc.avg_actions - exact.avg_actions) <= 3 * mc.avg_actions_se);
}

TEST_CASE("privileged expert with privileged feedback earns its value") {
  for (const PomdpSpec& spec :
       {build_tiger(0.85, -1, 10, -100, 3), build_hidden_object_world(4, {3, 1, 1, 1}, 8)}) {
    const ExpertBundle bundle = ExpertBundle::build(spec);
    double expected = 0.0;
    for (int s = 0; s < spec.num_states; ++s) expected += spec.initial_dist[s] * bundle.tables.v[0][s];
    CHECK(std::abs(evaluate_privileged(spec, *bundle.privileged).J - expected) <= 1e-12);
    CHECK(std::abs(imitation_gap(spec, *bundle.privileged, as_rollout_policy(bundle.privileged))) <= 1e-12);
  }
}

TEST_CASE("imitation gap") {
  CHECK(imitation_gap(5.0, 2.0, 3) == -imitation_gap(2.0, 5.0, 3));
  CHECK(imitation_gap(5.0, 2.0, 3) == 1.0);

  const PomdpSpec observed = make_fully_observed(build_tiger(0.85, -1, 10, -100, 3));
  const ExpertBundle ob = ExpertBundle::build(observed);
  CHECK(std::abs(imitation_gap(observed, *ob.privileged, as_rollout_policy(ob.nonprivileged))) <=
        1e-12);

  const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, 2);
  const ExpertBundle bundle = ExpertBundle::build(spec);
  const double expert_J =
      oracle::evaluate(spec, [&](int t, int s, const HistoryKey&) { return bundle.privileged->at(t, s); }).J;
  const double policy_J = oracle::evaluate(spec, as_any(tiger_heuristic())).J;
  CHECK(std::abs(imitation_gap(spec, *bundle.privileged, tiger_heuristic()) -
                 (expert_J - policy_J) / 2.0) <= 1e-12);
}

TEST_CASE("realizability gap: trivial cases") {
  const PomdpSpec observed = make_fully_observed(build_tiger(0.85, -1, 10, -100, 3));
  const ExpertBundle ob = ExpertBundle::build(observed);
  const RealizabilityResult zero = realizability_gap_exact(
      observed, privileged_teacher(ob), nonprivileged_approximator(ob));
  CHECK(zero.value == 0.0);
  CHECK(zero.method == RealizabilityMethod::kExact);

  const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, 3);
  const TeacherFn listen = [](int, int, const HistoryKey&) { return Distribution{1, 0, 0}; };
  const ApproximatorFn open = [](const HistoryKey&) { return Distribution{0, 1, 0}; };
  CHECK(std::abs(realizability_gap_exact(spec, listen, open).value - 2.0) <= 1e-12);
}

TEST_CASE("tiger realizability equals the best deterministic policy") {
  for (int horizon : {2, 3}) {
    const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, horizon);
    const ExpertBundle bundle = ExpertBundle::build(spec);
    const auto teacher = [&](int t, int s, const HistoryKey&) { return bundle.privileged->at(t, s); };
    const auto approx = [&](const HistoryKey& h) {
      const Distribution post = oracle::posterior(spec, h);
      Distribution mix(3, 0.0);
      const int t = h.length() - 1;
      for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 3; ++a) mix[a] += post[s] * bundle.privileged->at(t, s)[a];
      return mix;
    };
    double brute = 0.0;
    const auto policies = oracle::deterministic_policies(spec);
    for (const auto& tree : policies)
      brute = std::max(brute, oracle::realizability_along(spec, oracle::as_policy(spec, tree), teacher, approx));
    const RealizabilityResult exact =
        realizability_gap_exact(spec, privileged_teacher(bundle), nonprivileged_approximator(bundle));
    CHECK(std::abs(exact.value - brute) <= 1e-12);
    CHECK(exact.value > 0.0);

    const double along =
        realizability_along(spec, privileged_teacher(bundle), nonprivileged_approximator(bundle),
                            tiger_heuristic());
    CHECK(std::abs(along - oracle::realizability_along(spec, as_any(tiger_heuristic()), teacher,
                                                        approx)) <= 1e-12);
  }
}

TEST_CASE("lower bound is tagged and near the exact value along the same policy") {
  const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, 3);
  const ExpertBundle bundle = ExpertBundle::build(spec);
  const std::vector<RolloutPolicy> set = {tiger_heuristic()};
  const RealizabilityResult lb = realizability_lower_bound(spec, privileged_teacher(bundle), 1 << 20,
                                                           set, 3, 20000);
  CHECK(lb.method == RealizabilityMethod::kLowerBound);
  const double along = realizability_along(spec, privileged_teacher(bundle),
                                           nonprivileged_approximator(bundle), tiger_heuristic());
  CHECK(std::abs(lb.value - along) <= 0.02);
  CHECK(to_string(RealizabilityMethod::kExact) == "exact");
  CHECK(to_string(RealizabilityMethod::kLowerBound) == "lower_bound");
}

TEST_CASE("constrained teachers satisfy the Pinsker chain") {
  const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, 3);
  const ExpertBundle bundle = ExpertBundle::build(spec);
  for (double delta : {0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 2.0}) {
    const RealizabilityResult eps = realizability_gap_exact(
        spec, constrained_teacher(bundle, delta), constraint_center_approximator(bundle));
    CHECK(check_pinsker_bound(eps.value, delta));
  }
  CHECK_FALSE(check_pinsker_bound(0.5, 0.01));
}

TEST_CASE("recoverability") {
  PomdpSpec flat;
  flat.name = "flat";
  flat.num_states = 1;
  flat.num_actions = 2;
  flat.num_observations = 1;
  flat.horizon = 3;
  flat.initial_dist = {1.0};
  flat.transition = {{{1.0}, {1.0}}};
  flat.observation_model = {{{1.0}, {1.0}, {1.0}}};
  flat.reward = {{2.0, 2.0}};
  flat.validate();
  CHECK(recoverability(flat, solve_privileged(flat), RecoverabilityScope::kAll) == 0.0);

  flat.horizon = 1;
  flat.reward = {{0.0, -5.0}};
  CHECK(recoverability(flat, solve_privileged(flat), RecoverabilityScope::kAll) == 5.0);

  const PomdpSpec spec = build_tiger();
  const ValueTables tables = solve_privileged(spec);
  double scan = 0.0;
  for (int t = 0; t < tables.horizon(); ++t)
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 3; ++a) scan = std::max(scan, std::abs(tables.q[t][s][a] - tables.v[t][s]));
  CHECK(std::abs(recoverability(spec, tables, RecoverabilityScope::kAll) - scan) <= 1e-12);
  CHECK(std::abs(recoverability(spec, tables, RecoverabilityScope::kReachable) - scan) <= 1e-12);
}

TEST_CASE("reachable recoverability skips unreachable states") {
  const PomdpSpec spec = build_hidden_object_world(3, {1, 1, 0}, 4);
  const ValueTables tables = solve_privileged(spec);
  // Forward reachability over every action sequence.
  std::vector<std::set<int>> reach(static_cast<std::size_t>(spec.horizon));
  for (int s = 0; s < spec.num_states; ++s)
    if (spec.initial_dist[s] > 0) reach[0].insert(s);
  for (int t = 0; t + 1 < spec.horizon; ++t)
    for (int s : reach[t])
      for (int a = 0; a < spec.num_actions; ++a) {
        if (spec.is_success(s, a)) continue;
        for (int s2 = 0; s2 < spec.num_states; ++s2)
          if (spec.transition[s][a][s2] > 0) reach[t + 1].insert(s2);
      }
  double scan = 0.0;
  for (int t = 0; t < spec.horizon; ++t)
    for (int s : reach[t])
      for (int a = 0; a < spec.num_actions; ++a)
        scan = std::max(scan, std::abs(tables.q[t][s][a] - tables.v[t][s]));
  const double reachable = recoverability(spec, tables, RecoverabilityScope::kReachable);
  CHECK(std::abs(reachable - scan) <= 1e-12);
  CHECK(reachable <= recoverability(spec, tables, RecoverabilityScope::kAll));
}

TEST_CASE("measured regret") {
  const HistoryKey k({0});
  SUBCASE("hand-sized two-round instance") {
    const std::vector<std::vector<LabeledExample>> losses = {{{k, 0}, {k, 0}, {k, 1}}, {{k, 1}}};
    TabularHistoryPolicy pi0(2, 4), pi1(2, 4);
    pi1.set_logits(k, {std::log(0.8), std::log(0.2)});
    const double played = (std::log(2.0) + -std::log(0.2)) / 2.0;
    // Block weights 1/3 and 1: counts (2/3, 1/3 + 1) over a total mass of 2.
    const double hindsight = -((2.0 / 3.0) * std::log(1.0 / 3.0) + (4.0 / 3.0) * std::log(2.0 / 3.0)) / 2.0;
    CHECK(std::abs(best_in_hindsight_loss(losses, 2, 4) - hindsight) <= 1e-10);
    CHECK(std::abs(measured_regret(losses, {&pi0, &pi1}, 2, 4) - (played - hindsight)) <= 1e-10);
  }
  SUBCASE("iterates at the aggregate minimizer have zero regret") {
    const std::vector<std::vector<LabeledExample>> losses = {{{k, 0}, {k, 1}}, {{k, 0}, {k, 0}}};
    std::vector<LabeledExample> all;
    for (const auto& block : losses) all.insert(all.end(), block.begin(), block.end());
    const TabularHistoryPolicy best = fit_sft(std::span(all), 2, 4);
    CHECK(std::abs(measured_regret(losses, {&best, &best}, 2, 4)) <= 1e-10);
  }
  SUBCASE("a fixed policy never beats the best in hindsight") {
    std::mt19937_64 gen(2);
    std::uniform_int_distribution<int> key(0, 2), act(0, 2);
    std::normal_distribution<double> normal(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<std::vector<LabeledExample>> losses(3);
      for (auto& block : losses)
        for (int i = 0; i < 1 + trial % 5; ++i) block.push_back({HistoryKey({key(gen)}), act(gen)});
      TabularHistoryPolicy p(3, 4);
      for (int h = 0; h < 3; ++h) p.set_logits(HistoryKey({h}), {normal(gen), normal(gen), normal(gen)});
      CHECK(measured_regret(losses, {&p, &p, &p}, 3, 4) >= -1e-12);
    }
  }
}

TEST_CASE("theorem bound checks") {
  CHECK(theorem1_slack({4.0, 4.0, 3.0, 0.0, 0.0, 5}) == 0.0);
  for (double h : {0.0, 1.0, 7.5})
    for (double eps : {0.0, 0.3})
      for (double gamma : {0.0, 0.2}) CHECK(theorem1_slack({4.0, 4.0, h, eps, gamma, 5}) >= 0.0);

  const BoundCheck exact = check_theorem_bound({1.0, 4.0, 2.0, 0.1, 0.05, 3}, RealizabilityMethod::kExact);
  CHECK(exact.strict);
  CHECK(std::abs(exact.slack - (1.0 / 3 - (4.0 / 3 - 2.0 * 0.15))) <= 1e-15);
  CHECK(exact.holds == (exact.slack >= -1e-6));
  CHECK_FALSE(check_theorem_bound({1, 4, 2, 0.1, 0.05, 3}, RealizabilityMethod::kLowerBound).strict);
}

TEST_CASE("grad_check on a quadratic") {
  const LossWithGradient quad = [](std::span<const double> x, std::vector<double>* g) {
    double v = 0.0;
    if (g) g->assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      v += (i + 1.0) * x[i] * x[i] + x[i];
      if (g) (*g)[i] = 2.0 * (i + 1.0) * x[i] + 1.0;
    }
    return v;
  };
  CHECK(grad_check(quad, std::vector<double>{0.3, -1.2, 4.0}, 1e-3) <= 1e-10);
  CHECK_THROWS_AS(grad_check(quad, std::vector<double>{1.0}, 0.0), InvalidArgument);
}

TEST_CASE("report rows on tiger are exact and recompute their slack") {
  const PomdpSpec spec = build_tiger(0.85, -1, 10, -100, 3);
  const ExpertBundle bundle = ExpertBundle::build(spec);
  LeapConfig config;
  config.num_iterations = 2;
  config.rollouts_per_iteration = 100;
  config.root_seed = 3;
  CorrectionDataset demos;
  demos.demo_records = generate_demonstrations(spec, bundle, 10, config.root_seed);
  const LeapResult run = leap_run(spec, config, demos);
  const MetricsReport& report = run.report;
  CHECK(report.rows.size() == 3);
  for (const MetricsRow& row : report.rows) {
    CHECK(row.realizability_method == RealizabilityMethod::kExact);
    CHECK(row.success_rate >= 0.0);
    CHECK(row.success_rate <= 1.0);
    CHECK(row.avg_actions >= 0.0);
    CHECK(row.avg_actions <= spec.horizon);
    const double slack = theorem1_slack({row.J, report.expert_J, row.recoverability_all,
                                         row.realizability_gap, row.measured_regret, spec.horizon});
    CHECK(std::abs(slack - row.theorem1_slack) <= 1e-12);
    CHECK(row.theorem1_slack >= -1e-6);
  }

  const std::string csv = report.to_csv();
  CHECK(csv.substr(0, csv.find('\n')) ==
        "iteration,J,success_rate,avg_actions,imitation_gap,realizability_gap,realizability_method,"
        "recoverability_reachable,recoverability_all,measured_regret,theorem1_slack");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const nlohmann::json doc = report.to_json();
  CHECK(doc.at("metadata").at("spec_name") == "tiger");
  CHECK(doc.at("rows").size() == 3);
}

TEST_CASE("number formatting round-trips") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1e-17, 123456.789, 1.0 / 3.0}) {
    CHECK(std::stod(format_number(v)) == v);
  }
  CHECK(format_number(1.0) == "1");
}

TEST_CASE("table layout round trip") {
  TabularHistoryPolicy p(2, 4);
  p.set_logits(HistoryKey({1}), {0.5, -0.5});
  p.set_logits(HistoryKey({0}), {1.5, 2.5});
  const TableLayout layout = layout_of(p.table(), 2);
  CHECK(layout.keys.front() == HistoryKey({0}));
  const std::vector<double> x = flatten(p.table(), layout);
  CHECK(x == std::vector<double>{1.5, 2.5, 0.5, -0.5});
  TabularHistoryPolicy q(2, 4);
  unflatten(x, layout, q);
  CHECK(q.action_distribution(HistoryKey({1})) == p.action_distribution(HistoryKey({1})));
}
