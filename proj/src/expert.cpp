#include "leap/expert.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "leap/errors.hpp"
#include "leap/numerics.hpp"

namespace leap {

namespace {

constexpr double kQTieTolerance = 1e-9;

}  // namespace

ValueTables solve_privileged(const PomdpSpec& spec) {
  const auto T = static_cast<std::size_t>(spec.horizon);
  const auto S = static_cast<std::size_t>(spec.num_states);
  const auto A = static_cast<std::size_t>(spec.num_actions);
  ValueTables tables;
  tables.q.assign(T, std::vector<std::vector<double>>(S, std::vector<double>(A, 0.0)));
  tables.v.assign(T, std::vector<double>(S, 0.0));
  std::vector<double> next_v(S, 0.0);
  for (std::size_t step = T; step-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < A; ++a) {
        double value = spec.reward[s][a];
        if (!spec.is_success(static_cast<int>(s), static_cast<int>(a))) {
          const Distribution& row = spec.transition[s][a];
          for (std::size_t next = 0; next < S; ++next) value += row[next] * next_v[next];
        }
        tables.q[step][s][a] = value;
        best = std::max(best, value);
      }
      tables.v[step][s] = best;
    }
    next_v = tables.v[step];
  }
  return tables;
}

const Distribution& PrivilegedPolicy::at(int t, int state) const {
  if (t < 0 || t >= horizon() || state < 0 ||
      state >= static_cast<int>(table_[static_cast<std::size_t>(t)].size())) {
    throw ContractViolation("privileged policy queried outside its table at t=" +
                            std::to_string(t) + ", s=" + std::to_string(state));
  }
  return table_[static_cast<std::size_t>(t)][static_cast<std::size_t>(state)];
}

PrivilegedPolicy make_privileged_policy(const ValueTables& tables, double temperature) {
  if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
  std::vector<std::vector<Distribution>> table(tables.q.size());
  for (std::size_t t = 0; t < tables.q.size(); ++t) {
    table[t].reserve(tables.q[t].size());
    for (const auto& qrow : tables.q[t]) {
      if (temperature == 0.0) {
        table[t].push_back(one_hot(qrow.size(), argmax_lowest(qrow, kQTieTolerance)));
      } else {
        std::vector<double> scaled(qrow);
        for (double& x : scaled) x /= temperature;
        table[t].push_back(softmax(scaled));
      }
    }
  }
  return PrivilegedPolicy(std::move(table));
}

RolloutPolicy as_rollout_policy(std::shared_ptr<const PrivilegedPolicy> policy) {
  return [policy = std::move(policy)](const DecisionPoint& point) {
    return policy->at(point.t, point.state);
  };
}

NonprivilegedExpert::NonprivilegedExpert(std::shared_ptr<const PomdpSpec> spec,
                                         std::shared_ptr<const PrivilegedPolicy> privileged)
    : spec_(std::move(spec)), privileged_(std::move(privileged)) {}

Belief NonprivilegedExpert::belief(const HistoryKey& history) const {
  {
    std::lock_guard lock(mutex_);
    auto it = beliefs_.find(history);
    if (it != beliefs_.end()) return it->second;
  }
  Belief b;
  if (history.entries.size() == 1) {
    b = initial_belief(*spec_, history.entries[0]);
  } else {
    HistoryKey prefix(std::vector<int>(history.entries.begin(), history.entries.end() - 2));
    const int action = history.entries[history.entries.size() - 2];
    b = belief_update(*spec_, belief(prefix), action, history.last_observation());
  }
  std::lock_guard lock(mutex_);
  beliefs_.emplace(history, b);
  return b;
}

Distribution NonprivilegedExpert::from_belief(int t, const Belief& b) const {
  Distribution out(static_cast<std::size_t>(spec_->num_actions), 0.0);
  for (int s = 0; s < spec_->num_states; ++s) {
    const double w = b.probs[static_cast<std::size_t>(s)];
    if (w == 0.0) continue;
    const Distribution& row = privileged_->at(t, s);
    for (std::size_t a = 0; a < out.size(); ++a) out[a] += w * row[a];
  }
  double total = 0.0;
  for (double x : out) total += x;
  for (double& x : out) x /= total;
  return out;
}

Distribution NonprivilegedExpert::at(const HistoryKey& history) const {
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(history);
    if (it != cache_.end()) return it->second;
  }
  Distribution out = from_belief(history.length() - 1, belief(history));
  std::lock_guard lock(mutex_);
  cache_.emplace(history, out);
  return out;
}

NonprivilegedExpert make_nonprivileged_policy(const PomdpSpec& spec,
                                              const PrivilegedPolicy& privileged) {
  return NonprivilegedExpert(std::make_shared<const PomdpSpec>(spec),
                             std::make_shared<const PrivilegedPolicy>(privileged));
}

RolloutPolicy as_rollout_policy(std::shared_ptr<const NonprivilegedExpert> expert) {
  return [expert = std::move(expert)](const DecisionPoint& point) {
    return expert->at(point.history);
  };
}

Distribution geometric_mixture(std::span<const double> p, std::span<const double> q,
                               double alpha) {
  std::vector<double> logits(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    logits[i] = (1.0 - alpha) * std::log(p[i]) + alpha * std::log(q[i]);
  }
  return softmax(logits);
}

ConstrainedProjection constrained_projection(std::span<const double> p,
                                             std::span<const double> q, double delta) {
  if (p.size() != q.size() || p.empty()) throw InvalidArgument("distribution sizes differ");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0) || !(q[i] > 0.0)) {
      throw InvalidArgument("constrained expert needs strictly positive inputs");
    }
  }
  if (!(delta > 0.0)) return {Distribution(q.begin(), q.end()), 1.0, true};
  if (kl_divergence(p, q) <= delta) return {Distribution(p.begin(), p.end()), 0.0, false};

  // KL(path(alpha) || q) falls strictly from KL(p || q) at alpha = 0 to zero
  // at alpha = 1.
  double lo = 0.0;
  double hi = 1.0;
  Distribution best;
  double best_alpha = 1.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    Distribution candidate = geometric_mixture(p, q, mid);
    const double kl = kl_divergence(candidate, q);
    if (kl > delta) {
      lo = mid;
    } else {
      hi = mid;
      best = std::move(candidate);
      best_alpha = mid;
      if (delta - kl <= 1e-12) break;
    }
  }
  if (best.empty()) best = Distribution(q.begin(), q.end());
  return {std::move(best), best_alpha, true};
}

Distribution constrained_expert(std::span<const double> p, std::span<const double> q,
                                double delta) {
  return constrained_projection(p, q, delta).dist;
}

int sampled_penalty_correction(std::span<const double> p, std::span<const double> q,
                               double lambda, int num_samples, RandomStream& rng) {
  if (num_samples < 1) throw InvalidArgument("num_samples must be >= 1");
  if (p.size() != q.size()) throw InvalidArgument("distribution sizes differ");
  std::vector<char> in_pool(p.size(), 0);
  for (int i = 0; i < num_samples; ++i) {
    in_pool[static_cast<std::size_t>(rng.categorical(p))] = 1;
    in_pool[static_cast<std::size_t>(rng.categorical(q))] = 1;
  }
  std::vector<double> log_weight(p.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (in_pool[a] && p[a] > 0.0 && q[a] > 0.0) {
      log_weight[a] = std::log(p[a]) + lambda * std::log(q[a]);
    }
  }
  const Distribution weights = softmax(log_weight);
  return rng.categorical(weights);
}

std::string ExpertKind::describe() const {
  std::ostringstream out;
  switch (type) {
    case Type::kPrivileged: out << "privileged"; break;
    case Type::kConstrained: out << "constrained(delta=" << delta << ")"; break;
    case Type::kSampled: out << "sampled(lambda=" << lambda << ", n=" << num_samples << ")"; break;
    case Type::kExternal: out << "external"; break;
  }
  return out.str();
}

ExpertBundle ExpertBundle::build(const PomdpSpec& spec, double expert_temperature) {
  spec.validate();
  ExpertBundle bundle;
  bundle.spec = std::make_shared<const PomdpSpec>(spec);
  bundle.tables = solve_privileged(spec);
  bundle.privileged = std::make_shared<const PrivilegedPolicy>(
      make_privileged_policy(bundle.tables, expert_temperature));
  bundle.nonprivileged =
      std::make_shared<const NonprivilegedExpert>(bundle.spec, bundle.privileged);
  bundle.expert_temperature = expert_temperature;
  return bundle;
}

Distribution ExpertBundle::constrained(int t, int state, const HistoryKey& history,
                                       double delta) const {
  const Distribution& p = privileged->at(t, state);
  Distribution center = floor_distribution(nonprivileged->at(history), kExpertFloor);
  if (!(delta > 0.0)) return center;
  if (kl_divergence(p, center) <= delta) return p;
  return constrained_projection(floor_distribution(p, kExpertFloor), center, delta).dist;
}

Distribution ExpertBundle::constraint_center(const HistoryKey& history) const {
  return floor_distribution(nonprivileged->at(history), kExpertFloor);
}

nlohmann::json to_json(const CorrectionRecord& record) {
  return {{"history", record.history.entries},
          {"state", record.state},
          {"student_action", record.student_action},
          {"corrected_action", record.corrected_action},
          {"corrected_distribution", record.corrected_distribution},
          {"iteration", record.iteration}};
}

CorrectionRecord correction_from_json(const nlohmann::json& doc) {
  try {
    CorrectionRecord r;
    r.history = HistoryKey(doc.at("history").get<std::vector<int>>());
    r.state = doc.at("state").get<int>();
    r.student_action = doc.at("student_action").get<int>();
    r.corrected_action = doc.at("corrected_action").get<int>();
    r.corrected_distribution = doc.at("corrected_distribution").get<Distribution>();
    r.iteration = doc.at("iteration").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed correction record: ") + e.what());
  }
}

std::string to_jsonl(const std::vector<CorrectionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<CorrectionRecord> corrections_from_jsonl(const std::string& text) {
  std::vector<CorrectionRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(correction_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

std::vector<CorrectionRecord> correct_rollouts(const std::vector<PrivilegedRollout>& rollouts,
                                               const ExpertBundle& expert, CorrectionMode mode,
                                               const ExpertKind& kind, int iteration,
                                               std::uint64_t root_seed) {
  if (kind.type == ExpertKind::Type::kExternal && !kind.external) {
    throw ContractViolation("external expert kind without a policy");
  }
  std::vector<CorrectionRecord> records;
  for (std::size_t r = 0; r < rollouts.size(); ++r) {
    const PrivilegedRollout& episode = rollouts[r];
    if (mode == CorrectionMode::kFailedOnly && episode.succeeded) continue;
    RandomStream rng = RandomStream::derive(
        root_seed, StreamKind::kCorrection,
        (static_cast<std::uint64_t>(iteration) << 32) | static_cast<std::uint64_t>(r));
    for (const RolloutStep& step : episode.steps) {
      const int t = step.history.length() - 1;
      CorrectionRecord record;
      record.history = step.history;
      record.state = step.state;
      record.student_action = step.action;
      record.iteration = iteration;
      switch (kind.type) {
        case ExpertKind::Type::kPrivileged:
          record.corrected_distribution = expert.privileged->at(t, step.state);
          break;
        case ExpertKind::Type::kConstrained:
          record.corrected_distribution =
              expert.constrained(t, step.state, step.history, kind.delta);
          break;
        case ExpertKind::Type::kSampled: {
          const Distribution p =
              floor_distribution(expert.privileged->at(t, step.state), kExpertFloor);
          const Distribution q =
              floor_distribution(expert.nonprivileged->at(step.history), kExpertFloor);
          const int action = sampled_penalty_correction(p, q, kind.lambda, kind.num_samples, rng);
          record.corrected_distribution = one_hot(p.size(), action);
          break;
        }
        case ExpertKind::Type::kExternal:
          record.corrected_distribution = kind.external->at(t, step.state);
          break;
      }
      record.corrected_action = argmax_lowest(record.corrected_distribution);
      records.push_back(std::move(record));
    }
  }
  return records;
}

}  // namespace leap
