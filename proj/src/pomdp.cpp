#include "leap/pomdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "leap/errors.hpp"

namespace leap {

namespace {

void check_index(int value, int bound, const char* what) {
  if (value < 0 || value >= bound) {
    std::ostringstream msg;
    msg << what << " index " << value << " out of range [0, " << bound << ")";
    throw InvalidArgument(msg.str());
  }
}

void check_row(const Distribution& row, int size, const std::string& where) {
  if (!is_distribution(row, static_cast<std::size_t>(size))) {
    throw InvalidArgument("not a probability vector: " + where);
  }
}

}  // namespace

bool is_distribution(std::span<const double> p, std::size_t size, double tolerance) {
  if (p.size() != size) return false;
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= tolerance;
}

void PomdpSpec::validate() const {
  if (num_states < 1 || num_actions < 1 || num_observations < 1) {
    throw InvalidArgument("spec '" + name + "': counts must be positive");
  }
  if (horizon < 1) throw InvalidArgument("spec '" + name + "': horizon must be >= 1");
  check_row(initial_dist, num_states, "initial_dist");
  if (transition.size() != static_cast<std::size_t>(num_states) ||
      reward.size() != static_cast<std::size_t>(num_states) ||
      observation_model.size() != static_cast<std::size_t>(num_states)) {
    throw InvalidArgument("spec '" + name + "': table sizes disagree with num_states");
  }
  for (int s = 0; s < num_states; ++s) {
    if (transition[s].size() != static_cast<std::size_t>(num_actions) ||
        reward[s].size() != static_cast<std::size_t>(num_actions)) {
      throw InvalidArgument("spec '" + name + "': table sizes disagree with num_actions");
    }
    for (int a = 0; a < num_actions; ++a) {
      check_row(transition[s][a], num_states,
                "transition[" + std::to_string(s) + "][" + std::to_string(a) + "]");
      if (!std::isfinite(reward[s][a])) throw InvalidArgument("non-finite reward");
    }
    if (observation_model[s].size() != static_cast<std::size_t>(num_actions + 1)) {
      throw InvalidArgument("spec '" + name +
                            "': observation_model needs num_actions + 1 columns");
    }
    for (int a = 0; a <= num_actions; ++a) {
      check_row(observation_model[s][a], num_observations,
                "observation_model[" + std::to_string(s) + "][" + std::to_string(a) + "]");
    }
  }
  for (const auto& [s, a] : success_predicate) {
    check_index(s, num_states, "success_predicate state");
    check_index(a, num_actions, "success_predicate action");
  }
}

HistoryKey HistoryKey::extended(int action, int observation) const {
  HistoryKey out;
  out.entries.reserve(entries.size() + 2);
  out.entries = entries;
  out.entries.push_back(action);
  out.entries.push_back(observation);
  return out;
}

HistoryKey HistoryKey::suffix(int window) const {
  const std::size_t keep = 2 * static_cast<std::size_t>(std::max(window, 0)) + 1;
  if (keep >= entries.size()) return *this;
  return HistoryKey(std::vector<int>(entries.end() - static_cast<long>(keep), entries.end()));
}

std::string HistoryKey::to_string() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i) out << ' ';
    out << (i % 2 == 0 ? 'o' : 'a') << entries[i];
  }
  return out.str();
}

std::size_t HistoryKeyHash::operator()(const HistoryKey& key) const noexcept {
  std::uint64_t h = 0x243F6A8885A308D3ULL ^ key.entries.size();
  for (int e : key.entries) h = splitmix64(h ^ static_cast<std::uint64_t>(e + 1));
  return static_cast<std::size_t>(h);
}

StepResult step(const PomdpSpec& spec, int state, int action, RandomStream& rng) {
  check_index(state, spec.num_states, "state");
  check_index(action, spec.num_actions, "action");
  const int next = rng.categorical(spec.transition[state][action]);
  const int obs = rng.categorical(spec.observation_model[next][action]);
  return {next, obs, spec.reward[state][action]};
}

PrivilegedRollout rollout(const PomdpSpec& spec, const RolloutPolicy& policy,
                          RandomStream& rng) {
  PrivilegedRollout out;
  out.steps.reserve(static_cast<std::size_t>(spec.horizon));
  int state = rng.categorical(spec.initial_dist);
  HistoryKey history =
      HistoryKey::initial(rng.categorical(spec.observation_model[state][spec.null_action()]));
  for (int t = 0; t < spec.horizon; ++t) {
    const Distribution dist = policy(DecisionPoint{t, state, history});
    if (!is_distribution(dist, static_cast<std::size_t>(spec.num_actions))) {
      throw ContractViolation("policy returned a malformed action distribution at " +
                              history.to_string());
    }
    const int action = rng.categorical(dist);
    const double r = spec.reward[state][action];
    out.total_reward += r;
    out.steps.push_back({history, state, action, r});
    if (spec.is_success(state, action)) {
      out.succeeded = true;
      break;
    }
    if (t + 1 == spec.horizon) break;
    const StepResult next = step(spec, state, action, rng);
    history = history.extended(action, next.observation);
    state = next.next_state;
  }
  return out;
}

Belief initial_belief(const PomdpSpec& spec, int observation) {
  check_index(observation, spec.num_observations, "observation");
  Belief out{Distribution(static_cast<std::size_t>(spec.num_states), 0.0)};
  double total = 0.0;
  for (int s = 0; s < spec.num_states; ++s) {
    out.probs[s] = spec.initial_dist[s] * spec.observation_model[s][spec.null_action()][observation];
    total += out.probs[s];
  }
  if (!(total > 0.0)) {
    throw InconsistentEvidence("first observation " + std::to_string(observation) +
                               " has zero probability");
  }
  for (double& p : out.probs) p /= total;
  return out;
}

Belief belief_update(const PomdpSpec& spec, const Belief& belief, int action,
                     int observation) {
  check_index(action, spec.num_actions, "action");
  check_index(observation, spec.num_observations, "observation");
  if (!is_distribution(belief.probs, static_cast<std::size_t>(spec.num_states))) {
    throw InvalidArgument("belief is not a probability vector");
  }
  Belief out{Distribution(static_cast<std::size_t>(spec.num_states), 0.0)};
  for (int s = 0; s < spec.num_states; ++s) {
    const double b = belief.probs[s];
    if (b == 0.0) continue;
    const Distribution& row = spec.transition[s][action];
    for (int next = 0; next < spec.num_states; ++next) out.probs[next] += row[next] * b;
  }
  double total = 0.0;
  for (int next = 0; next < spec.num_states; ++next) {
    out.probs[next] *= spec.observation_model[next][action][observation];
    total += out.probs[next];
  }
  if (!(total > 0.0)) {
    throw InconsistentEvidence("observation " + std::to_string(observation) + " after action " +
                               std::to_string(action) + " has zero probability");
  }
  for (double& p : out.probs) p /= total;
  return out;
}

Belief belief_from_history(const PomdpSpec& spec, const HistoryKey& history) {
  if (history.empty()) throw InvalidArgument("empty history");
  Belief b = initial_belief(spec, history.entries[0]);
  for (std::size_t i = 1; i + 1 < history.entries.size(); i += 2) {
    b = belief_update(spec, b, history.entries[i], history.entries[i + 1]);
  }
  return b;
}

double WeightedBelief::mass() const { return std::exp(log_mass); }

Distribution WeightedBelief::joint() const {
  Distribution out(belief);
  const double m = mass();
  for (double& p : out) p *= m;
  return out;
}

Propagation propagate(const PomdpSpec& spec, const WeightedBelief& node, int action,
                      std::span<const double> action_weight) {
  Propagation out;
  const auto S = static_cast<std::size_t>(spec.num_states);
  Distribution continuing(S, 0.0);
  double weight_total = 0.0;
  double continuing_total = 0.0;
  for (int s = 0; s < spec.num_states; ++s) {
    const double w = node.belief[s] * action_weight[s];
    if (w == 0.0) continue;
    weight_total += w;
    out.expected_reward += w * spec.reward[s][action];
    if (spec.is_success(s, action)) {
      out.success_mass += w;
    } else {
      continuing[s] = w;
      continuing_total += w;
    }
  }
  const double m = node.mass();
  out.action_mass = weight_total * m;
  out.expected_reward *= m;
  out.success_mass *= m;
  out.terminated_mass = out.success_mass;
  if (continuing_total <= 0.0) return out;

  Distribution predicted(S, 0.0);
  for (int s = 0; s < spec.num_states; ++s) {
    if (continuing[s] == 0.0) continue;
    const Distribution& row = spec.transition[s][action];
    for (std::size_t next = 0; next < S; ++next) predicted[next] += row[next] * continuing[s];
  }
  for (int o = 0; o < spec.num_observations; ++o) {
    WeightedBelief child{Distribution(S, 0.0), 0.0};
    double total = 0.0;
    for (std::size_t next = 0; next < S; ++next) {
      child.belief[next] = predicted[next] * spec.observation_model[next][action][o];
      total += child.belief[next];
    }
    if (!(total > 0.0)) continue;
    for (double& p : child.belief) p /= total;
    child.log_mass = node.log_mass + std::log(total);
    out.children.emplace_back(o, std::move(child));
  }
  return out;
}

std::vector<std::pair<HistoryKey, WeightedBelief>> root_histories(const PomdpSpec& spec) {
  std::vector<std::pair<HistoryKey, WeightedBelief>> out;
  const auto S = static_cast<std::size_t>(spec.num_states);
  for (int o = 0; o < spec.num_observations; ++o) {
    WeightedBelief node{Distribution(S, 0.0), 0.0};
    double total = 0.0;
    for (int s = 0; s < spec.num_states; ++s) {
      node.belief[s] = spec.initial_dist[s] * spec.observation_model[s][spec.null_action()][o];
      total += node.belief[s];
    }
    if (!(total > 0.0)) continue;
    for (double& p : node.belief) p /= total;
    node.log_mass = std::log(total);
    out.emplace_back(HistoryKey::initial(o), std::move(node));
  }
  return out;
}

std::vector<HistoryKey> enumerate_histories(const PomdpSpec& spec, int t, std::size_t cap) {
  if (t < 1 || t > spec.horizon) throw InvalidArgument("history length out of range");
  double count = std::pow(static_cast<double>(spec.num_observations), t) *
                 std::pow(static_cast<double>(spec.num_actions), t - 1);
  if (count > static_cast<double>(cap)) {
    throw ResourceLimit("enumerating " + std::to_string(count) + " histories exceeds cap " +
                        std::to_string(cap));
  }
  std::vector<HistoryKey> level;
  for (int o = 0; o < spec.num_observations; ++o) level.push_back(HistoryKey::initial(o));
  for (int len = 1; len < t; ++len) {
    std::vector<HistoryKey> next;
    next.reserve(level.size() * static_cast<std::size_t>(spec.num_actions * spec.num_observations));
    for (const auto& h : level) {
      for (int a = 0; a < spec.num_actions; ++a) {
        for (int o = 0; o < spec.num_observations; ++o) next.push_back(h.extended(a, o));
      }
    }
    level = std::move(next);
  }
  return level;
}

HistoryOccupancy enumerate_occupancy(const PomdpSpec& spec, int t, const RolloutPolicy& policy,
                                     std::size_t cap) {
  if (t < 1 || t > spec.horizon) throw InvalidArgument("history length out of range");
  std::vector<std::pair<HistoryKey, WeightedBelief>> level = root_histories(spec);
  double terminated = 0.0;
  std::size_t expanded = level.size();
  const auto A = static_cast<std::size_t>(spec.num_actions);
  for (int step_index = 0; step_index + 1 < t; ++step_index) {
    std::vector<std::pair<HistoryKey, WeightedBelief>> next;
    for (const auto& [history, node] : level) {
      // Per-state action probabilities (policies may read the state).
      std::vector<Distribution> per_state(static_cast<std::size_t>(spec.num_states));
      for (int s = 0; s < spec.num_states; ++s) {
        if (node.belief[s] == 0.0) continue;
        per_state[s] = policy(DecisionPoint{step_index, s, history});
        if (!is_distribution(per_state[s], A)) {
          throw ContractViolation("policy returned a malformed action distribution");
        }
      }
      Distribution weight(static_cast<std::size_t>(spec.num_states), 0.0);
      for (int a = 0; a < spec.num_actions; ++a) {
        bool any = false;
        for (int s = 0; s < spec.num_states; ++s) {
          weight[s] = per_state[s].empty() ? 0.0 : per_state[s][a];
          any = any || weight[s] > 0.0;
        }
        if (!any) continue;
        Propagation prop = propagate(spec, node, a, weight);
        terminated += prop.terminated_mass;
        for (auto& [o, child] : prop.children) {
          if (++expanded > cap) {
            throw ResourceLimit("occupancy enumeration exceeds cap " + std::to_string(cap));
          }
          next.emplace_back(history.extended(a, o), std::move(child));
        }
      }
    }
    level = std::move(next);
  }
  HistoryOccupancy out;
  out.terminated_mass = terminated;
  for (auto& [history, node] : level) {
    out.histories.push_back(history);
    out.joint.push_back(node.joint());
  }
  return out;
}

nlohmann::json to_json(const PomdpSpec& spec) {
  nlohmann::json doc;
  doc["name"] = spec.name;
  doc["num_states"] = spec.num_states;
  doc["num_actions"] = spec.num_actions;
  doc["num_observations"] = spec.num_observations;
  doc["horizon"] = spec.horizon;
  doc["initial_dist"] = spec.initial_dist;
  doc["transition"] = spec.transition;
  doc["observation_model"] = spec.observation_model;
  doc["reward"] = spec.reward;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [s, a] : spec.success_predicate) pairs.push_back({s, a});
  doc["success_predicate"] = pairs;
  return doc;
}

PomdpSpec pomdp_from_json(const nlohmann::json& doc) {
  PomdpSpec spec;
  try {
    spec.name = doc.at("name").get<std::string>();
    spec.num_states = doc.at("num_states").get<int>();
    spec.num_actions = doc.at("num_actions").get<int>();
    spec.num_observations = doc.at("num_observations").get<int>();
    spec.horizon = doc.at("horizon").get<int>();
    spec.initial_dist = doc.at("initial_dist").get<Distribution>();
    spec.transition = doc.at("transition").get<std::vector<std::vector<Distribution>>>();
    spec.observation_model =
        doc.at("observation_model").get<std::vector<std::vector<Distribution>>>();
    spec.reward = doc.at("reward").get<std::vector<std::vector<double>>>();
    for (const auto& pair : doc.at("success_predicate")) {
      spec.success_predicate.insert({pair.at(0).get<int>(), pair.at(1).get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed POMDP document: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace leap
