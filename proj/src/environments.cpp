#include "leap/environments.hpp"

#include <numeric>
#include <string>

#include "leap/errors.hpp"

namespace leap {

namespace {

Distribution point_mass(int size, int index) {
  Distribution d(static_cast<std::size_t>(size), 0.0);
  d[static_cast<std::size_t>(index)] = 1.0;
  return d;
}

}  // namespace

PomdpSpec build_tiger(double accuracy, double listen_cost, double correct_reward,
                      double wrong_penalty, int horizon) {
  using namespace tiger;
  if (!(accuracy >= 0.5 && accuracy <= 1.0)) {
    throw InvalidArgument("tiger accuracy must lie in [0.5, 1]");
  }
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  PomdpSpec spec;
  spec.name = "tiger";
  spec.num_states = 2;
  spec.num_actions = 3;
  spec.num_observations = 3;
  spec.horizon = horizon;
  spec.initial_dist = {0.5, 0.5};
  spec.transition.assign(2, std::vector<Distribution>(3));
  spec.observation_model.assign(2, std::vector<Distribution>(4));
  spec.reward.assign(2, std::vector<double>(3, 0.0));
  for (int s = 0; s < 2; ++s) {
    spec.transition[s][kListen] = point_mass(2, s);
    spec.transition[s][kOpenLeft] = spec.initial_dist;
    spec.transition[s][kOpenRight] = spec.initial_dist;
    spec.reward[s][kListen] = listen_cost;
    const int hear_correct = s == kTigerLeft ? kHearLeft : kHearRight;
    Distribution listen_obs(3, 0.0);
    listen_obs[hear_correct] = accuracy;
    listen_obs[1 - hear_correct] = 1.0 - accuracy;
    spec.observation_model[s][kListen] = listen_obs;
    spec.observation_model[s][kOpenLeft] = {0.5, 0.5, 0.0};
    spec.observation_model[s][kOpenRight] = {0.5, 0.5, 0.0};
    spec.observation_model[s][spec.null_action()] = point_mass(3, kStart);
  }
  spec.reward[kTigerLeft][kOpenLeft] = wrong_penalty;
  spec.reward[kTigerLeft][kOpenRight] = correct_reward;
  spec.reward[kTigerRight][kOpenLeft] = correct_reward;
  spec.reward[kTigerRight][kOpenRight] = wrong_penalty;
  spec.success_predicate = {{kTigerLeft, kOpenRight}, {kTigerRight, kOpenLeft}};
  spec.validate();
  return spec;
}

namespace hidden_object {

int encode(int num_locations, State s) {
  return (s.object * (num_locations + 1) + s.agent) * 2 + (s.carrying ? 1 : 0);
}

State decode(int num_locations, int state) {
  State s{};
  s.carrying = (state % 2) == 1;
  state /= 2;
  s.agent = state % (num_locations + 1);
  s.object = state / (num_locations + 1);
  return s;
}

}  // namespace hidden_object

PomdpSpec build_hidden_object_world(int num_locations, const std::vector<double>& prior_weights,
                                    int horizon, double move_cost, double deliver_reward,
                                    SearchSensing sensing) {
  using namespace hidden_object;
  if (num_locations < 2) throw InvalidArgument("need at least two locations");
  if (prior_weights.size() != static_cast<std::size_t>(num_locations)) {
    throw InvalidArgument("prior_weights must have one entry per location");
  }
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  double weight_total = 0.0;
  for (double w : prior_weights) {
    if (!(w >= 0.0)) throw InvalidArgument("prior weights must be nonnegative");
    weight_total += w;
  }
  if (!(weight_total > 0.0)) throw InvalidArgument("prior weights are all zero");

  const int n = num_locations;
  const int pick = n;
  const int deliver = n + 1;
  PomdpSpec spec;
  spec.name = "hidden_object_world";
  spec.num_states = n * (n + 1) * 2;
  spec.num_actions = n + 2;
  spec.num_observations = 4;
  spec.horizon = horizon;
  const auto S = static_cast<std::size_t>(spec.num_states);
  spec.initial_dist.assign(S, 0.0);
  for (int loc = 0; loc < n; ++loc) {
    spec.initial_dist[encode(n, {loc, n, false})] = prior_weights[loc] / weight_total;
  }
  spec.transition.assign(S, std::vector<Distribution>(static_cast<std::size_t>(n + 2)));
  spec.observation_model.assign(S, std::vector<Distribution>(static_cast<std::size_t>(n + 3)));
  spec.reward.assign(S, std::vector<double>(static_cast<std::size_t>(n + 2), move_cost));

  for (int index = 0; index < spec.num_states; ++index) {
    const State s = decode(n, index);
    for (int a = 0; a < spec.num_actions; ++a) {
      State next = s;
      if (a < n) {
        next.agent = a;
      } else if (a == pick) {
        if (!s.carrying && s.agent == s.object) next.carrying = true;
      }
      spec.transition[index][a] = point_mass(spec.num_states, encode(n, next));
    }
    if (s.carrying) {
      spec.success_predicate.insert({index, deliver});
      spec.reward[index][deliver] = deliver_reward;
    }
    // Observation emitted on arriving in `index` after each action.
    for (int a = 0; a < spec.num_actions; ++a) {
      int obs = kObsNone;
      if (s.carrying) {
        obs = kObsHolding;
      } else if (sensing == SearchSensing::kArrivalReveals && s.agent == s.object) {
        obs = kObsPresent;
      }
      spec.observation_model[index][a] = point_mass(4, obs);
    }
    spec.observation_model[index][spec.null_action()] = point_mass(4, kObsStart);
  }
  spec.validate();
  return spec;
}

PomdpSpec make_fully_observed(const PomdpSpec& spec) {
  PomdpSpec out = spec;
  out.name = spec.name + "_fully_observed";
  out.num_observations = spec.num_states;
  for (int s = 0; s < spec.num_states; ++s) {
    for (auto& column : out.observation_model[s]) column = point_mass(spec.num_states, s);
  }
  out.validate();
  return out;
}

}  // namespace leap
