#pragma once

#include <vector>

#include "leap/pomdp.hpp"

namespace leap {

namespace tiger {
inline constexpr int kTigerLeft = 0;
inline constexpr int kTigerRight = 1;
inline constexpr int kListen = 0;
inline constexpr int kOpenLeft = 1;
inline constexpr int kOpenRight = 2;
inline constexpr int kHearLeft = 0;
inline constexpr int kHearRight = 1;
inline constexpr int kStart = 2;
}  // namespace tiger

/// Two-door tiger problem. Opening the tiger-free door is a success and ends
/// the episode; opening the tiger door costs `wrong_penalty` and re-draws the
/// tiger position from the initial distribution.
PomdpSpec build_tiger(double accuracy = 0.85, double listen_cost = -1.0,
                      double correct_reward = 10.0, double wrong_penalty = -100.0,
                      int horizon = 3);

/// How the hidden object world reveals the object.
enum class SearchSensing {
  /// Arriving at a location says nothing; `pick` either grabs the object or
  /// comes back empty-handed, so trying to pick is how a location is checked.
  kPickReveals,
  /// Arriving at a location shows whether the object is there.
  kArrivalReveals,
};

namespace hidden_object {
inline constexpr int kObsNone = 0;
inline constexpr int kObsPresent = 1;
inline constexpr int kObsHolding = 2;
inline constexpr int kObsStart = 3;

/// Decoded state of the hidden object world.
struct State {
  int object;  // location of the object
  int agent;   // agent position; num_locations means the start position
  bool carrying;
};

int encode(int num_locations, State s);
State decode(int num_locations, int state);
}  // namespace hidden_object

/// Search-and-deliver task. The object sits at a location drawn from the
/// normalized `prior_weights`; actions are `goto i` (i < num_locations),
/// `pick` and `deliver`. Delivering while carrying is the success pair.
/// Every action other than a successful delivery earns `move_cost`.
PomdpSpec build_hidden_object_world(int num_locations, const std::vector<double>& prior_weights,
                                    int horizon, double move_cost = -1.0,
                                    double deliver_reward = 10.0,
                                    SearchSensing sensing = SearchSensing::kPickReveals);

/// Same dynamics and rewards, but every observation is the identity of the
/// current state.
PomdpSpec make_fully_observed(const PomdpSpec& spec);

}  // namespace leap
