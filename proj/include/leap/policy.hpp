#pragma once

// Student policies: tabular softmax over truncated observation-action
// histories.

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "leap/pomdp.hpp"

namespace leap {

class TabularHistoryPolicy {
 public:
  using Table = std::unordered_map<HistoryKey, std::vector<double>, HistoryKeyHash>;

  /// `truncation_window` is the number of trailing observation-action pairs
  /// kept in the key, in addition to the current observation.
  TabularHistoryPolicy(int num_actions, int truncation_window);

  int num_actions() const { return num_actions_; }
  int truncation_window() const { return truncation_window_; }

  HistoryKey key_for(const HistoryKey& history) const {
    return history.suffix(truncation_window_);
  }

  /// softmax of the stored logits, or uniform for keys never written.
  Distribution action_distribution(const HistoryKey& history) const;
  Distribution distribution_for_key(const HistoryKey& key) const;

  struct LogProbGrad {
    double log_prob;
    HistoryKey key;
    /// d log pi(action | key) / d logits[key] = one_hot(action) - softmax.
    std::vector<double> gradient;
  };
  LogProbGrad log_prob_and_grad(const HistoryKey& history, int action) const;

  const std::vector<double>* find_logits(const HistoryKey& key) const;
  /// Creates a zero entry on first access.
  std::vector<double>& logits_for(const HistoryKey& key);
  void set_logits(const HistoryKey& key, std::vector<double> logits);

  const Table& table() const { return logits_; }
  std::size_t size() const { return logits_.size(); }

  nlohmann::json to_json() const;
  static TabularHistoryPolicy from_json(const nlohmann::json& doc);

 private:
  int num_actions_;
  int truncation_window_;
  Table logits_;
};

/// Immutable copy of a policy taken at one LEAP iteration.
struct PolicySnapshot {
  std::shared_ptr<const TabularHistoryPolicy> policy;
  int iteration = 0;
  std::string label;

  static PolicySnapshot capture(const TabularHistoryPolicy& policy, int iteration);
  const TabularHistoryPolicy& operator*() const { return *policy; }
  const TabularHistoryPolicy* operator->() const { return policy.get(); }
};

/// Adapts a student policy for rollouts; the privileged state is ignored.
RolloutPolicy as_rollout_policy(std::shared_ptr<const TabularHistoryPolicy> policy);

}  // namespace leap

namespace leap {

/// (history, action) label used by the cross-entropy losses.
struct LabeledExample {
  HistoryKey history;
  int action = 0;
};

/// Mean of -log pi(action | key(history)) over the examples.
double mean_cross_entropy(const TabularHistoryPolicy& policy,
                          std::span<const LabeledExample> examples);

/// Sum of -log pi(action | key(history)).
double total_cross_entropy(const TabularHistoryPolicy& policy,
                           std::span<const LabeledExample> examples);

}  // namespace leap
