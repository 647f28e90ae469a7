#include "leap/policy.hpp"

#include <algorithm>
#include <cmath>

#include "leap/errors.hpp"
#include "leap/numerics.hpp"

namespace leap {

TabularHistoryPolicy::TabularHistoryPolicy(int num_actions, int truncation_window)
    : num_actions_(num_actions), truncation_window_(truncation_window) {
  if (num_actions < 1) throw InvalidArgument("policy needs at least one action");
  if (truncation_window < 0) throw InvalidArgument("truncation window must be >= 0");
}

Distribution TabularHistoryPolicy::distribution_for_key(const HistoryKey& key) const {
  const auto* logits = find_logits(key);
  if (logits == nullptr) return uniform_distribution(static_cast<std::size_t>(num_actions_));
  return softmax(*logits);
}

Distribution TabularHistoryPolicy::action_distribution(const HistoryKey& history) const {
  return distribution_for_key(key_for(history));
}

TabularHistoryPolicy::LogProbGrad TabularHistoryPolicy::log_prob_and_grad(
    const HistoryKey& history, int action) const {
  if (action < 0 || action >= num_actions_) throw InvalidArgument("action out of range");
  LogProbGrad out{0.0, key_for(history), {}};
  const auto* logits = find_logits(out.key);
  const std::vector<double> zeros(static_cast<std::size_t>(num_actions_), 0.0);
  const std::vector<double>& z = logits ? *logits : zeros;
  const double lse = log_sum_exp(z);
  out.log_prob = z[action] - lse;
  out.gradient.resize(z.size());
  for (std::size_t a = 0; a < z.size(); ++a) {
    out.gradient[a] = (static_cast<int>(a) == action ? 1.0 : 0.0) - std::exp(z[a] - lse);
  }
  return out;
}

const std::vector<double>* TabularHistoryPolicy::find_logits(const HistoryKey& key) const {
  auto it = logits_.find(key);
  return it == logits_.end() ? nullptr : &it->second;
}

std::vector<double>& TabularHistoryPolicy::logits_for(const HistoryKey& key) {
  auto [it, inserted] = logits_.try_emplace(key);
  if (inserted) it->second.assign(static_cast<std::size_t>(num_actions_), 0.0);
  return it->second;
}

void TabularHistoryPolicy::set_logits(const HistoryKey& key, std::vector<double> logits) {
  if (logits.size() != static_cast<std::size_t>(num_actions_)) {
    throw InvalidArgument("logit vector has the wrong size");
  }
  logits_[key] = std::move(logits);
}

nlohmann::json TabularHistoryPolicy::to_json() const {
  std::vector<const Table::value_type*> sorted;
  sorted.reserve(logits_.size());
  for (const auto& entry : logits_) sorted.push_back(&entry);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->first < b->first; });
  nlohmann::json entries = nlohmann::json::array();
  for (const auto* entry : sorted) {
    entries.push_back({{"key", entry->first.entries}, {"logits", entry->second}});
  }
  return {{"num_actions", num_actions_},
          {"truncation_window", truncation_window_},
          {"entries", std::move(entries)}};
}

TabularHistoryPolicy TabularHistoryPolicy::from_json(const nlohmann::json& doc) {
  try {
    TabularHistoryPolicy policy(doc.at("num_actions").get<int>(),
                                doc.at("truncation_window").get<int>());
    for (const auto& entry : doc.at("entries")) {
      policy.set_logits(HistoryKey(entry.at("key").get<std::vector<int>>()),
                        entry.at("logits").get<std::vector<double>>());
    }
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed policy document: ") + e.what());
  }
}

PolicySnapshot PolicySnapshot::capture(const TabularHistoryPolicy& policy, int iteration) {
  return {std::make_shared<const TabularHistoryPolicy>(policy), iteration,
          "pi_" + std::to_string(iteration)};
}

RolloutPolicy as_rollout_policy(std::shared_ptr<const TabularHistoryPolicy> policy) {
  return [policy = std::move(policy)](const DecisionPoint& point) {
    return policy->action_distribution(point.history);
  };
}

}  // namespace leap

namespace leap {

double total_cross_entropy(const TabularHistoryPolicy& policy,
                           std::span<const LabeledExample> examples) {
  double total = 0.0;
  for (const auto& ex : examples) {
    total -= policy.log_prob_and_grad(ex.history, ex.action).log_prob;
  }
  return total;
}

double mean_cross_entropy(const TabularHistoryPolicy& policy,
                          std::span<const LabeledExample> examples) {
  if (examples.empty()) return 0.0;
  return total_cross_entropy(policy, examples) / static_cast<double>(examples.size());
}

}  // namespace leap
