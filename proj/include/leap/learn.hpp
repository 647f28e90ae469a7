#pragma once

// Dataset aggregation, the three update rules, the LEAP loop and
// best-iterate selection.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leap/analysis.hpp"
#include "leap/expert.hpp"
#include "leap/policy.hpp"
#include "leap/pomdp.hpp"

namespace leap {

/// A teacher-labelled step from an initial demonstration.
struct DemoRecord {
  HistoryKey history;
  int state = 0;
  int action = 0;
};

/// Demonstrations plus the corrections gathered at each iteration.
/// `partition[i]` is the offset of iteration i+1's first record;
/// `partition.back() == records.size()`.
struct CorrectionDataset {
  std::vector<DemoRecord> demo_records;
  std::vector<CorrectionRecord> records;
  std::vector<std::size_t> partition{0};

  int num_iterations() const { return static_cast<int>(partition.size()) - 1; }
  bool empty() const { return demo_records.empty() && records.empty(); }
  std::size_t size() const { return demo_records.size() + records.size(); }

  /// Appends the block for the next iteration. Throws InvalidArgument when a
  /// record carries an iteration number from the future.
  void append_iteration(std::vector<CorrectionRecord> block);
  std::span<const CorrectionRecord> iteration_records(int iteration) const;

  /// Every demo label followed by every corrected label.
  std::vector<LabeledExample> sft_examples() const;
};

/// Demonstrations from the non-privileged expert acting alone. `greedy`
/// takes the argmax of its belief-marginalized action distribution (lowest
/// index among ties); otherwise actions are sampled from it.
std::vector<DemoRecord> generate_demonstrations(const PomdpSpec& spec, const ExpertBundle& expert,
                                                int episodes, std::uint64_t root_seed,
                                                bool greedy = true);

enum class UpdateRule { kSft, kDpo, kKto };

enum class TeacherType { kPrivileged, kNonprivileged, kConstrained, kSampled, kSelf };

struct TeacherConfig {
  TeacherType type = TeacherType::kPrivileged;
  double delta = 0.0;
  double lambda = 0.0;
  int num_samples = 8;
};

struct LeapConfig {
  int num_iterations = 3;
  int rollouts_per_iteration = 200;
  UpdateRule update_rule = UpdateRule::kSft;
  double beta = 0.1;
  double lambda_desirable = 1.0;
  double lambda_undesirable = 0.0;
  TeacherConfig teacher;
  CorrectionMode mode = CorrectionMode::kFailedOnly;
  double learning_rate = 0.5;
  int optimization_steps = 500;
  /// Pairs of history kept in the student's key; a value >= horizon keeps
  /// the whole history.
  int truncation_window = 1 << 20;
  std::uint64_t root_seed = 0;
  std::vector<std::uint64_t> validation_seeds;
  int demo_episodes = 20;
  double expert_temperature = 0.0;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Objectives. All gradients are with respect to the logits of the keys that
// appear in the data; keys absent from the returned table have zero gradient.

struct ObjectiveValue {
  double loss = 0.0;
  TabularHistoryPolicy::Table gradient;
};

/// Mean cross-entropy of the labels.
ObjectiveValue sft_objective(const TabularHistoryPolicy& policy,
                             std::span<const LabeledExample> examples);

struct PreferencePair {
  HistoryKey history;
  int preferred = 0;
  int dispreferred = 0;
};

/// Mean of -log sigmoid(beta * [(log pi(w) - log ref(w)) - (log pi(l) - log ref(l))]).
ObjectiveValue dpo_objective(const TabularHistoryPolicy& policy,
                             const TabularHistoryPolicy& reference,
                             std::span<const PreferencePair> pairs, double beta);

struct KtoExample {
  HistoryKey history;
  int action = 0;
  bool desirable = true;
};

/// Reference point z0 = max(0, mean over the batch's distinct keys of
/// KL(pi(.|key) || ref(.|key))).
double kto_reference_point(const TabularHistoryPolicy& policy,
                           const TabularHistoryPolicy& reference,
                           std::span<const KtoExample> examples);

/// Mean of lambda_D (1 - sigmoid(beta (r - z0))) over desirable examples and
/// lambda_U (1 - sigmoid(beta (z0 - r))) over undesirable ones, where r is the
/// log-ratio to the reference. z0 is held fixed in the gradient.
ObjectiveValue kto_objective(const TabularHistoryPolicy& policy,
                             const TabularHistoryPolicy& reference,
                             std::span<const KtoExample> examples, double beta,
                             double lambda_desirable, double lambda_undesirable, double z0);

// ---------------------------------------------------------------------------
// Trainers.

/// Closed-form maximum-likelihood fit: each key's distribution becomes the
/// empirical label frequency. Zero-frequency actions get probability 1e-15.
/// Throws InvalidArgument on an empty dataset.
TabularHistoryPolicy fit_sft(const CorrectionDataset& dataset, int num_actions,
                             int truncation_window);
TabularHistoryPolicy fit_sft(std::span<const LabeledExample> examples, int num_actions,
                             int truncation_window);

/// Full-batch gradient descent on the same objective, from zero logits.
TabularHistoryPolicy fit_sft_gradient(std::span<const LabeledExample> examples, int num_actions,
                                      int truncation_window, double learning_rate, int steps);

/// Pairs (corrected preferred over student action) for records where the two
/// differ.
std::vector<PreferencePair> preference_pairs(std::span<const CorrectionRecord> records);

/// Desirable corrected actions plus undesirable student actions where they
/// differ from the correction.
std::vector<KtoExample> kto_examples(std::span<const CorrectionRecord> records);

TabularHistoryPolicy fit_dpo(const PolicySnapshot& reference, std::span<const PreferencePair> pairs,
                             double beta, double learning_rate, int steps);

TabularHistoryPolicy fit_kto(const PolicySnapshot& reference, std::span<const KtoExample> examples,
                             double beta, double lambda_desirable, double lambda_undesirable,
                             double learning_rate, int steps);

/// Self-teacher: per (step, state) empirical distribution of demo and
/// corrected actions; uniform where nothing was seen.
PrivilegedPolicy fit_privileged_student(const CorrectionDataset& dataset, int horizon,
                                        int num_states, int num_actions);

// ---------------------------------------------------------------------------
// Algorithm loop.

/// How leap_run evaluates its iterates.
struct AnalysisOptions {
  /// Try exact tree evaluation first; fall back to Monte Carlo when the tree
  /// exceeds `exact_cap` nodes.
  bool try_exact = true;
  std::size_t exact_cap = 200'000;
  std::size_t evaluation_episodes = 1000;
  /// Episodes per iterate for the Monte Carlo realizability lower bound.
  std::size_t realizability_episodes = 300;
};

struct LeapResult {
  std::vector<PolicySnapshot> snapshots;  // pi_0 ... pi_N
  MetricsReport report;
  CorrectionDataset dataset;
};

/// Runs the iterative imitation loop and evaluates every iterate.
LeapResult leap_run(const PomdpSpec& spec, const LeapConfig& config,
                    const CorrectionDataset& demos, const AnalysisOptions& analysis = {});

/// Highest mean validation success; ties go to the earliest snapshot.
PolicySnapshot select_best(const std::vector<PolicySnapshot>& snapshots, const PomdpSpec& spec,
                           const std::vector<std::uint64_t>& validation_seeds);

std::string to_string(UpdateRule rule);
std::string to_string(TeacherType type);

}  // namespace leap
