// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "smtpo/agents.hpp"
#include "smtpo/orchestrator.hpp"
#include "smtpo/rewards.hpp"

namespace smtpo {

struct GrpoConfig {
  int group_size = 4;
  double clip_epsilon = 0.2;
  double kl_beta = 0.04;
  double learning_rate = 0.3;
  int epochs = 3;
  int inner_steps = 2;           // ascent steps per group against a fixed theta_old
  double max_grad_norm = 1.0;    // per-step gradient norm cap; 0 disables
  std::size_t max_dialogues = 0;  // per epoch; 0 means the whole train split
  std::uint64_t seed = 7;

  void validate() const;
};

// A_i = (r_i - mean) / population std; zeros when std < 1e-8.
std::vector<double> group_advantages(std::span<const double> rewards);

// Per-candidate features: [overlap with feedback attributes, z-scored
// retrieval score, -ln(1-based retrieval rank)].
inline constexpr int kToyFeatureCount = 3;

struct CandidateFeatures {
  std::vector<ItemId> ids;  // retrieval order
  MatrixXd x;               // ids.size() x kToyFeatureCount
};

CandidateFeatures toy_features(const Corpus& corpus, const CandidateSet& candidates,
                               const std::vector<AttributeId>& feedback_attrs);

struct ToyPolicy {
  VectorXd theta = VectorXd::Zero(kToyFeatureCount);
  VectorXd theta_old = VectorXd::Zero(kToyFeatureCount);
  VectorXd theta_ref = VectorXd::Zero(kToyFeatureCount);
};

// Plackett-Luce log-probability of a (possibly partial) ranking given item
// scores; `ranking` indexes into scores and must be distinct.
template <typename Scalar>
Scalar plackett_luce_logprob(const Vector<Scalar>& scores, std::span<const Eigen::Index> ranking) {
  using std::exp;
  using std::log;
  std::vector<bool> used(static_cast<std::size_t>(scores.size()), false);
  Scalar total(0);
  for (Eigen::Index j : ranking) {
    Scalar m = scores[j];
    for (Eigen::Index u = 0; u < scores.size(); ++u)
      if (!used[u] && scores[u] > m) m = scores[u];
    Scalar z(0);
    for (Eigen::Index u = 0; u < scores.size(); ++u)
      if (!used[u]) z += exp(scores[u] - m);
    total += scores[j] - m - log(z);
    used[j] = true;
  }
  return total;
}

// Maps item ids to candidate rows; DataError on unknown or repeated ids.
std::vector<Eigen::Index> ranking_rows(const CandidateFeatures& f, std::span<const ItemId> ranking);

double policy_logprob(const VectorXd& theta, const CandidateFeatures& f,
                      std::span<const ItemId> ranking);
VectorXd policy_logprob_grad(const VectorXd& theta, const CandidateFeatures& f,
                             std::span<const ItemId> ranking);

std::vector<ItemId> sample_ranking(const VectorXd& theta, const CandidateFeatures& f,
                                   std::size_t length, std::mt19937_64& rng);
// Highest score first, ties keep retrieval order.
std::vector<ItemId> greedy_ranking(const VectorXd& theta, const CandidateFeatures& f,
                                   std::size_t length);

struct Completion {
  std::string text;
  std::vector<ItemId> ranking;
  RewardBreakdown rewards;
  double reward = 0.0;
  double advantage = 0.0;
  std::optional<double> logprob_old;
  std::optional<double> logprob_ref;
};

struct RolloutGroup {
  std::string prompt;
  std::vector<Completion> completions;
  CandidateFeatures features;  // toy-policy groups only
};

// Fills advantages from completion rewards.
void normalize_group(RolloutGroup& group);

struct GrpoObjective {
  double value = 0.0;
  VectorXd gradient;  // d value / d theta
  double kl = 0.0;    // mean estimator value
};

// Clipped surrogate minus beta times the mean KL estimator
// exp(lr - lt) - (lr - lt) - 1, with lt = log pi_theta and lr = log pi_ref.
// Uses the stored logprob_old/logprob_ref when present, else recomputes them
// from the policy snapshots.
GrpoObjective grpo_objective(const RolloutGroup& group, const ToyPolicy& policy,
                             const GrpoConfig& config);

// Recommender backend driven by the toy policy (greedy ranking).
class ToyPolicyRecommender final : public ChatBackend {
 public:
  explicit ToyPolicyRecommender(VectorXd theta) : theta_(std::move(theta)) {}
  BackendKind kind() const override { return BackendKind::toy_policy; }
  std::string complete(const AgentRequest& request) const override;
  const VectorXd& theta() const { return theta_; }

 private:
  VectorXd theta_;
};

// Output text for a toy-policy ranking, in the standard recommender format.
std::string toy_policy_text(const Corpus& corpus, const std::vector<ItemId>& ranking,
                            const CandidateFeatures& f,
                            const std::vector<AttributeId>& feedback_attrs);

struct GrpoTrainLog {
  std::vector<double> epoch_mean_reward;
  std::vector<RolloutGroup> groups;  // kept when requested
};

// One group per (dialogue, turn); episodes advance with the current greedy
// policy and stop at a hit. theta_old is refreshed per group and theta_ref
// stays at the initial theta.
ToyPolicy train_toy_policy(const Corpus& corpus, const RetrievalStack& stack,
                           const ChatBackend& simulator, const PromptLibrary& prompts,
                           const EpisodeConfig& episode, const GrpoConfig& config,
                           const SemanticEncoder& reward_encoder, const RewardWeights& weights,
                           const VectorXd& theta_init, GrpoTrainLog* log = nullptr,
                           bool keep_groups = false);

// Rollouts from any recommender backend, for external trainers: the backend
// answers each (dialogue, turn) prompt group_size times and the episode
// advances on the first completion. Logprobs are left empty.
std::vector<RolloutGroup> collect_rollouts(const std::vector<const Dialogue*>& dialogues,
                                           const Agents& agents, const RetrievalStack& stack,
                                           const EpisodeConfig& episode, int group_size,
                                           const SemanticEncoder& reward_encoder,
                                           const RewardWeights& weights);

std::size_t export_rollouts(const std::vector<RolloutGroup>& groups,
                            const std::filesystem::path& path);
std::vector<RolloutGroup> load_rollouts(const std::filesystem::path& path);

void save_toy_policy(const ToyPolicy& policy, const std::filesystem::path& path);
ToyPolicy load_toy_policy(const std::filesystem::path& path);

}  // namespace smtpo
