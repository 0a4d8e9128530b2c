// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "smtpo/agents.hpp"
#include "smtpo/rewards.hpp"
#include "smtpo/retriever.hpp"

namespace smtpo {

enum class AblationMode {
  blind_simulator,
  noise_feedback,
  no_pref_in_retrieval,
  no_rec_in_retrieval,
  no_feedback_in_retrieval
};

struct AblationFlags {
  bool blind_simulator = false;
  bool noise_feedback = false;
  bool no_pref_in_retrieval = false;
  bool no_rec_in_retrieval = false;
  bool no_feedback_in_retrieval = false;

  void set(AblationMode mode);
  bool operator==(const AblationFlags&) const = default;
};

struct EpisodeConfig {
  int max_turns = 5;  // reported turns, cold start included
  std::size_t k_retrieve = 20;
  std::size_t k_recommend = 10;
  AblationFlags flags;
  std::uint64_t seed = 7;  // noise utterances

  void validate() const;
};

struct TurnRecord {
  int turn = 0;  // 0 = cold start
  std::string feedback;
  std::string simulator_prompt;
  CandidateSet candidates;
  std::string preference;
  std::vector<ItemId> rec_list;
  FormatFlags format_flags;
  std::optional<RewardBreakdown> rewards;
  std::string raw_text;
  bool frozen = false;  // carried forward after a hit
};

enum class EpisodeStatus { hit, exhausted, failed };

struct InteractionTrace {
  std::int64_t dialogue_id = 0;
  std::vector<TurnRecord> turns;  // always max_turns records unless failed
  EpisodeStatus status = EpisodeStatus::exhausted;
  std::optional<int> hit_turn;
  std::string error;
};

struct Agents {
  const ChatBackend* simulator = nullptr;
  const ChatBackend* recommender = nullptr;
  const PromptLibrary* prompts = nullptr;
};

// Retrieval query for turn t from F_t, P_{t-1}, R_{t-1}, with ablation
// flags removing the corresponding part.
QueryContext turn_query_context(const Dialogue& d, const std::string& feedback,
                                const std::string& prev_preference,
                                const std::vector<ItemId>& prev_recs, const AblationFlags& flags);

// When reward_encoder is given, each live turn carries a reward breakdown.
InteractionTrace run_episode(const Dialogue& d, const Agents& agents,
                             const RetrievalStack& stack, const EpisodeConfig& config,
                             const SemanticEncoder* reward_encoder = nullptr,
                             const RewardWeights& weights = {});

struct RankMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  double mrr = 0.0;
};

RankMetrics rank_metrics(std::span<const ItemId> rec_list, ItemId target, std::size_t k);

struct TurnMetrics {
  int turn = 1;  // reported, 1-based
  double recall_1 = 0.0;
  double recall_10 = 0.0;
  double ndcg_10 = 0.0;
  double mrr_10 = 0.0;
  double retriever_recall = 0.0;  // at k_retrieve
  double retriever_ndcg = 0.0;
};

struct EvalResult {
  std::vector<TurnMetrics> turns;
  std::size_t episodes = 0;
  std::size_t failed = 0;
  std::vector<InteractionTrace> traces;  // sorted by dialogue id
};

// Runs every dialogue concurrently (bounded by parallelism) and averages
// per reported turn over completed episodes.
EvalResult run_eval(const std::vector<const Dialogue*>& dialogues, const Agents& agents,
                    const RetrievalStack& stack, const EpisodeConfig& config,
                    std::size_t parallelism = 1);

struct AblationResult {
  AblationMode mode;
  EvalResult baseline;
  EvalResult ablated;
};

AblationResult run_ablation(const std::vector<const Dialogue*>& dialogues, const Agents& agents,
                            const RetrievalStack& stack, const EpisodeConfig& base,
                            AblationMode mode, std::size_t parallelism = 1);

nlohmann::ordered_json metrics_json(const EvalResult& result);
nlohmann::ordered_json ablation_json(const AblationResult& result);
nlohmann::ordered_json trace_json(const InteractionTrace& trace);
void write_traces(const EvalResult& result, const std::filesystem::path& path);
std::string format_metrics_table(const EvalResult& result);

// Retriever training contexts. With probability 1/4 a cold-start context;
// otherwise the ten non-target items best matching the attributes the
// dialogue names stand in for R_{t-1}, the scripted simulator writes F_t
// against them, and P_{t-1}
// names a random subset of the remaining target attributes. Each of F, P and
// R is dropped independently with probability 0.15.
ContextSource make_training_context_source(const Corpus& corpus, std::uint64_t simulator_seed);

const char* to_string(AblationMode mode);
AblationMode parse_ablation_mode(const std::string& s);
const char* to_string(EpisodeStatus s);

}  // namespace smtpo
