// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smtpo/corpus.hpp"
#include "smtpo/parser.hpp"
#include "smtpo/prompts.hpp"
#include "smtpo/retriever.hpp"

namespace smtpo {

enum class BackendKind {
  http,
  scripted_simulator,
  scripted_recommender,
  noise,
  scripted_teacher,
  toy_policy
};

enum class AgentTask { simulate, recommend, teacher_feedback, teacher_recommend };

struct ChatMessage {
  std::string role;
  std::string content;
};

// A rendered prompt plus the structured state it was rendered from. Remote
// backends read `messages`; scripted backends read the structure, so a blind
// simulator request carries no previous recommendations in either form.
struct AgentRequest {
  AgentTask task = AgentTask::simulate;
  std::vector<ChatMessage> messages;
  const Corpus* corpus = nullptr;
  const Dialogue* dialogue = nullptr;
  std::vector<ItemId> prev_recs;
  std::vector<ScoredItem> candidates;  // retrieval order
  std::vector<std::string> feedback_history;    // F_1..F_t
  std::vector<std::string> preference_history;  // P_0..P_{t-1}
  std::optional<ItemId> target;                 // teacher tasks only
  int turn = 0;
  std::size_t list_size = 10;
};

// complete() must be safe to call concurrently. Failures are BackendError.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendKind kind() const = 0;
  virtual std::string complete(const AgentRequest& request) const = 0;
};

struct HttpOptions {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::chrono::milliseconds timeout{60000};
  double temperature = 0.0;
  int max_tokens = 1024;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  int max_in_flight = 4;
};

// Chat-completions client: POST {base_url}/chat/completions, reads
// choices[0].message.content. Retries retriable failures with exponential
// backoff and caps concurrent requests at max_in_flight.
class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpOptions options);
  BackendKind kind() const override { return BackendKind::http; }
  std::string complete(const AgentRequest& request) const override;
  const HttpOptions& options() const { return options_; }

 private:
  HttpOptions options_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable int in_flight_ = 0;
};

// Names up to three target attributes that no previous recommendation
// carries, preferring ones the dialogue has not named yet. When every target
// attribute is covered it names the least-covered ones.
class ScriptedSimulator final : public ChatBackend {
 public:
  explicit ScriptedSimulator(std::uint64_t seed = 0) : seed_(seed) {}
  BackendKind kind() const override { return BackendKind::scripted_simulator; }
  std::string complete(const AgentRequest& request) const override;

 private:
  std::uint64_t seed_;
};

// Off-topic utterances from a fixed pool, keyed by (seed, dialogue, turn).
class NoiseSimulator final : public ChatBackend {
 public:
  explicit NoiseSimulator(std::uint64_t seed = 0) : seed_(seed) {}
  BackendKind kind() const override { return BackendKind::noise; }
  std::string complete(const AgentRequest& request) const override;
  static const std::vector<std::string>& pool();

 private:
  std::uint64_t seed_;
};

// Five-step think block, then candidates ordered by how many attributes named
// in the latest feedback they carry (ties keep retrieval order).
class ScriptedRecommender final : public ChatBackend {
 public:
  BackendKind kind() const override { return BackendKind::scripted_recommender; }
  std::string complete(const AgentRequest& request) const override;
};

// Gold outputs for data generation. Feedback follows the scripted simulator
// rule against the presented list; rankings order candidates by overlap with
// the target's attributes with the target first when present.
class ScriptedTeacher final : public ChatBackend {
 public:
  explicit ScriptedTeacher(std::uint64_t seed = 0) : seed_(seed) {}
  BackendKind kind() const override { return BackendKind::scripted_teacher; }
  std::string complete(const AgentRequest& request) const override;

 private:
  std::uint64_t seed_;
};

// Target attributes the scripted simulator would name, in order.
std::vector<AttributeId> scripted_feedback_attributes(const Corpus& corpus, const Dialogue& d,
                                                      std::span<const ItemId> prev_recs,
                                                      std::uint64_t seed);

// Attributes named across all feedback so far, first-seen order.
std::vector<AttributeId> feedback_attributes(const Corpus& corpus,
                                             const std::vector<std::string>& feedback);

// Renders the standard output: <think> with five Step<k>: lines, then the
// RANK LIST. `ranked` must already be in final order.
std::string format_recommendation(const Corpus& corpus, const std::string& preference,
                                  const std::vector<ItemId>& ranked,
                                  const std::vector<std::size_t>& match_counts,
                                  const std::string& ranking_rule);

std::string describe_preference(const Corpus& corpus, const std::vector<AttributeId>& attrs);

// Feedback-sensitive recommenders revise only on feedback naming at least one
// catalog attribute. Otherwise the previous list's items still among the
// candidates stay on top in their old order and `ranked` fills the rest.
bool feedback_is_actionable(const Corpus& corpus, const std::vector<std::string>& feedback_history);
std::vector<ItemId> hold_previous_list(const std::vector<ItemId>& ranked,
                                       std::span<const ItemId> prev_recs);

// Prompt placeholder renderings.
std::string render_entities(const Corpus& corpus, const Dialogue& d);
std::string render_titles(const Corpus& corpus, std::span<const ItemId> ids);
std::string render_candidates(const Corpus& corpus, const std::vector<ScoredItem>& candidates);
std::string render_history(const std::vector<std::string>& feedback,
                           const std::vector<std::string>& preferences);

// Blind mode drops prev_recs from both the prompt and the structured request.
AgentRequest simulator_request(const Corpus& corpus, const Dialogue& d,
                               std::span<const ItemId> prev_recs, bool blind,
                               const PromptLibrary& prompts, int turn);

// Candidates beyond max_candidates are truncated from the bottom with a warning.
AgentRequest recommender_request(const Corpus& corpus, const Dialogue& d,
                                 const CandidateSet& candidates,
                                 const std::vector<std::string>& feedback_history,
                                 const std::vector<std::string>& preference_history,
                                 std::span<const ItemId> prev_recs,
                                 const PromptLibrary& prompts, int turn,
                                 std::size_t list_size = 10, std::size_t max_candidates = 20);

// Returns the completion; empty completions are BackendError.
std::string simulate_feedback(const ChatBackend& backend, const AgentRequest& request);
std::string generate_recommendation(const ChatBackend& backend, const AgentRequest& request);

const char* to_string(BackendKind kind);
BackendKind parse_backend_kind(const std::string& s);

}  // namespace smtpo
