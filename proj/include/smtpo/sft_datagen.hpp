// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "smtpo/agents.hpp"

namespace smtpo {

enum class ListStrategy { HardWithTarget, HardWithoutTarget, SimpleWithTarget, SimpleWithoutTarget };

inline constexpr ListStrategy kAllStrategies[] = {
    ListStrategy::HardWithTarget, ListStrategy::HardWithoutTarget,
    ListStrategy::SimpleWithTarget, ListStrategy::SimpleWithoutTarget};

enum class SftTask { feedback_gen, attr_align, target_pred, recommender_sft };

struct SftInstance {
  SftTask task = SftTask::feedback_gen;
  std::string instruction;
  std::string output;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  bool operator==(const SftInstance& o) const {
    return task == o.task && instruction == o.instruction && output == o.output && meta == o.meta;
  }
};

struct SftConfig {
  std::size_t list_size = 10;
  std::size_t target_pred_per_dialogue = 4;
  std::size_t recommender_candidates = 20;

  void validate() const;
};

// Negatives come from the top (hard) or bottom (simple) quartile of overlap
// with the target among items other than the target and mentioned items.
// A quartile too small for the request is topped up with the next-nearest
// overlap items, with a warning. WithTarget lists hold the target at a
// uniform position.
std::vector<ItemId> build_candidate_list(const Dialogue& d, const Corpus& corpus,
                                         ListStrategy strategy, std::size_t size,
                                         std::mt19937_64& rng);

// One feedback_gen per strategy, one attr_align, and target_pred instances
// drawn from the four lists (one per list by default). Teacher failures skip
// the instance and append a message to `failures`.
std::vector<SftInstance> gen_simulator_tasks(const Dialogue& d, const Corpus& corpus,
                                             const ChatBackend& teacher,
                                             const PromptLibrary& prompts,
                                             const SftConfig& config, std::mt19937_64& rng,
                                             std::vector<std::string>* failures = nullptr);

// Returns nullopt (and reports) when the teacher fails.
std::optional<SftInstance> gen_recommender_sft(const Dialogue& d, const Corpus& corpus,
                                               const ChatBackend& teacher,
                                               const PromptLibrary& prompts,
                                               ListStrategy strategy, const SftConfig& config,
                                               std::mt19937_64& rng,
                                               std::vector<std::string>* failures = nullptr);

std::size_t emit_jsonl(const std::vector<SftInstance>& instances, const std::filesystem::path& path);
std::vector<SftInstance> read_sft_jsonl(const std::filesystem::path& path);

const char* to_string(ListStrategy s);
const char* to_string(SftTask t);
ListStrategy parse_list_strategy(const std::string& s);
SftTask parse_sft_task(const std::string& s);

inline bool has_target(ListStrategy s) {
  return s == ListStrategy::HardWithTarget || s == ListStrategy::SimpleWithTarget;
}
inline bool is_hard(ListStrategy s) {
  return s == ListStrategy::HardWithTarget || s == ListStrategy::HardWithoutTarget;
}

}  // namespace smtpo
