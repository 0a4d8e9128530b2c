// SPDX-License-Identifier: Apache-2.0
#include "smtpo/rewards.hpp"

#include <algorithm>
#include <cmath>

namespace smtpo {

void RewardWeights::validate() const {
  const double w[] = {think, answer, hit, rank, prefer};
  bool any = false;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0) throw ConfigError("reward weights must be finite and >= 0");
    any = any || x > 0;
  }
  if (!any) throw ConfigError("at least one reward weight must be positive");
}

double reward_think(std::size_t n) {
  if (n < 1 || n > 7) return 0.0;
  return 1.0 - std::abs(static_cast<double>(n) - 5.0) / 5.0;
}

double reward_think(const ParsedRecommendation& parsed) {
  return reward_think(parsed.think_steps.size());
}

double reward_answer(const ParsedRecommendation& parsed) {
  return parsed.format_flags.rank_list_matched && !parsed.ranked_titles.empty() ? 1.0 : 0.0;
}

double reward_hit(std::span<const ItemId> ranked, ItemId target) {
  return std::find(ranked.begin(), ranked.end(), target) != ranked.end() ? 1.0 : 0.0;
}

double reward_rank(std::span<const ItemId> ranked, ItemId target) {
  const auto it = std::find(ranked.begin(), ranked.end(), target);
  if (it == ranked.end()) return 0.0;
  const auto p = static_cast<double>(it - ranked.begin() + 1);
  return 1.0 - (p - 1.0) / static_cast<double>(ranked.size());
}

double reward_prefer(std::string_view preference, std::string_view gold,
                     const SemanticEncoder& encoder) {
  if (preference.empty()) return 0.0;
  const double c = cosine_similarity(encoder.encode(preference), encoder.encode(gold));
  return std::clamp(c, 0.0, 1.0);
}

double composite_reward(const RewardBreakdown& r, const RewardWeights& w) {
  w.validate();
  const double num = w.think * r.think + w.answer * r.answer + w.hit * r.hit +
                     w.rank * r.rank + w.prefer * r.prefer;
  return num / (w.think + w.answer + w.hit + w.rank + w.prefer);
}

RewardBreakdown score_recommendation(const ParsedRecommendation& parsed, ItemId target,
                                     std::string_view gold_preference,
                                     const SemanticEncoder& encoder, const RewardWeights& w) {
  RewardBreakdown r;
  r.think = reward_think(parsed);
  r.answer = reward_answer(parsed);
  r.hit = reward_hit(parsed.ranked_item_ids, target);
  r.rank = reward_rank(parsed.ranked_item_ids, target);
  r.prefer = reward_prefer(parsed.preference, gold_preference, encoder);
  r.weights = w;
  r.composite = composite_reward(r, w);
  return r;
}

}  // namespace smtpo
