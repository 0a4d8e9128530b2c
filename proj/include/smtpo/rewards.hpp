// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string_view>

#include "smtpo/parser.hpp"
#include "smtpo/semantic.hpp"

namespace smtpo {

struct RewardWeights {
  double think = 1.0;
  double answer = 1.0;
  double hit = 1.0;
  double rank = 1.0;
  double prefer = 1.0;

  // Nonnegative, finite, at least one positive; ConfigError otherwise.
  void validate() const;
};

struct RewardBreakdown {
  double think = 0.0;
  double answer = 0.0;
  double hit = 0.0;
  double rank = 0.0;
  double prefer = 0.0;
  double composite = 0.0;
  RewardWeights weights;
};

// 1 - |N-5|/5 for 1 <= N <= 7, else 0; N counts think steps.
double reward_think(const ParsedRecommendation& parsed);
double reward_think(std::size_t n_steps);
double reward_answer(const ParsedRecommendation& parsed);
double reward_hit(std::span<const ItemId> ranked, ItemId target);
// 1 - (p-1)/L at 1-based position p of a length-L list, else 0.
double reward_rank(std::span<const ItemId> ranked, ItemId target);
// Cosine of the encodings clamped to [0, 1]; empty preference gives 0.
double reward_prefer(std::string_view preference, std::string_view gold,
                     const SemanticEncoder& encoder);

// Weighted mean of the five components.
double composite_reward(const RewardBreakdown& r, const RewardWeights& w);

RewardBreakdown score_recommendation(const ParsedRecommendation& parsed, ItemId target,
                                     std::string_view gold_preference,
                                     const SemanticEncoder& encoder, const RewardWeights& w);

}  // namespace smtpo
