// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smtpo/corpus.hpp"

namespace smtpo {

struct FormatFlags {
  bool think_block_present = false;
  bool rank_list_matched = false;

  bool operator==(const FormatFlags&) const = default;
};

struct ParsedRecommendation {
  std::vector<std::string> think_steps;
  std::string preference;
  std::vector<std::string> ranked_titles;
  std::vector<ItemId> ranked_item_ids;  // distinct, resolved
  FormatFlags format_flags;
};

// Total: never throws. Steps are `Step<k>:` segments inside the first
// <think>...</think>; the preference is the "Preference Inference" step (or
// the first step). The rank list is the first "RANK LIST: [..]" holding at
// least one non-empty title; unresolved titles are dropped, repeats keep the
// first occurrence.
ParsedRecommendation parse_recommender_output(std::string_view text, const Corpus& corpus);

std::optional<ItemId> match_title(std::string_view raw_title, const Corpus& corpus);

}  // namespace smtpo
