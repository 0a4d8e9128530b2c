// SPDX-License-Identifier: Apache-2.0
#include "smtpo/parser.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "smtpo/text.hpp"

namespace smtpo {

namespace {

// Positions of "Step<digits>:" markers, case-insensitive on "step".
struct StepMarker {
  std::size_t begin, body;
};

bool iequals_at(std::string_view s, std::size_t pos, std::string_view word) {
  if (pos + word.size() > s.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[pos + i])) != word[i]) return false;
  return true;
}

std::vector<StepMarker> find_steps(std::string_view block) {
  std::vector<StepMarker> out;
  for (std::size_t i = 0; i < block.size(); ++i) {
    if (!iequals_at(block, i, "step")) continue;
    if (i > 0 && std::isalnum(static_cast<unsigned char>(block[i - 1]))) continue;
    std::size_t j = i + 4;
    while (j < block.size() && block[j] == ' ') ++j;
    const std::size_t digits = j;
    while (j < block.size() && std::isdigit(static_cast<unsigned char>(block[j]))) ++j;
    if (j == digits || j >= block.size() || block[j] != ':') continue;
    out.push_back({i, j + 1});
    i = j;
  }
  return out;
}

std::vector<std::string> split_titles(std::string_view inner) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= inner.size(); ++i) {
    if (i == inner.size() || inner[i] == ',') {
      std::string t = trim(inner.substr(start, i - start));
      if (t.size() >= 2 && (t.front() == '"' || t.front() == '\'') && t.back() == t.front())
        t = trim(std::string_view(t).substr(1, t.size() - 2));
      if (!t.empty()) out.push_back(std::move(t));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::optional<ItemId> match_title(std::string_view raw_title, const Corpus& corpus) {
  const std::string norm = normalize_title(raw_title);
  if (norm.empty()) return std::nullopt;
  return corpus.find_title(norm);
}

ParsedRecommendation parse_recommender_output(std::string_view text, const Corpus& corpus) {
  ParsedRecommendation out;

  const auto open = text.find("<think>");
  if (open != std::string_view::npos) {
    const auto close = text.find("</think>", open);
    if (close != std::string_view::npos) {
      out.format_flags.think_block_present = true;
      const std::string_view block = text.substr(open + 7, close - open - 7);
      const auto steps = find_steps(block);
      std::string preference;
      for (std::size_t s = 0; s < steps.size(); ++s) {
        const std::size_t end = s + 1 < steps.size() ? steps[s + 1].begin : block.size();
        std::string body = trim(block.substr(steps[s].body, end - steps[s].body));
        if (preference.empty() && normalize_text(body).find("preference inference") == 0) {
          auto colon = body.find(':');
          preference = trim(colon == std::string::npos ? std::string_view(body)
                                                       : std::string_view(body).substr(colon + 1));
        }
        out.think_steps.push_back(std::move(body));
      }
      if (preference.empty() && !out.think_steps.empty()) preference = out.think_steps.front();
      out.preference = std::move(preference);
    }
  }

  std::size_t pos = 0;
  while ((pos = text.find("RANK LIST:", pos)) != std::string_view::npos) {
    std::size_t i = pos + 10;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    pos += 10;
    if (i >= text.size() || text[i] != '[') continue;
    const auto close = text.find(']', i);
    if (close == std::string_view::npos) break;
    auto titles = split_titles(text.substr(i + 1, close - i - 1));
    if (titles.empty()) continue;
    out.format_flags.rank_list_matched = true;
    std::unordered_set<ItemId> seen;
    for (auto& t : titles) {
      if (auto id = match_title(t, corpus); id && seen.insert(*id).second)
        out.ranked_item_ids.push_back(*id);
      out.ranked_titles.push_back(std::move(t));
    }
    break;
  }
  return out;
}

}  // namespace smtpo
