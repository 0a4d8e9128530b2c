// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "fixtures.hpp"
#include "smtpo/agents.hpp"
#include "smtpo/parser.hpp"

using namespace smtpo;

namespace {

std::vector<ItemId> first_items(const Corpus& c, std::size_t n) {
  std::vector<ItemId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(c.items()[i].id);
  return out;
}

}  // namespace

TEST_CASE("formatted recommendation round-trips") {
  const Corpus& c = test::small_corpus();
  const auto ids = first_items(c, 10);
  const std::string text =
      format_recommendation(c, "likes slow thrillers", ids, std::vector<std::size_t>(10, 1), "by overlap");
  const auto p = parse_recommender_output(text, c);
  CHECK(p.think_steps.size() == 5);
  CHECK(p.preference == "likes slow thrillers");
  CHECK(p.ranked_item_ids == ids);
  CHECK(p.format_flags.think_block_present);
  CHECK(p.format_flags.rank_list_matched);
}

TEST_CASE("missing think block") {
  const Corpus c = test::tiny_corpus();
  const auto p = parse_recommender_output("I suggest RANK LIST: [Joker, Heat]", c);
  CHECK_FALSE(p.format_flags.think_block_present);
  CHECK(p.think_steps.empty());
  CHECK(p.ranked_item_ids == std::vector<ItemId>{1, 2});
  CHECK(p.format_flags.rank_list_matched);
}

TEST_CASE("unknown titles are dropped, repeats keep the first occurrence") {
  const Corpus c = test::tiny_corpus();
  const auto p = parse_recommender_output(
      "<think>Step1: x</think>\nRANK LIST: [Joker (2019), Batman, \"Heat\", Heat, Solaris, alien]", c);
  CHECK(p.ranked_titles.size() == 6);
  CHECK(p.ranked_item_ids == std::vector<ItemId>{1, 2, 3});
  CHECK(p.format_flags.rank_list_matched);
  CHECK(p.think_steps == std::vector<std::string>{"x"});
  CHECK(p.preference == "x");
}

TEST_CASE("empty or absent rank lists do not match") {
  const Corpus c = test::tiny_corpus();
  CHECK_FALSE(parse_recommender_output("RANK LIST: []", c).format_flags.rank_list_matched);
  CHECK_FALSE(parse_recommender_output("just prose, no list", c).format_flags.rank_list_matched);
  CHECK_FALSE(parse_recommender_output("", c).format_flags.think_block_present);
  const auto later = parse_recommender_output("RANK LIST: [ , ] then RANK LIST: [Heat]", c);
  CHECK(later.format_flags.rank_list_matched);
  CHECK(later.ranked_item_ids == std::vector<ItemId>{2});
}

TEST_CASE("preference comes from the preference inference step") {
  const Corpus c = test::tiny_corpus();
  const auto p = parse_recommender_output(
      "<think>Step1: Attribute Matching: a\nstep 2: Preference Inference: wants 1990s comedy\n"
      "Step3: Scoring: s</think>RANK LIST: [Joker]",
      c);
  CHECK(p.think_steps.size() == 3);
  CHECK(p.preference == "wants 1990s comedy");
}

TEST_CASE("unterminated think block counts as absent") {
  const Corpus c = test::tiny_corpus();
  const auto p = parse_recommender_output("<think>Step1: a Step2: b RANK LIST: [Joker]", c);
  CHECK_FALSE(p.format_flags.think_block_present);
  CHECK(p.ranked_item_ids == std::vector<ItemId>{1});
}

TEST_CASE("title matching") {
  const Corpus c = test::tiny_corpus();
  CHECK(match_title("Joker (2019)", c) == std::optional<ItemId>(1));
  CHECK(match_title("JOKER", c) == std::optional<ItemId>(1));
  CHECK_FALSE(match_title("Unknown Film", c));
  CHECK_FALSE(match_title("", c));
}

TEST_CASE("parser is total on arbitrary bytes") {
  const Corpus c = test::tiny_corpus();
  std::mt19937_64 rng(9);
  const std::string alphabet = "<>/[]:,\"' thinkSTEPRANKLIST0123456789JokerHeat\n";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 200);
  for (int i = 0; i < 2000; ++i) {
    std::string s(len(rng), ' ');
    for (char& ch : s) ch = alphabet[pick(rng)];
    CHECK_NOTHROW(parse_recommender_output(s, c));
  }
}
