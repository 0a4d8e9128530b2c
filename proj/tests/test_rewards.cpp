// SPDX-License-Identifier: Apache-2.0
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "smtpo/rewards.hpp"

using namespace smtpo;
using doctest::Approx;

TEST_CASE("think reward") {
  CHECK(reward_think(std::size_t{5}) == 1.0);
  CHECK(reward_think(std::size_t{7}) == Approx(0.6).epsilon(1e-12));
  CHECK(reward_think(std::size_t{1}) == Approx(0.2).epsilon(1e-12));
  CHECK(reward_think(std::size_t{0}) == 0.0);
  CHECK(reward_think(std::size_t{8}) == 0.0);
  ParsedRecommendation p;
  p.think_steps.assign(4, "s");
  CHECK(reward_think(p) == Approx(0.8).epsilon(1e-12));
}

TEST_CASE("answer reward") {
  const Corpus c = test::tiny_corpus();
  CHECK(reward_answer(parse_recommender_output("RANK LIST: [Joker]", c)) == 1.0);
  CHECK(reward_answer(parse_recommender_output("free prose", c)) == 0.0);
  CHECK(reward_answer(parse_recommender_output("RANK LIST: []", c)) == 0.0);
}

TEST_CASE("hit and rank rewards") {
  const std::vector<ItemId> list{4, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  CHECK(reward_hit(list, 9) == 1.0);
  CHECK(reward_hit(list, 99) == 0.0);
  CHECK(reward_hit(std::vector<ItemId>{}, 9) == 0.0);
  CHECK(reward_rank(list, 4) == 1.0);
  CHECK(reward_rank(list, 13) == Approx(0.1).epsilon(1e-12));
  CHECK(reward_rank(list, 99) == 0.0);
  CHECK(reward_rank(std::vector<ItemId>{}, 4) == 0.0);
}

TEST_CASE("preference reward") {
  const HashingEncoder enc(256);
  CHECK(reward_prefer("likes 1990s comedy", "likes 1990s comedy", enc) == Approx(1.0).epsilon(1e-12));
  CHECK(reward_prefer("", "likes comedy", enc) == 0.0);
  CHECK(reward_prefer("alpha beta", "gamma delta", enc) >= 0.0);
  // Disjoint tokens can still collide in a hashed space; a wide one keeps
  // this pair orthogonal.
  const HashingEncoder wide(1 << 16);
  CHECK(reward_prefer("alpha beta", "gamma delta", wide) == 0.0);
}

TEST_CASE("composite reward") {
  const RewardWeights w;
  RewardBreakdown r;
  r.think = r.answer = r.hit = r.rank = r.prefer = 1.0;
  CHECK(composite_reward(r, w) == Approx(1.0).epsilon(1e-12));
  CHECK(composite_reward(RewardBreakdown{}, w) == 0.0);
  r.rank = 0.55;
  r.prefer = 0.8;
  CHECK(composite_reward(r, w) == Approx(0.87).epsilon(1e-12));
  RewardWeights only_hit{0, 0, 2, 0, 0};
  CHECK(composite_reward(r, only_hit) == 1.0);
  RewardWeights bad{0, 0, 0, 0, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  RewardWeights neg{1, -1, 1, 1, 1};
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("scored recommendations stay in the unit interval") {
  const Corpus& c = test::small_corpus();
  const HashingEncoder enc(64);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> n_steps(0, 9), n_items(0, 12), pick(0, c.items().size() - 1);
  for (int i = 0; i < 2000; ++i) {
    ParsedRecommendation p;
    p.think_steps.assign(n_steps(rng), "step");
    p.preference = i % 3 ? "likes " + c.items()[pick(rng)].title : "";
    const std::size_t n = n_items(rng);
    for (std::size_t k = 0; k < n; ++k) p.ranked_item_ids.push_back(c.items()[pick(rng)].id);
    p.format_flags.rank_list_matched = !p.ranked_item_ids.empty();
    const auto r = score_recommendation(p, c.items()[pick(rng)].id, "gold text", enc, {});
    for (double v : {r.think, r.answer, r.hit, r.rank, r.prefer, r.composite}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
