// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "smtpo/orchestrator.hpp"

using namespace smtpo;
using doctest::Approx;

namespace {

struct Stack {
  const Corpus& corpus = test::small_corpus();
  HashingEncoder sem{64};
  CollabEmbeddings collab;
  RetrieverParams params;
  ItemIndex index;
  RetrievalStack stack;

  Stack() {
    BprConfig bc;
    bc.dim = 8;
    bc.n_epochs = 5;
    collab = pretrain_collab(corpus.kg(), bc);
    RetrieverTrainConfig rc;
    rc.epochs = 3;
    params = train_retriever(corpus, sem, collab, rc, make_training_context_source(corpus, 0));
    index = ItemIndex(corpus, sem, collab);
    stack = {&corpus, &sem, &collab, &params, &index};
  }
};

const Stack& shared_stack() {
  static const Stack s;
  return s;
}

// Puts the target first whenever retrieval surfaced it.
class OracleRecommender final : public ChatBackend {
 public:
  BackendKind kind() const override { return BackendKind::scripted_recommender; }
  std::string complete(const AgentRequest& r) const override {
    std::vector<ItemId> ids;
    for (const auto& c : r.candidates) ids.push_back(c.id);
    auto it = std::find(ids.begin(), ids.end(), r.dialogue->target_item_id);
    if (it != ids.end()) std::rotate(ids.begin(), it, it + 1);
    if (ids.size() > r.list_size) ids.resize(r.list_size);
    return format_recommendation(*r.corpus, "oracle", ids, std::vector<std::size_t>(ids.size(), 0), "oracle");
  }
};

class BrokenBackend final : public ChatBackend {
 public:
  BackendKind kind() const override { return BackendKind::http; }
  std::string complete(const AgentRequest&) const override { throw BackendError("down", false); }
};

std::vector<const Dialogue*> first_test(std::size_t n) {
  auto all = shared_stack().corpus.dialogues_in(Split::test);
  if (all.size() > n) all.resize(n);
  return all;
}

}  // namespace

TEST_CASE("rank metrics") {
  const std::vector<ItemId> list{7, 8, 9, 10};
  auto m = rank_metrics(list, 7, 10);
  CHECK(m.recall == 1.0);
  CHECK(m.ndcg == 1.0);
  CHECK(m.mrr == 1.0);
  m = rank_metrics(list, 9, 10);
  CHECK(m.recall == 1.0);
  CHECK(m.ndcg == Approx(0.5).epsilon(1e-12));
  CHECK(m.mrr == Approx(1.0 / 3).epsilon(1e-12));
  m = rank_metrics(list, 99, 10);
  CHECK(m.recall == 0.0);
  CHECK(m.ndcg == 0.0);
  CHECK(m.mrr == 0.0);
  m = rank_metrics(list, 10, 2);
  CHECK(m.recall == 0.0);
}

TEST_CASE("query context follows ablation flags") {
  const Corpus c = test::tiny_corpus();
  const Dialogue& d = c.dialogue(1);
  const std::vector<ItemId> prev{3};
  AblationFlags none;
  auto q = turn_query_context(d, "fb", "pref", prev, none);
  CHECK(q.feedback == "fb");
  CHECK(q.preference == "pref");
  CHECK(q.prev_rec_ids == prev);
  AblationFlags f;
  f.set(AblationMode::no_feedback_in_retrieval);
  f.set(AblationMode::no_pref_in_retrieval);
  f.set(AblationMode::no_rec_in_retrieval);
  q = turn_query_context(d, "fb", "pref", prev, f);
  CHECK(q.feedback.empty());
  CHECK(q.preference.empty());
  CHECK(q.prev_rec_ids.empty());
  CHECK(q.dialogue_text == dialogue_text(d));
  CHECK_THROWS_AS(parse_ablation_mode("louder_feedback"), ConfigError);
}

TEST_CASE("episodes") {
  const auto& s = shared_stack();
  const auto prompts = PromptLibrary::embedded();
  const ScriptedSimulator sim(1);
  const ScriptedRecommender rec;
  const Agents agents{&sim, &rec, &prompts};
  EpisodeConfig cfg;

  SUBCASE("single turn is a pure cold start") {
    cfg.max_turns = 1;
    const auto t = run_episode(*first_test(1)[0], agents, s.stack, cfg);
    REQUIRE(t.turns.size() == 1);
    CHECK(t.turns[0].turn == 0);
    CHECK(t.turns[0].feedback.empty());
  }

  SUBCASE("a cold-start hit freezes the remaining turns") {
    const OracleRecommender oracle;
    const Agents with_oracle{&sim, &oracle, &prompts};
    bool found = false;
    for (const Dialogue* d : first_test(30)) {
      const auto t = run_episode(*d, with_oracle, s.stack, cfg);
      if (t.hit_turn != std::optional<int>(0)) continue;
      found = true;
      CHECK(t.status == EpisodeStatus::hit);
      REQUIRE(t.turns.size() == 5);
      for (std::size_t i = 1; i < 5; ++i) {
        CHECK(t.turns[i].frozen);
        CHECK(t.turns[i].rec_list == t.turns[0].rec_list);
      }
      break;
    }
    CHECK(found);
  }

  SUBCASE("backend failures mark the episode failed") {
    const BrokenBackend broken;
    const Agents bad{&sim, &broken, &prompts};
    const auto t = run_episode(*first_test(1)[0], bad, s.stack, cfg);
    CHECK(t.status == EpisodeStatus::failed);
    CHECK_FALSE(t.error.empty());
    const auto r = run_eval(first_test(3), bad, s.stack, cfg);
    CHECK(r.failed == 3);
    CHECK(r.episodes == 3);
  }

  SUBCASE("reward breakdowns attach to live turns") {
    const HashingEncoder enc(64);
    const auto t = run_episode(*first_test(1)[0], agents, s.stack, cfg, &enc);
    for (const auto& turn : t.turns)
      if (!turn.frozen) {
        REQUIRE(turn.rewards);
        CHECK(turn.rewards->think == 1.0);
      }
  }
}

TEST_CASE("oracle recommender turns retrieval hits into list hits") {
  const auto& s = shared_stack();
  const auto prompts = PromptLibrary::embedded();
  const ScriptedSimulator sim(1);
  const OracleRecommender oracle;
  const auto r = run_eval(first_test(40), {&sim, &oracle, &prompts}, s.stack, EpisodeConfig{});
  REQUIRE(r.turns.size() == 5);
  for (const auto& t : r.turns) CHECK(t.recall_10 == Approx(t.retriever_recall).epsilon(1e-12));
  CHECK(r.turns[0].recall_1 == Approx(r.turns[0].recall_10).epsilon(1e-12));
}

TEST_CASE("evaluation invariants") {
  const auto& s = shared_stack();
  const auto prompts = PromptLibrary::embedded();
  const ScriptedSimulator sim(1);
  const ScriptedRecommender rec;
  const Agents agents{&sim, &rec, &prompts};
  const auto dialogues = first_test(30);
  const auto serial = run_eval(dialogues, agents, s.stack, EpisodeConfig{}, 1);
  const auto parallel = run_eval(dialogues, agents, s.stack, EpisodeConfig{}, 4);
  REQUIRE(serial.turns.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(serial.turns[i].recall_10 == parallel.turns[i].recall_10);
  CHECK(metrics_json(serial) == metrics_json(parallel));
  for (std::size_t i = 1; i < 5; ++i) CHECK(serial.turns[i].recall_10 >= serial.turns[i - 1].recall_10);

  for (const auto& t : serial.traces) {
    bool hit = false;
    for (const auto& turn : t.turns) {
      if (hit) CHECK(turn.frozen);
      if (std::find(turn.rec_list.begin(), turn.rec_list.end(), s.corpus.dialogue(t.dialogue_id).target_item_id) !=
          turn.rec_list.end())
        hit = true;
    }
  }

  const auto empty = run_eval({}, agents, s.stack, EpisodeConfig{});
  CHECK(empty.episodes == 0);
  CHECK(format_metrics_table(empty).find("no episodes") != std::string::npos);

  test::TempDir dir("traces");
  write_traces(serial, dir / "t.jsonl");
  CHECK(test::count_lines(dir / "t.jsonl") == serial.traces.size());
}

TEST_CASE("blind simulator prompts never show the list") {
  const auto& s = shared_stack();
  const auto prompts = PromptLibrary::embedded();
  const ScriptedSimulator sim(1);
  const ScriptedRecommender rec;
  EpisodeConfig cfg;
  cfg.flags.set(AblationMode::blind_simulator);
  const auto r = run_eval(first_test(20), {&sim, &rec, &prompts}, s.stack, cfg);
  for (const auto& t : r.traces) {
    const std::string dtext = dialogue_text(s.corpus.dialogue(t.dialogue_id));
    for (std::size_t i = 1; i < t.turns.size(); ++i) {
      if (t.turns[i].frozen) continue;
      for (ItemId id : t.turns[i - 1].rec_list) {
        const std::string& title = s.corpus.item(id).title;
        if (dtext.find(title) == std::string::npos)
          CHECK(t.turns[i].simulator_prompt.find(title) == std::string::npos);
      }
    }
  }
}

TEST_CASE("ablation reports baseline and ablated runs") {
  const auto& s = shared_stack();
  const auto prompts = PromptLibrary::embedded();
  const ScriptedSimulator sim(1);
  const ScriptedRecommender rec;
  const auto r = run_ablation(first_test(20), {&sim, &rec, &prompts}, s.stack, EpisodeConfig{},
                              AblationMode::noise_feedback);
  CHECK(r.baseline.episodes == 20);
  CHECK(r.ablated.episodes == 20);
  const auto j = ablation_json(r);
  CHECK(j.at("mode") == "noise_feedback");
  CHECK(j.contains("baseline"));
  CHECK(j.contains("ablated"));
  // Noise carries no attribute, so scripted recommenders keep their lists.
  CHECK(r.ablated.turns.back().recall_10 == Approx(r.ablated.turns.front().recall_10));
}

TEST_CASE("episode config validation") {
  EpisodeConfig c;
  CHECK_NOTHROW(c.validate());
  c.max_turns = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.k_recommend = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
