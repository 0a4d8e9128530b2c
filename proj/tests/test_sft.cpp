// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "fixtures.hpp"
#include "smtpo/parser.hpp"
#include "smtpo/rewards.hpp"
#include "smtpo/sft_datagen.hpp"

using namespace smtpo;

namespace {

double mean_overlap(const Corpus& c, const Dialogue& d, const std::vector<ItemId>& list) {
  const Item& t = c.item(d.target_item_id);
  double s = 0;
  std::size_t n = 0;
  for (ItemId id : list)
    if (id != d.target_item_id) {
      s += static_cast<double>(attribute_overlap(c.item(id), t));
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

// Fails every request; exercises the skip-and-report path.
class FailingTeacher final : public ChatBackend {
 public:
  BackendKind kind() const override { return BackendKind::http; }
  std::string complete(const AgentRequest&) const override {
    throw BackendError("teacher unavailable", true);
  }
};

}  // namespace

TEST_CASE("candidate list strategies") {
  const Corpus& c = test::small_corpus();
  const Dialogue& d = c.dialogues().front();
  std::mt19937_64 rng(1);
  const auto mentioned = mentioned_items(d, c);

  const auto hw = build_candidate_list(d, c, ListStrategy::HardWithTarget, 10, rng);
  CHECK(hw.size() == 10);
  CHECK(std::count(hw.begin(), hw.end(), d.target_item_id) == 1);
  for (ItemId id : hw) {
    CHECK(std::find(mentioned.begin(), mentioned.end(), id) == mentioned.end());
    if (id != d.target_item_id) CHECK(attribute_overlap(c.item(id), c.item(d.target_item_id)) >= 1);
  }
  const auto sw = build_candidate_list(d, c, ListStrategy::SimpleWithoutTarget, 10, rng);
  CHECK(std::find(sw.begin(), sw.end(), d.target_item_id) == sw.end());
  CHECK(mean_overlap(c, d, sw) <= mean_overlap(c, d, hw));
  std::vector<ItemId> sorted = sw;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

  CHECK(build_candidate_list(d, c, ListStrategy::SimpleWithTarget, 1, rng) ==
        std::vector<ItemId>{d.target_item_id});
}

TEST_CASE("target position is uniform in WithTarget lists") {
  const Corpus& c = test::small_corpus();
  const Dialogue& d = c.dialogues()[5];
  std::mt19937_64 rng(2);
  std::vector<int> hits(10, 0);
  for (int i = 0; i < 2000; ++i) {
    const auto l = build_candidate_list(d, c, ListStrategy::HardWithTarget, 10, rng);
    ++hits[std::find(l.begin(), l.end(), d.target_item_id) - l.begin()];
  }
  for (int h : hits) {
    CHECK(h > 140);
    CHECK(h < 260);
  }
}

TEST_CASE("simulator task counts and labels") {
  const Corpus& c = test::small_corpus();
  const auto prompts = PromptLibrary::embedded();
  const ScriptedTeacher teacher(1);
  std::mt19937_64 rng(3);
  for (const Dialogue* d : c.dialogues_in(Split::train)) {
    const auto tasks = gen_simulator_tasks(*d, c, teacher, prompts, {}, rng);
    std::map<SftTask, int> counts;
    for (const auto& t : tasks) ++counts[t.task];
    CHECK(counts[SftTask::feedback_gen] == 4);
    CHECK(counts[SftTask::attr_align] == 1);
    CHECK(counts[SftTask::target_pred] == 4);
    for (const auto& t : tasks) {
      if (t.task == SftTask::target_pred) {
        const bool yes = t.meta.at("item_id").get<ItemId>() == d->target_item_id;
        CHECK(t.output == (yes ? "Yes" : "No"));
      } else if (t.task == SftTask::feedback_gen) {
        const auto named = c.attributes_named_in(t.output);
        const bool names_target = std::any_of(named.begin(), named.end(), [&](AttributeId a) {
          return std::find(d->target_attribute_ids.begin(), d->target_attribute_ids.end(), a) !=
                 d->target_attribute_ids.end();
        });
        CHECK(names_target);
      } else {
        CHECK(t.output.rfind("(" + c.item(d->target_item_id).title + "; ", 0) == 0);
      }
    }
  }
}

TEST_CASE("teacher failures skip instances and report") {
  const Corpus& c = test::small_corpus();
  std::mt19937_64 rng(4);
  std::vector<std::string> failures;
  const auto tasks = gen_simulator_tasks(c.dialogues().front(), c, FailingTeacher{},
                                         PromptLibrary::embedded(), {}, rng, &failures);
  CHECK(tasks.size() == 5);  // attr_align + target_pred need no teacher
  CHECK(failures.size() == 4);
  CHECK_FALSE(gen_recommender_sft(c.dialogues().front(), c, FailingTeacher{}, PromptLibrary::embedded(),
                                  ListStrategy::HardWithTarget, {}, rng, &failures));
  CHECK(failures.size() == 5);
}

TEST_CASE("recommender SFT instances") {
  const Corpus& c = test::small_corpus();
  const auto prompts = PromptLibrary::embedded();
  const ScriptedTeacher teacher(1);
  std::mt19937_64 rng(6);
  const Dialogue& d = c.dialogues()[7];
  const auto with = gen_recommender_sft(d, c, teacher, prompts, ListStrategy::HardWithTarget, {}, rng);
  REQUIRE(with);
  const auto p = parse_recommender_output(with->output, c);
  CHECK(reward_think(p) == 1.0);
  REQUIRE_FALSE(p.ranked_item_ids.empty());
  CHECK(p.ranked_item_ids.front() == d.target_item_id);

  const auto without = gen_recommender_sft(d, c, teacher, prompts, ListStrategy::HardWithoutTarget, {}, rng);
  REQUIRE(without);
  const auto q = parse_recommender_output(without->output, c);
  const auto cands = without->meta.at("candidates").get<std::vector<ItemId>>();
  CHECK(q.ranked_item_ids.size() == 10);
  std::vector<std::size_t> overlaps;
  for (ItemId id : cands) overlaps.push_back(attribute_overlap(c.item(id), c.item(d.target_item_id)));
  std::sort(overlaps.rbegin(), overlaps.rend());
  std::size_t sum_best = 0, sum_listed = 0;
  for (std::size_t i = 0; i < 10; ++i) sum_best += overlaps[i];
  for (ItemId id : q.ranked_item_ids) sum_listed += attribute_overlap(c.item(id), c.item(d.target_item_id));
  CHECK(sum_listed == sum_best);
}

TEST_CASE("hard lists overlap at least as much as simple lists across seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Corpus c = generate_synthetic_corpus({seed, 200, 30, 100});
    std::mt19937_64 rng(seed);
    double hard = 0, simple = 0;
    for (const auto& d : c.dialogues()) {
      hard += mean_overlap(c, d, build_candidate_list(d, c, ListStrategy::HardWithoutTarget, 10, rng));
      simple += mean_overlap(c, d, build_candidate_list(d, c, ListStrategy::SimpleWithoutTarget, 10, rng));
    }
    CAPTURE(seed);
    CHECK(hard >= simple);
  }
}

TEST_CASE("JSONL emission") {
  test::TempDir dir("sft");
  CHECK(emit_jsonl({}, dir / "empty.jsonl") == 0);
  CHECK(std::filesystem::file_size(dir / "empty.jsonl") == 0);
  std::vector<SftInstance> five;
  for (int i = 0; i < 5; ++i)
    five.push_back({SftTask::target_pred, "instruction\nwith newline " + std::to_string(i), "No", {{"i", i}}});
  CHECK(emit_jsonl(five, dir / "five.jsonl") == 5);
  CHECK(test::count_lines(dir / "five.jsonl") == 5);
  CHECK(read_sft_jsonl(dir / "five.jsonl") == five);
  for (ListStrategy s : kAllStrategies) CHECK(parse_list_strategy(to_string(s)) == s);
}
