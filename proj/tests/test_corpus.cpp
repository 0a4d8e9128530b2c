// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "fixtures.hpp"
#include "smtpo/corpus.hpp"
#include "smtpo/text.hpp"

using namespace smtpo;
using smtpo::test::TempDir;

TEST_CASE("corpus round-trips through its JSONL writer") {
  const Corpus c = test::tiny_corpus();
  TempDir dir("corpus_rt");
  write_corpus(c, dir.path());
  const Corpus back = load_corpus(dir.path());
  CHECK(back == c);
  CHECK(back.items().size() == 3);
  CHECK(back.kg().node_count() == 7);
  CHECK(back.dialogues_in(Split::test).size() == 1);
}

TEST_CASE("dangling references are rejected with the offending id") {
  const Corpus c = test::tiny_corpus();
  auto dialogues = c.dialogues();
  dialogues[0].target_item_id = 999;
  try {
    Corpus bad(c.items(), c.attributes(), dialogues, c.kg().edges());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("999") != std::string::npos);
  }

  TempDir dir("corpus_dangling");
  write_corpus(c, dir.path());
  {
    std::ofstream out(dir / "kg_edges.jsonl", std::ios::app);
    out << R"({"item_id":999,"attribute_id":101})" << '\n';
  }
  CHECK_THROWS_AS(load_corpus(dir.path()), DataError);
}

TEST_CASE("overlapping item and attribute ids are rejected") {
  const Corpus c = test::tiny_corpus();
  auto attrs = c.attributes();
  attrs.push_back({1, "clash", AttributeKind::other});
  CHECK_THROWS_AS(Corpus(c.items(), attrs, {}, c.kg().edges()), DataError);
}

TEST_CASE("empty dialogue file yields a valid corpus without dialogues") {
  TempDir dir("corpus_empty");
  write_corpus(test::tiny_corpus().with_dialogues({}), dir.path());
  const Corpus c = load_corpus(dir.path());
  CHECK(c.dialogues().empty());
  CHECK(c.items().size() == 3);
}

TEST_CASE("malformed JSONL names file and line") {
  TempDir dir("corpus_malformed");
  write_corpus(test::tiny_corpus(), dir.path());
  {
    std::ofstream out(dir / "items.jsonl", std::ios::app);
    out << "{not json\n";
  }
  try {
    load_corpus(dir.path());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("items.jsonl:4") != std::string::npos);
  }
}

TEST_CASE("synthetic corpus at the reference size") {
  const Corpus c = generate_synthetic_corpus({7, 500, 40, 2000});
  CHECK(c.items().size() == 500);
  CHECK(c.attributes().size() == 40);
  REQUIRE(c.dialogues().size() == 2000);
  for (const auto& d : c.dialogues()) {
    const Item& target = c.item(d.target_item_id);
    REQUIRE_FALSE(d.target_attribute_ids.empty());
    CHECK(attribute_overlap(target, d.target_attribute_ids) == d.target_attribute_ids.size());
    for (ItemId m : mentioned_items(d, c)) CHECK(m != d.target_item_id);
  }
  CHECK(c.dialogues_in(Split::train).size() == 1600);
  CHECK(c.dialogues_in(Split::valid).size() == 200);
  CHECK(c.dialogues_in(Split::test).size() == 200);
}

TEST_CASE("synthetic corpus is byte-identical for a fixed seed") {
  TempDir a("synth_a"), b("synth_b");
  write_corpus(generate_synthetic_corpus({7, 100, 20, 50}), a.path());
  write_corpus(generate_synthetic_corpus({7, 100, 20, 50}), b.path());
  for (const char* f : {"items.jsonl", "attributes.jsonl", "dialogues.jsonl", "kg_edges.jsonl"})
    CHECK(test::slurp(a / f) == test::slurp(b / f));
  write_corpus(generate_synthetic_corpus({8, 100, 20, 50}), b.path());
  CHECK(test::slurp(a / "dialogues.jsonl") != test::slurp(b / "dialogues.jsonl"));
}

TEST_CASE("synthetic corpus rejects undersized catalogs") {
  CHECK_THROWS_AS(generate_synthetic_corpus({7, 5, 5, 1}), ConfigError);
}

TEST_CASE("split_corpus sizes and validation") {
  const Corpus base = generate_synthetic_corpus({3, 50, 10, 100});
  const Corpus c = split_corpus(base, {0.8, 0.1, 0.1}, 1);
  CHECK(c.dialogues_in(Split::train).size() == 80);
  CHECK(c.dialogues_in(Split::valid).size() == 10);
  CHECK(c.dialogues_in(Split::test).size() == 10);
  CHECK(split_corpus(base, {0.8, 0.1, 0.1}, 1) == c);
  CHECK_THROWS_AS(split_corpus(base, {0.5, 0.5, 0.5}, 1), ConfigError);

  const Corpus one = split_corpus(base.with_dialogues({base.dialogues().front()}), {0.8, 0.1, 0.1}, 1);
  std::size_t total = 0;
  for (Split s : {Split::train, Split::valid, Split::test}) total += one.dialogues_in(s).size();
  CHECK(total == 1);
}

TEST_CASE("attribute_overlap") {
  const Item a{1, "a", {1, 2, 3}, ""};
  const Item b{2, "b", {2, 3, 4}, ""};
  const Item c{3, "c", {7, 8}, ""};
  CHECK(attribute_overlap(a, a) == 3);
  CHECK(attribute_overlap(a, c) == 0);
  CHECK(attribute_overlap(a, b) == 2);
}

TEST_CASE("mentioned entity set deduplicates in first-seen order") {
  Dialogue d;
  d.mentioned = {{5, 7}, {6, std::nullopt}, {5, std::nullopt}, {7, std::nullopt}};
  CHECK(mentioned_entities(d) == std::vector<EntityId>{5, 7, 6});
}

TEST_CASE("title lookup and attribute phrase matching") {
  const Corpus c = test::tiny_corpus();
  CHECK(normalize_title("Joker (2019)") == "joker");
  CHECK(normalize_title("  The  JOKER!! ") == "the joker");
  CHECK(c.find_title("joker") == std::optional<ItemId>(1));
  CHECK_FALSE(c.find_title("batman"));
  const auto named = c.attributes_named_in("Anything with Sigourney Weaver, maybe from the 1990s?");
  CHECK(named == std::vector<AttributeId>{102, 104});
  CHECK(c.attributes_named_in("comedyish").empty());
}

TEST_CASE("dialogue text is speaker-prefixed") {
  const Corpus c = test::tiny_corpus();
  CHECK(dialogue_text(c.dialogue(2)) == "user: Joker was great. Anything by Ridley Scott?");
}
