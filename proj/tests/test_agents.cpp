// SPDX-License-Identifier: Apache-2.0
// agents.hpp first: Eigen must precede httplib.h.
#include "smtpo/agents.hpp"

#include <atomic>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "httplib.h"
#include "json.hpp"
#include "smtpo/prompts.hpp"
#include "smtpo/rewards.hpp"

using namespace smtpo;

namespace {

CandidateSet candidates_of(const std::vector<ItemId>& ids) {
  CandidateSet c;
  double s = 0;
  for (ItemId id : ids) c.items.push_back({id, s -= 1});
  return c;
}

}  // namespace

TEST_CASE("scripted simulator names uncovered target attributes") {
  const Corpus c = test::tiny_corpus();
  const auto prompts = PromptLibrary::embedded();
  const Dialogue& d = c.dialogue(1);  // target attributes comedy, 1990s
  const std::vector<ItemId> prev{3};  // carries neither
  const auto req = simulator_request(c, d, prev, false, prompts, 1);
  const std::string fb = simulate_feedback(ScriptedSimulator(3), req);
  CHECK(fb.find("comedy") != std::string::npos);
  CHECK(fb.find("1990s") != std::string::npos);
  CHECK(scripted_feedback_attributes(c, d, prev, 3) == std::vector<AttributeId>{101, 102});

  // Item 2 covers 1990s, so only comedy is missing.
  const std::vector<ItemId> covers{2};
  CHECK(scripted_feedback_attributes(c, d, covers, 3) == std::vector<AttributeId>{101});
  // Everything covered: the least-covered attribute comes back.
  const std::vector<ItemId> full{1};
  CHECK_FALSE(scripted_feedback_attributes(c, d, full, 3).empty());
}

TEST_CASE("blind simulator prompts carry no recommendation titles") {
  const Corpus& c = test::small_corpus();
  const auto prompts = PromptLibrary::embedded();
  const Dialogue& d = c.dialogues().front();
  std::vector<ItemId> prev;
  for (const auto& it : c.items())
    if (it.id != d.target_item_id && prev.size() < 10) prev.push_back(it.id);
  const auto blind = simulator_request(c, d, prev, true, prompts, 1);
  const auto sighted = simulator_request(c, d, prev, false, prompts, 1);
  CHECK(blind.prev_recs.empty());
  std::size_t seen = 0;
  for (ItemId id : prev) {
    const std::string& title = c.item(id).title;
    const bool in_dialogue = dialogue_text(d).find(title) != std::string::npos;
    if (!in_dialogue) CHECK(blind.messages.back().content.find(title) == std::string::npos);
    if (sighted.messages.back().content.find(title) != std::string::npos) ++seen;
  }
  CHECK(seen == prev.size());
}

TEST_CASE("noise simulator is deterministic and off-topic") {
  const Corpus& c = test::small_corpus();
  const auto prompts = PromptLibrary::embedded();
  const Dialogue& d = c.dialogues()[3];
  const auto req = simulator_request(c, d, {}, false, prompts, 2);
  const std::string a = NoiseSimulator(4).complete(req);
  CHECK(a == NoiseSimulator(4).complete(req));
  CHECK(std::find(NoiseSimulator::pool().begin(), NoiseSimulator::pool().end(), a) !=
        NoiseSimulator::pool().end());
  CHECK(c.attributes_named_in(a).empty());
}

TEST_CASE("scripted recommender follows the latest feedback") {
  const Corpus c = test::tiny_corpus();
  const auto prompts = PromptLibrary::embedded();
  const Dialogue& d = c.dialogue(1);
  const auto req = recommender_request(c, d, candidates_of({1, 2, 3}),
                                       {"Anything with Sigourney Weaver?"}, {""}, {}, prompts, 1);
  const auto p = parse_recommender_output(generate_recommendation(ScriptedRecommender{}, req), c);
  REQUIRE_FALSE(p.ranked_item_ids.empty());
  CHECK(p.ranked_item_ids.front() == 3);
  CHECK(reward_think(p) == 1.0);
  CHECK(reward_answer(p) == 1.0);
}

TEST_CASE("scripted recommender keeps its list when feedback names nothing") {
  const Corpus c = test::tiny_corpus();
  const auto prompts = PromptLibrary::embedded();
  const std::vector<ItemId> prev{2, 1};
  const auto req = recommender_request(c, c.dialogue(1), candidates_of({3, 1, 2}),
                                       {"My cat is on the keyboard."}, {""}, prev, prompts, 1);
  const auto p = parse_recommender_output(ScriptedRecommender{}.complete(req), c);
  CHECK(p.ranked_item_ids == std::vector<ItemId>{2, 1, 3});
  CHECK_FALSE(feedback_is_actionable(c, {"My cat is on the keyboard."}));
  CHECK(feedback_is_actionable(c, {"comedy"}));
  CHECK_FALSE(feedback_is_actionable(c, {}));
}

TEST_CASE("hold_previous_list") {
  const std::vector<ItemId> ranked{5, 6, 7, 8};
  const std::vector<ItemId> prev{7, 9, 5};
  CHECK(hold_previous_list(ranked, prev) == std::vector<ItemId>{7, 5, 6, 8});
  CHECK(hold_previous_list(ranked, {}) == ranked);
}

TEST_CASE("twenty candidates give a ten-title list") {
  const Corpus& c = test::small_corpus();
  const auto prompts = PromptLibrary::embedded();
  const Dialogue& d = c.dialogues().front();
  std::vector<ItemId> ids;
  for (const auto& it : c.items())
    if (ids.size() < 25) ids.push_back(it.id);
  const auto req = recommender_request(c, d, candidates_of(ids), {}, {}, {}, prompts, 0);
  CHECK(req.candidates.size() == 20);
  const auto p = parse_recommender_output(ScriptedRecommender{}.complete(req), c);
  CHECK(p.ranked_titles.size() == 10);
  CHECK(p.ranked_item_ids.size() == 10);
}

TEST_CASE("feedback attributes accumulate in first-seen order") {
  const Corpus c = test::tiny_corpus();
  CHECK(feedback_attributes(c, {"1990s please", "Ridley Scott or 1990s"}) ==
        std::vector<AttributeId>{102, 103});
}

TEST_CASE("prompt templates") {
  CHECK(render_template("a {x} b {y}", {{"x", "1"}, {"y", "2"}}) == "a 1 b 2");
  CHECK(render_template("json {\"k\": 1} {x}", {{"x", "v"}}) == "json {\"k\": 1} v");
  CHECK_THROWS_AS(render_template("{missing}", {}), ConfigError);
  const auto lib = PromptLibrary::embedded();
  for (const char* name : {"simulator", "recommender", "attr_align", "target_pred", "teacher_feedback",
                           "teacher_recommender"})
    CHECK_NOTHROW(lib.get(name));
  CHECK_THROWS_AS(lib.get("nope"), ConfigError);
  CHECK(lib.version() == PromptLibrary::embedded().version());

  test::TempDir dir("prompts");
  {
    std::ofstream out(dir / "simulator.txt");
    out << "Custom {dialogue}";
  }
  const auto custom = PromptLibrary::with_overrides(dir.path());
  CHECK(custom.get("simulator") == "Custom {dialogue}");
  CHECK(custom.get("recommender") == lib.get("recommender"));
  CHECK(custom.version() != lib.version());
}

TEST_CASE("backend kind names round-trip") {
  for (BackendKind k : {BackendKind::http, BackendKind::scripted_simulator, BackendKind::scripted_recommender,
                        BackendKind::noise, BackendKind::scripted_teacher, BackendKind::toy_policy})
    CHECK(parse_backend_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_backend_kind("gpt"), ConfigError);
}

TEST_CASE("http backend retries transient failures") {
  httplib::Server server;
  std::atomic<int> calls{0};
  std::atomic<int> mode{0};  // 0: 429 then ok, 1: always 400, 2: malformed
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++calls;
    const auto body = nlohmann::json::parse(req.body);
    if (mode == 1) {
      res.status = 400;
      res.set_content("bad request", "text/plain");
      return;
    }
    if (mode == 2) {
      res.set_content("{\"choices\":[]}", "application/json");
      return;
    }
    if (n == 1) {
      res.status = 429;
      return;
    }
    const std::string echo = body.at("messages").back().at("content").get<std::string>();
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", "echo:" + echo}}}}}}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpOptions opt;
  opt.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  opt.model = "m";
  opt.initial_backoff = std::chrono::milliseconds(1);
  opt.timeout = std::chrono::milliseconds(5000);
  const HttpChatBackend backend(opt);
  AgentRequest req;
  req.messages = {{"user", "hello"}};
  CHECK(backend.complete(req) == "echo:hello");
  CHECK(calls == 2);

  mode = 1;
  calls = 0;
  try {
    backend.complete(req);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK_FALSE(e.retriable());
  }
  CHECK(calls == 1);

  mode = 2;
  CHECK_THROWS_AS(backend.complete(req), BackendError);

  server.stop();
  t.join();

  HttpOptions dead = opt;
  dead.max_attempts = 2;
  const HttpChatBackend gone(dead);
  try {
    gone.complete(req);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.retriable());
  }
  HttpOptions no_scheme = opt;
  no_scheme.base_url = "localhost:1";
  CHECK_THROWS_AS(HttpChatBackend(no_scheme).complete(req), ConfigError);
}
