// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "fixtures.hpp"
#include "smtpo/config.hpp"

using namespace smtpo;
using nlohmann::json;

TEST_CASE("defaults are valid and round-trip") {
  const RunConfig c = parse_config(json::object());
  CHECK_NOTHROW(c.validate());
  CHECK(c.episode.max_turns == 5);
  CHECK(c.episode.k_retrieve == 20);
  CHECK(c.episode.k_recommend == 10);
  CHECK(c.grpo.group_size == 4);
  CHECK(c.grpo.clip_epsilon == 0.2);
  CHECK(c.grpo.kl_beta == 0.04);
  CHECK(c.semantic.kind == SemanticKind::hashing_mock);
  CHECK(c.simulator.kind == BackendKind::scripted_simulator);
  const json round = json(to_json(c));
  CHECK(json(to_json(parse_config(round))) == round);
  CHECK(json(default_config_json()) == round);
}

TEST_CASE("unknown keys and bad types name the key") {
  try {
    parse_config(json{{"grpo", {{"gruop_size", 4}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("gruop_size") != std::string::npos);
  }
  try {
    parse_config(json{{"episode", {{"max_turns", "five"}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("max_turns") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(json{{"semantic", {{"kind", "magic"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"split", {0.5, 0.5}}}), ConfigError);
}

TEST_CASE("overrides") {
  json j = json::object();
  apply_override(j, "grpo.epochs=5");
  apply_override(j, "simulator.kind=noise");
  apply_override(j, "rewards.rank=0.5");
  apply_override(j, "prompts_dir=\"/tmp/p\"");
  CHECK(j["grpo"]["epochs"] == 5);
  CHECK(j["simulator"]["kind"] == "noise");
  const RunConfig c = parse_config(j);
  CHECK(c.grpo.epochs == 5);
  CHECK(c.simulator.kind == BackendKind::noise);
  CHECK(c.rewards.rank == 0.5);
  CHECK(c.prompts_dir == "/tmp/p");
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=3"), ConfigError);
}

TEST_CASE("file then overrides") {
  test::TempDir dir("config");
  {
    std::ofstream out(dir / "run.json");
    out << R"({"seed": 11, "grpo": {"epochs": 2}})";
  }
  const RunConfig c = load_config(dir / "run.json", {"grpo.epochs=9"});
  CHECK(c.seed == 11);
  CHECK(c.grpo.epochs == 9);
  CHECK_THROWS_AS(load_config(dir / "missing.json", {}), ConfigError);
  {
    std::ofstream out(dir / "bad.json");
    out << "{ nope";
  }
  CHECK_THROWS_AS(load_config(dir / "bad.json", {}), ConfigError);
}

TEST_CASE("semantic validation rejects inconsistent settings") {
  RunConfig c;
  c.semantic.dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.episode.k_recommend = 50;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("factories") {
  RunConfig c;
  const auto enc = make_semantic_encoder(c.semantic);
  CHECK(enc->dim() == 256);
  CHECK(make_backend(c.simulator)->kind() == BackendKind::scripted_simulator);
  CHECK(make_backend(c.teacher)->kind() == BackendKind::scripted_teacher);
  CHECK_THROWS_AS(make_backend(c.recommender), ConfigError);
  CHECK(make_backend(c.recommender, VectorXd::Zero(kToyFeatureCount))->kind() == BackendKind::toy_policy);
  BackendConfig http;
  http.kind = BackendKind::http;
  http.http.base_url = "http://127.0.0.1:9/v1";
  CHECK(make_backend(http)->kind() == BackendKind::http);
}
