// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "smtpo/agents.hpp"
#include "smtpo/grpo.hpp"
#include "smtpo/kg_embed.hpp"
#include "smtpo/orchestrator.hpp"
#include "smtpo/retriever.hpp"
#include "smtpo/rewards.hpp"
#include "smtpo/semantic.hpp"
#include "smtpo/sft_datagen.hpp"

namespace smtpo {

struct SemanticConfig {
  SemanticKind kind = SemanticKind::hashing_mock;
  int dim = 256;
  std::string path;      // file_table
  std::string base_url;  // http_endpoint
  std::string model;
};

struct BackendConfig {
  BackendKind kind = BackendKind::scripted_simulator;
  std::uint64_t seed = 0;
  HttpOptions http;
  std::string policy_path;  // toy_policy; empty means the policy trained in this run
};

struct RunConfig {
  std::uint64_t seed = 7;
  SyntheticSpec synthetic;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  SemanticConfig semantic;
  BprConfig collab;
  RetrieverTrainConfig retriever;
  EpisodeConfig episode;
  BackendConfig simulator;
  BackendConfig recommender{BackendKind::toy_policy, 0, {}, {}};
  BackendConfig teacher{BackendKind::scripted_teacher, 0, {}, {}};
  RewardWeights rewards;
  GrpoConfig grpo;
  VectorXd toy_theta_init = VectorXd::Zero(kToyFeatureCount);
  SftConfig sft;
  std::size_t parallelism = 1;
  std::string prompts_dir;

  void validate() const;
};

// Every key with its default value; the documented schema.
nlohmann::ordered_json default_config_json();

// Strict: unknown keys and ill-typed values are ConfigError naming the key.
RunConfig parse_config(const nlohmann::json& j);
nlohmann::ordered_json to_json(const RunConfig& c);

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// defaults < file < overrides.
RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides);

std::unique_ptr<SemanticEncoder> make_semantic_encoder(const SemanticConfig& c);
// Toy-policy recommenders need theta; other kinds ignore it.
std::unique_ptr<ChatBackend> make_backend(const BackendConfig& c,
                                          const std::optional<VectorXd>& theta = std::nullopt);

}  // namespace smtpo
