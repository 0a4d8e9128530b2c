// SPDX-License-Identifier: Apache-2.0
#include "smtpo/config.hpp"

#include <fstream>

namespace smtpo {

namespace {

using ojson = nlohmann::ordered_json;

std::string kind_of(const nlohmann::json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

// Merges `src` into `dst`, which carries the full schema with defaults.
void merge_strict(ojson& dst, const nlohmann::json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!dst.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    ojson& slot = dst[key];
    if (slot.is_object()) {
      merge_strict(slot, value, where);
    } else {
      if (kind_of(slot) != kind_of(value))
        throw ConfigError("config key '" + where + "' expects " + kind_of(slot) + ", got " +
                          kind_of(value));
      slot = value;
    }
  }
}

ojson http_json(const HttpOptions& h) {
  return {{"base_url", h.base_url},
          {"model", h.model},
          {"timeout_ms", h.timeout.count()},
          {"temperature", h.temperature},
          {"max_tokens", h.max_tokens},
          {"max_attempts", h.max_attempts},
          {"initial_backoff_ms", h.initial_backoff.count()},
          {"max_in_flight", h.max_in_flight}};
}

ojson backend_json(const BackendConfig& b) {
  return {{"kind", to_string(b.kind)},
          {"seed", b.seed},
          {"policy_path", b.policy_path},
          {"http", http_json(b.http)}};
}

template <typename T>
T get(const ojson& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + path + "." + key + "' has an invalid value");
  }
}

BackendConfig parse_backend(const ojson& j, const std::string& path) {
  BackendConfig b;
  b.kind = parse_backend_kind(get<std::string>(j, "kind", path));
  b.seed = get<std::uint64_t>(j, "seed", path);
  b.policy_path = get<std::string>(j, "policy_path", path);
  const auto& h = j.at("http");
  const std::string hp = path + ".http";
  b.http.base_url = get<std::string>(h, "base_url", hp);
  b.http.model = get<std::string>(h, "model", hp);
  b.http.timeout = std::chrono::milliseconds(get<std::int64_t>(h, "timeout_ms", hp));
  b.http.temperature = get<double>(h, "temperature", hp);
  b.http.max_tokens = get<int>(h, "max_tokens", hp);
  b.http.max_attempts = get<int>(h, "max_attempts", hp);
  b.http.initial_backoff = std::chrono::milliseconds(get<std::int64_t>(h, "initial_backoff_ms", hp));
  b.http.max_in_flight = get<int>(h, "max_in_flight", hp);
  return b;
}

const char* semantic_kind_name(SemanticKind k) { return to_string(k); }

SemanticKind parse_semantic_kind(const std::string& s) {
  for (auto k : {SemanticKind::file_table, SemanticKind::http_endpoint, SemanticKind::hashing_mock})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown semantic.kind '" + s + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (synthetic.n_items < 10) throw ConfigError("synthetic.n_items below minimum of 10");
  double sum = 0.0;
  for (double r : split) {
    if (!(r > 0)) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (semantic.dim <= 0) throw ConfigError("semantic.dim must be positive");
  collab.validate();
  retriever.validate();
  episode.validate();
  rewards.validate();
  grpo.validate();
  sft.validate();
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (toy_theta_init.size() != kToyFeatureCount || !toy_theta_init.allFinite())
    throw ConfigError("grpo.theta_init must hold " + std::to_string(kToyFeatureCount) + " finite numbers");
}

nlohmann::ordered_json default_config_json() { return to_json(RunConfig{}); }

nlohmann::ordered_json to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["synthetic"] = {{"seed", c.synthetic.seed},
                    {"n_items", c.synthetic.n_items},
                    {"n_attrs", c.synthetic.n_attrs},
                    {"n_dialogues", c.synthetic.n_dialogues}};
  j["split"] = c.split;
  j["semantic"] = {{"kind", semantic_kind_name(c.semantic.kind)},
                   {"dim", c.semantic.dim},
                   {"path", c.semantic.path},
                   {"base_url", c.semantic.base_url},
                   {"model", c.semantic.model}};
  j["collab"] = {{"dim", c.collab.dim},
                 {"n_layers", c.collab.n_layers},
                 {"learning_rate", c.collab.learning_rate},
                 {"n_epochs", c.collab.n_epochs},
                 {"negatives_per_positive", c.collab.negatives_per_positive},
                 {"batch_size", c.collab.batch_size},
                 {"weight_decay", c.collab.weight_decay},
                 {"seed", c.collab.seed},
                 {"init_scale", c.collab.init_scale}};
  j["retriever"] = {{"epochs", c.retriever.epochs},
                    {"learning_rate", c.retriever.learning_rate},
                    {"batch_size", c.retriever.batch_size},
                    {"negatives", c.retriever.negatives},
                    {"temperature", c.retriever.temperature},
                    {"patience", c.retriever.patience},
                    {"eval_k", c.retriever.eval_k},
                    {"fusion_mode", to_string(c.retriever.fusion_mode)},
                    {"seed", c.retriever.seed}};
  j["episode"] = {{"max_turns", c.episode.max_turns},
                  {"k_retrieve", c.episode.k_retrieve},
                  {"k_recommend", c.episode.k_recommend},
                  {"seed", c.episode.seed},
                  {"ablation",
                   {{"blind_simulator", c.episode.flags.blind_simulator},
                    {"noise_feedback", c.episode.flags.noise_feedback},
                    {"no_pref_in_retrieval", c.episode.flags.no_pref_in_retrieval},
                    {"no_rec_in_retrieval", c.episode.flags.no_rec_in_retrieval},
                    {"no_feedback_in_retrieval", c.episode.flags.no_feedback_in_retrieval}}}};
  j["simulator"] = backend_json(c.simulator);
  j["recommender"] = backend_json(c.recommender);
  j["teacher"] = backend_json(c.teacher);
  j["rewards"] = {{"think", c.rewards.think},
                  {"answer", c.rewards.answer},
                  {"hit", c.rewards.hit},
                  {"rank", c.rewards.rank},
                  {"prefer", c.rewards.prefer}};
  j["grpo"] = {{"group_size", c.grpo.group_size},
               {"clip_epsilon", c.grpo.clip_epsilon},
               {"kl_beta", c.grpo.kl_beta},
               {"learning_rate", c.grpo.learning_rate},
               {"epochs", c.grpo.epochs},
               {"inner_steps", c.grpo.inner_steps},
               {"max_grad_norm", c.grpo.max_grad_norm},
               {"max_dialogues", c.grpo.max_dialogues},
               {"seed", c.grpo.seed},
               {"theta_init", std::vector<double>(c.toy_theta_init.data(),
                                                  c.toy_theta_init.data() + c.toy_theta_init.size())}};
  j["sft"] = {{"list_size", c.sft.list_size},
              {"target_pred_per_dialogue", c.sft.target_pred_per_dialogue},
              {"recommender_candidates", c.sft.recommender_candidates}};
  j["parallelism"] = c.parallelism;
  j["prompts_dir"] = c.prompts_dir;
  return j;
}

RunConfig parse_config(const nlohmann::json& user) {
  ojson j = default_config_json();
  merge_strict(j, user, "");
  RunConfig c;
  c.seed = get<std::uint64_t>(j, "seed", "");
  const auto& syn = j["synthetic"];
  c.synthetic.seed = get<std::uint64_t>(syn, "seed", "synthetic");
  c.synthetic.n_items = get<std::size_t>(syn, "n_items", "synthetic");
  c.synthetic.n_attrs = get<std::size_t>(syn, "n_attrs", "synthetic");
  c.synthetic.n_dialogues = get<std::size_t>(syn, "n_dialogues", "synthetic");
  const auto split = get<std::vector<double>>(j, "split", "");
  if (split.size() != 3) throw ConfigError("config key 'split' needs three ratios");
  c.split = {split[0], split[1], split[2]};

  const auto& sem = j["semantic"];
  c.semantic.kind = parse_semantic_kind(get<std::string>(sem, "kind", "semantic"));
  c.semantic.dim = get<int>(sem, "dim", "semantic");
  c.semantic.path = get<std::string>(sem, "path", "semantic");
  c.semantic.base_url = get<std::string>(sem, "base_url", "semantic");
  c.semantic.model = get<std::string>(sem, "model", "semantic");

  const auto& col = j["collab"];
  c.collab.dim = get<int>(col, "dim", "collab");
  c.collab.n_layers = get<int>(col, "n_layers", "collab");
  c.collab.learning_rate = get<double>(col, "learning_rate", "collab");
  c.collab.n_epochs = get<int>(col, "n_epochs", "collab");
  c.collab.negatives_per_positive = get<int>(col, "negatives_per_positive", "collab");
  c.collab.batch_size = get<int>(col, "batch_size", "collab");
  c.collab.weight_decay = get<double>(col, "weight_decay", "collab");
  c.collab.seed = get<std::uint64_t>(col, "seed", "collab");
  c.collab.init_scale = get<double>(col, "init_scale", "collab");

  const auto& ret = j["retriever"];
  c.retriever.epochs = get<int>(ret, "epochs", "retriever");
  c.retriever.learning_rate = get<double>(ret, "learning_rate", "retriever");
  c.retriever.batch_size = get<int>(ret, "batch_size", "retriever");
  c.retriever.negatives = get<int>(ret, "negatives", "retriever");
  c.retriever.temperature = get<double>(ret, "temperature", "retriever");
  c.retriever.patience = get<int>(ret, "patience", "retriever");
  c.retriever.eval_k = get<int>(ret, "eval_k", "retriever");
  c.retriever.fusion_mode = parse_fusion_mode(get<std::string>(ret, "fusion_mode", "retriever"));
  c.retriever.seed = get<std::uint64_t>(ret, "seed", "retriever");

  const auto& ep = j["episode"];
  c.episode.max_turns = get<int>(ep, "max_turns", "episode");
  c.episode.k_retrieve = get<std::size_t>(ep, "k_retrieve", "episode");
  c.episode.k_recommend = get<std::size_t>(ep, "k_recommend", "episode");
  c.episode.seed = get<std::uint64_t>(ep, "seed", "episode");
  const auto& ab = ep["ablation"];
  c.episode.flags.blind_simulator = get<bool>(ab, "blind_simulator", "episode.ablation");
  c.episode.flags.noise_feedback = get<bool>(ab, "noise_feedback", "episode.ablation");
  c.episode.flags.no_pref_in_retrieval = get<bool>(ab, "no_pref_in_retrieval", "episode.ablation");
  c.episode.flags.no_rec_in_retrieval = get<bool>(ab, "no_rec_in_retrieval", "episode.ablation");
  c.episode.flags.no_feedback_in_retrieval =
      get<bool>(ab, "no_feedback_in_retrieval", "episode.ablation");

  c.simulator = parse_backend(j["simulator"], "simulator");
  c.recommender = parse_backend(j["recommender"], "recommender");
  c.teacher = parse_backend(j["teacher"], "teacher");

  const auto& rw = j["rewards"];
  c.rewards.think = get<double>(rw, "think", "rewards");
  c.rewards.answer = get<double>(rw, "answer", "rewards");
  c.rewards.hit = get<double>(rw, "hit", "rewards");
  c.rewards.rank = get<double>(rw, "rank", "rewards");
  c.rewards.prefer = get<double>(rw, "prefer", "rewards");

  const auto& g = j["grpo"];
  c.grpo.group_size = get<int>(g, "group_size", "grpo");
  c.grpo.clip_epsilon = get<double>(g, "clip_epsilon", "grpo");
  c.grpo.kl_beta = get<double>(g, "kl_beta", "grpo");
  c.grpo.learning_rate = get<double>(g, "learning_rate", "grpo");
  c.grpo.epochs = get<int>(g, "epochs", "grpo");
  c.grpo.inner_steps = get<int>(g, "inner_steps", "grpo");
  c.grpo.max_grad_norm = get<double>(g, "max_grad_norm", "grpo");
  c.grpo.max_dialogues = get<std::size_t>(g, "max_dialogues", "grpo");
  c.grpo.seed = get<std::uint64_t>(g, "seed", "grpo");
  const auto theta = get<std::vector<double>>(g, "theta_init", "grpo");
  c.toy_theta_init = Eigen::Map<const VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));

  const auto& s = j["sft"];
  c.sft.list_size = get<std::size_t>(s, "list_size", "sft");
  c.sft.target_pred_per_dialogue = get<std::size_t>(s, "target_pred_per_dialogue", "sft");
  c.sft.recommender_candidates = get<std::size_t>(s, "recommender_candidates", "sft");
  c.parallelism = get<std::size_t>(j, "parallelism", "");
  c.prompts_dir = get<std::string>(j, "prompts_dir", "");
  c.validate();
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (!node->is_object()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j);
}

std::unique_ptr<SemanticEncoder> make_semantic_encoder(const SemanticConfig& c) {
  switch (c.kind) {
    case SemanticKind::hashing_mock: return std::make_unique<HashingEncoder>(c.dim);
    case SemanticKind::file_table: {
      if (c.path.empty()) throw ConfigError("semantic.path is required for file_table");
      auto enc = std::make_unique<FileTableEncoder>(c.path);
      if (enc->dim() != c.dim)
        throw ConfigError("semantic.dim " + std::to_string(c.dim) + " does not match table width " +
                          std::to_string(enc->dim()));
      return enc;
    }
    case SemanticKind::http_endpoint: {
      std::string base = c.base_url;
      if (base.empty())
        if (const char* env = std::getenv("SMTPO_API_BASE")) base = env;
      if (base.empty()) throw ConfigError("semantic.base_url (or SMTPO_API_BASE) is required");
      return std::make_unique<HttpEmbeddingEncoder>(base, c.model, c.dim);
    }
  }
  throw ConfigError("unknown semantic kind");
}

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& c,
                                          const std::optional<VectorXd>& theta) {
  switch (c.kind) {
    case BackendKind::http: return std::make_unique<HttpChatBackend>(c.http);
    case BackendKind::scripted_simulator: return std::make_unique<ScriptedSimulator>(c.seed);
    case BackendKind::scripted_recommender: return std::make_unique<ScriptedRecommender>();
    case BackendKind::noise: return std::make_unique<NoiseSimulator>(c.seed);
    case BackendKind::scripted_teacher: return std::make_unique<ScriptedTeacher>(c.seed);
    case BackendKind::toy_policy:
      if (!theta) throw ConfigError("toy_policy recommender needs trained policy weights");
      return std::make_unique<ToyPolicyRecommender>(*theta);
  }
  throw ConfigError("unknown backend kind");
}

}  // namespace smtpo
