// SPDX-License-Identifier: Apache-2.0
#include "smtpo/grpo.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "smtpo/text.hpp"

namespace smtpo {

void GrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (!(clip_epsilon > 0 && clip_epsilon < 1)) throw ConfigError("grpo.clip_epsilon must lie in (0, 1)");
  if (!(kl_beta >= 0)) throw ConfigError("grpo.kl_beta must be >= 0");
  if (!(learning_rate >= 0)) throw ConfigError("grpo.learning_rate must be >= 0");
  if (epochs < 0) throw ConfigError("grpo.epochs must be >= 0");
  if (inner_steps < 1) throw ConfigError("grpo.inner_steps must be >= 1");
  if (!(max_grad_norm >= 0)) throw ConfigError("grpo.max_grad_norm must be >= 0");
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  const auto n = static_cast<double>(rewards.size());
  std::vector<double> out(rewards.size(), 0.0);
  if (rewards.empty()) return out;
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  // Below the floor the group is degenerate; above it the plain std keeps the
  // population variance of the advantages at exactly 1.
  if (sd < 1e-8) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

CandidateFeatures toy_features(const Corpus& corpus, const CandidateSet& candidates,
                               const std::vector<AttributeId>& feedback_attrs) {
  CandidateFeatures f;
  f.ids = candidates.ids();
  const auto n = static_cast<Eigen::Index>(f.ids.size());
  f.x.resize(n, kToyFeatureCount);
  std::vector<AttributeId> attrs = feedback_attrs;
  std::sort(attrs.begin(), attrs.end());
  double mean = 0.0, sq = 0.0;
  for (const auto& c : candidates.items) mean += c.score;
  mean /= std::max<double>(1.0, static_cast<double>(n));
  for (const auto& c : candidates.items) sq += (c.score - mean) * (c.score - mean);
  const double sd = n > 0 ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    f.x(i, 0) = static_cast<double>(attribute_overlap(corpus.item(f.ids[i]), attrs));
    f.x(i, 1) = sd > 1e-12 ? (candidates.items[i].score - mean) / sd : 0.0;
    f.x(i, 2) = -std::log(static_cast<double>(i + 1));
  }
  return f;
}

std::vector<Eigen::Index> ranking_rows(const CandidateFeatures& f, std::span<const ItemId> ranking) {
  std::unordered_map<ItemId, Eigen::Index> row;
  for (std::size_t i = 0; i < f.ids.size(); ++i) row.emplace(f.ids[i], static_cast<Eigen::Index>(i));
  std::vector<Eigen::Index> out;
  std::vector<bool> seen(f.ids.size(), false);
  for (ItemId id : ranking) {
    auto it = row.find(id);
    if (it == row.end()) throw DataError("ranking item " + std::to_string(id) + " is not a candidate");
    if (seen[it->second]) throw DataError("ranking repeats item " + std::to_string(id));
    seen[it->second] = true;
    out.push_back(it->second);
  }
  return out;
}

double policy_logprob(const VectorXd& theta, const CandidateFeatures& f,
                      std::span<const ItemId> ranking) {
  const auto rows = ranking_rows(f, ranking);
  const VectorXd s = f.x * theta;
  return plackett_luce_logprob<double>(s, rows);
}

VectorXd policy_logprob_grad(const VectorXd& theta, const CandidateFeatures& f,
                             std::span<const ItemId> ranking) {
  const auto rows = ranking_rows(f, ranking);
  const VectorXd s = f.x * theta;
  std::vector<bool> used(f.ids.size(), false);
  VectorXd g = VectorXd::Zero(theta.size());
  for (Eigen::Index j : rows) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index u = 0; u < s.size(); ++u)
      if (!used[u]) m = std::max(m, s[u]);
    double z = 0.0;
    VectorXd expect = VectorXd::Zero(theta.size());
    for (Eigen::Index u = 0; u < s.size(); ++u)
      if (!used[u]) {
        const double w = std::exp(s[u] - m);
        z += w;
        expect += w * f.x.row(u).transpose();
      }
    g += f.x.row(j).transpose() - expect / z;
    used[j] = true;
  }
  return g;
}

std::vector<ItemId> sample_ranking(const VectorXd& theta, const CandidateFeatures& f,
                                   std::size_t length, std::mt19937_64& rng) {
  // Gumbel-max over the scores yields a Plackett-Luce draw.
  const VectorXd s = f.x * theta;
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  std::vector<std::pair<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < f.ids.size(); ++i)
    keyed.emplace_back(s[static_cast<Eigen::Index>(i)] - std::log(-std::log(u(rng))), i);
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<ItemId> out;
  for (std::size_t i = 0; i < std::min(length, keyed.size()); ++i) out.push_back(f.ids[keyed[i].second]);
  return out;
}

std::vector<ItemId> greedy_ranking(const VectorXd& theta, const CandidateFeatures& f,
                                   std::size_t length) {
  const VectorXd s = f.x * theta;
  std::vector<std::size_t> order(f.ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s[static_cast<Eigen::Index>(a)] > s[static_cast<Eigen::Index>(b)];
  });
  std::vector<ItemId> out;
  for (std::size_t i = 0; i < std::min(length, order.size()); ++i) out.push_back(f.ids[order[i]]);
  return out;
}

void normalize_group(RolloutGroup& group) {
  std::vector<double> r;
  for (const auto& c : group.completions) r.push_back(c.reward);
  const auto a = group_advantages(r);
  for (std::size_t i = 0; i < a.size(); ++i) group.completions[i].advantage = a[i];
}

GrpoObjective grpo_objective(const RolloutGroup& group, const ToyPolicy& policy,
                             const GrpoConfig& config) {
  if (group.completions.empty()) throw DataError("grpo_objective: empty group");
  const double eps = config.clip_epsilon;
  const auto g = static_cast<double>(group.completions.size());
  GrpoObjective out;
  out.gradient = VectorXd::Zero(policy.theta.size());
  double surrogate = 0.0, kl = 0.0;
  for (const auto& c : group.completions) {
    const double lt = policy_logprob(policy.theta, group.features, c.ranking);
    const double lo = c.logprob_old ? *c.logprob_old
                                    : policy_logprob(policy.theta_old, group.features, c.ranking);
    const double lr = c.logprob_ref ? *c.logprob_ref
                                    : policy_logprob(policy.theta_ref, group.features, c.ranking);
    const VectorXd grad_lt = policy_logprob_grad(policy.theta, group.features, c.ranking);
    const double rho = std::exp(lt - lo);
    const double unclipped = rho * c.advantage;
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps) * c.advantage;
    if (unclipped <= clipped) {
      surrogate += unclipped;
      out.gradient += c.advantage * rho * grad_lt / g;
    } else {
      surrogate += clipped;
    }
    const double d = lr - lt;
    const double ed = std::exp(d);
    kl += ed - d - 1.0;
    out.gradient -= config.kl_beta * (1.0 - ed) * grad_lt / g;
  }
  out.kl = kl / g;
  out.value = surrogate / g - config.kl_beta * out.kl;
  if (!std::isfinite(out.value) || !out.gradient.allFinite())
    throw NumericalError("grpo objective is not finite");
  return out;
}

std::string toy_policy_text(const Corpus& corpus, const std::vector<ItemId>& ranking,
                            const CandidateFeatures& f,
                            const std::vector<AttributeId>& feedback_attrs) {
  std::vector<std::size_t> counts;
  const auto rows = ranking_rows(f, ranking);
  for (Eigen::Index r : rows) counts.push_back(static_cast<std::size_t>(f.x(r, 0)));
  return format_recommendation(corpus, describe_preference(corpus, feedback_attrs), ranking, counts,
                               "ordered by the policy score over feedback match and retrieval evidence");
}

std::string ToyPolicyRecommender::complete(const AgentRequest& r) const {
  if (!r.corpus) throw BackendError("toy policy needs the corpus", false);
  if (r.candidates.empty()) throw BackendError("toy policy received no candidates", false);
  CandidateSet cands{r.candidates};
  const auto attrs = feedback_attributes(*r.corpus, r.feedback_history);
  const auto f = toy_features(*r.corpus, cands, attrs);
  if (!r.prev_recs.empty() && !feedback_is_actionable(*r.corpus, r.feedback_history)) {
    auto ranked = hold_previous_list(greedy_ranking(theta_, f, f.ids.size()), r.prev_recs);
    if (ranked.size() > r.list_size) ranked.resize(r.list_size);
    return toy_policy_text(*r.corpus, ranked, f, attrs);
  }
  return toy_policy_text(*r.corpus, greedy_ranking(theta_, f, r.list_size), f, attrs);
}

ToyPolicy train_toy_policy(const Corpus& corpus, const RetrievalStack& stack,
                           const ChatBackend& simulator, const PromptLibrary& prompts,
                           const EpisodeConfig& episode, const GrpoConfig& config,
                           const SemanticEncoder& reward_encoder, const RewardWeights& weights,
                           const VectorXd& theta_init, GrpoTrainLog* log, bool keep_groups) {
  config.validate();
  episode.validate();
  weights.validate();
  if (theta_init.size() != kToyFeatureCount)
    throw ConfigError("toy policy theta must have " + std::to_string(kToyFeatureCount) + " entries");
  auto train = corpus.dialogues_in(Split::train);
  if (train.empty()) throw DataError("train_toy_policy: train split is empty");

  ToyPolicy policy;
  policy.theta = policy.theta_old = policy.theta_ref = theta_init;
  std::mt19937_64 rng(config.seed);
  const NoiseSimulator noise(episode.seed);
  const ChatBackend& sim =
      episode.flags.noise_feedback ? static_cast<const ChatBackend&>(noise) : simulator;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    const std::size_t n = config.max_dialogues ? std::min(config.max_dialogues, train.size())
                                               : train.size();
    double reward_sum = 0.0;
    std::size_t reward_count = 0;
    for (std::size_t di = 0; di < n; ++di) {
      const Dialogue& d = *train[di];
      std::vector<std::string> feedback_history, preference_history;
      std::vector<ItemId> prev_recs;
      for (int t = 0; t < episode.max_turns; ++t) {
        std::string feedback;
        if (t > 0) {
          const auto req = simulator_request(corpus, d, prev_recs, episode.flags.blind_simulator,
                                             prompts, t);
          feedback = simulate_feedback(sim, req);
          feedback_history.push_back(feedback);
        }
        const std::string prev_pref = preference_history.empty() ? "" : preference_history.back();
        const auto cands = stack.retrieve(
            turn_query_context(d, feedback, prev_pref, prev_recs, episode.flags), d, episode.k_retrieve);
        const auto attrs = feedback_attributes(corpus, feedback_history);

        RolloutGroup group;
        group.features = toy_features(corpus, cands, attrs);
        group.prompt = recommender_request(corpus, d, cands, feedback_history, preference_history,
                                           prev_recs, prompts, t, episode.k_recommend,
                                           episode.k_retrieve)
                           .messages.front()
                           .content;
        policy.theta_old = policy.theta;
        for (int i = 0; i < config.group_size; ++i) {
          Completion c;
          c.ranking = sample_ranking(policy.theta_old, group.features, episode.k_recommend, rng);
          c.text = toy_policy_text(corpus, c.ranking, group.features, attrs);
          const auto parsed = parse_recommender_output(c.text, corpus);
          c.rewards = score_recommendation(parsed, d.target_item_id, d.gold_preference,
                                           reward_encoder, weights);
          c.reward = c.rewards.composite;
          c.logprob_old = policy_logprob(policy.theta_old, group.features, c.ranking);
          c.logprob_ref = policy_logprob(policy.theta_ref, group.features, c.ranking);
          reward_sum += c.reward;
          ++reward_count;
          group.completions.push_back(std::move(c));
        }
        normalize_group(group);
        for (int s = 0; s < config.inner_steps; ++s) {
          VectorXd g = grpo_objective(group, policy, config).gradient;
          // Sequence-level ratios and the KL estimator both grow exponentially
          // on samples the current policy finds unlikely.
          const double norm = g.norm();
          if (config.max_grad_norm > 0 && norm > config.max_grad_norm) g *= config.max_grad_norm / norm;
          policy.theta += config.learning_rate * g;
        }

        const auto recs = greedy_ranking(policy.theta, group.features, episode.k_recommend);
        preference_history.push_back(describe_preference(corpus, attrs));
        prev_recs = recs;
        if (log && keep_groups) log->groups.push_back(std::move(group));
        if (std::find(recs.begin(), recs.end(), d.target_item_id) != recs.end()) break;
      }
    }
    const double mean = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
    if (log) log->epoch_mean_reward.push_back(mean);
    spdlog::info("grpo epoch {} mean composite {:.4f} theta [{:.3f}, {:.3f}, {:.3f}]", epoch + 1,
                 mean, policy.theta[0], policy.theta[1], policy.theta[2]);
  }
  policy.theta_old = policy.theta;
  return policy;
}

std::vector<RolloutGroup> collect_rollouts(const std::vector<const Dialogue*>& dialogues,
                                           const Agents& agents, const RetrievalStack& stack,
                                           const EpisodeConfig& episode, int group_size,
                                           const SemanticEncoder& reward_encoder,
                                           const RewardWeights& weights) {
  episode.validate();
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  const Corpus& corpus = *stack.corpus;
  const NoiseSimulator noise(episode.seed);
  const ChatBackend& sim = episode.flags.noise_feedback ? static_cast<const ChatBackend&>(noise)
                                                        : *agents.simulator;
  std::vector<RolloutGroup> groups;
  for (const Dialogue* dp : dialogues) {
    const Dialogue& d = *dp;
    std::vector<std::string> feedback_history, preference_history;
    std::vector<ItemId> prev_recs;
    for (int t = 0; t < episode.max_turns; ++t) {
      std::string feedback;
      if (t > 0) {
        feedback = simulate_feedback(
            sim, simulator_request(corpus, d, prev_recs, episode.flags.blind_simulator,
                                   *agents.prompts, t));
        feedback_history.push_back(feedback);
      }
      const std::string prev_pref = preference_history.empty() ? "" : preference_history.back();
      const auto cands = stack.retrieve(
          turn_query_context(d, feedback, prev_pref, prev_recs, episode.flags), d, episode.k_retrieve);
      const auto req = recommender_request(corpus, d, cands, feedback_history, preference_history,
                                           prev_recs, *agents.prompts, t, episode.k_recommend,
                                           episode.k_retrieve);
      RolloutGroup group;
      group.prompt = req.messages.front().content;
      std::vector<ParsedRecommendation> parsed;
      for (int i = 0; i < group_size; ++i) {
        Completion c;
        c.text = generate_recommendation(*agents.recommender, req);
        parsed.push_back(parse_recommender_output(c.text, corpus));
        c.ranking = parsed.back().ranked_item_ids;
        if (c.ranking.size() > episode.k_recommend) c.ranking.resize(episode.k_recommend);
        parsed.back().ranked_item_ids = c.ranking;
        c.rewards = score_recommendation(parsed.back(), d.target_item_id, d.gold_preference,
                                         reward_encoder, weights);
        c.reward = c.rewards.composite;
        group.completions.push_back(std::move(c));
      }
      normalize_group(group);
      const auto recs = group.completions.front().ranking;
      preference_history.push_back(parsed.front().preference);
      prev_recs = recs;
      groups.push_back(std::move(group));
      if (std::find(recs.begin(), recs.end(), d.target_item_id) != recs.end()) break;
    }
  }
  return groups;
}

std::size_t export_rollouts(const std::vector<RolloutGroup>& groups,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& g : groups) {
    nlohmann::ordered_json comps = nlohmann::ordered_json::array();
    for (const auto& c : g.completions) {
      nlohmann::ordered_json j;
      j["text"] = c.text;
      j["rewards"] = {{"think", c.rewards.think},   {"answer", c.rewards.answer},
                      {"hit", c.rewards.hit},       {"rank", c.rewards.rank},
                      {"prefer", c.rewards.prefer}, {"composite", c.rewards.composite}};
      j["reward"] = c.reward;
      j["advantage"] = c.advantage;
      j["logprob_old"] = c.logprob_old ? nlohmann::ordered_json(*c.logprob_old) : nullptr;
      j["logprob_ref"] = c.logprob_ref ? nlohmann::ordered_json(*c.logprob_ref) : nullptr;
      comps.push_back(std::move(j));
    }
    out << nlohmann::ordered_json{{"prompt", g.prompt}, {"completions", comps}}.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
  return groups.size();
}

std::vector<RolloutGroup> load_rollouts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path.string());
  std::vector<RolloutGroup> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RolloutGroup g;
      g.prompt = j.at("prompt").get<std::string>();
      for (const auto& c : j.at("completions")) {
        Completion comp;
        comp.text = c.at("text").get<std::string>();
        const auto& r = c.at("rewards");
        comp.rewards.think = r.value("think", 0.0);
        comp.rewards.answer = r.value("answer", 0.0);
        comp.rewards.hit = r.value("hit", 0.0);
        comp.rewards.rank = r.value("rank", 0.0);
        comp.rewards.prefer = r.value("prefer", 0.0);
        comp.rewards.composite = r.value("composite", 0.0);
        comp.reward = c.at("reward").get<double>();
        comp.advantage = c.at("advantage").get<double>();
        if (!c.at("logprob_old").is_null()) comp.logprob_old = c.at("logprob_old").get<double>();
        if (!c.at("logprob_ref").is_null()) comp.logprob_ref = c.at("logprob_ref").get<double>();
        g.completions.push_back(std::move(comp));
      }
      out.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed rollout: " + e.what());
    }
  }
  return out;
}

void save_toy_policy(const ToyPolicy& policy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  out << nlohmann::ordered_json{{"format", "smtpo-toy-policy"},
                                {"version", 1},
                                {"theta", vec(policy.theta)},
                                {"theta_ref", vec(policy.theta_ref)}}
             .dump(2)
      << '\n';
}

ToyPolicy load_toy_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "smtpo-toy-policy" || j.at("version") != 1)
      throw DataError(path.string() + " is not a toy policy file");
    auto vec = [&](const char* key) {
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != kToyFeatureCount) throw DataError(std::string("wrong width for ") + key);
      return VectorXd(Eigen::Map<const VectorXd>(v.data(), kToyFeatureCount));
    };
    ToyPolicy p;
    p.theta = p.theta_old = vec("theta");
    p.theta_ref = vec("theta_ref");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed toy policy: " + e.what());
  }
}

}  // namespace smtpo
