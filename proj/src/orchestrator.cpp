// SPDX-License-Identifier: Apache-2.0
#include "smtpo/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <thread>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "smtpo/text.hpp"

namespace smtpo {

void AblationFlags::set(AblationMode mode) {
  switch (mode) {
    case AblationMode::blind_simulator: blind_simulator = true; break;
    case AblationMode::noise_feedback: noise_feedback = true; break;
    case AblationMode::no_pref_in_retrieval: no_pref_in_retrieval = true; break;
    case AblationMode::no_rec_in_retrieval: no_rec_in_retrieval = true; break;
    case AblationMode::no_feedback_in_retrieval: no_feedback_in_retrieval = true; break;
  }
}

void EpisodeConfig::validate() const {
  if (max_turns < 1) throw ConfigError("episode.max_turns must be >= 1");
  if (k_retrieve < 1) throw ConfigError("episode.k_retrieve must be >= 1");
  if (k_recommend < 1) throw ConfigError("episode.k_recommend must be >= 1");
  if (k_recommend > k_retrieve) throw ConfigError("episode.k_recommend must not exceed k_retrieve");
}

QueryContext turn_query_context(const Dialogue& d, const std::string& feedback,
                                const std::string& prev_preference,
                                const std::vector<ItemId>& prev_recs, const AblationFlags& flags) {
  QueryContext ctx = cold_start_context(d);
  if (!flags.no_feedback_in_retrieval) ctx.feedback = feedback;
  if (!flags.no_pref_in_retrieval) ctx.preference = prev_preference;
  if (!flags.no_rec_in_retrieval) ctx.prev_rec_ids = prev_recs;
  return ctx;
}

InteractionTrace run_episode(const Dialogue& d, const Agents& agents, const RetrievalStack& stack,
                             const EpisodeConfig& config, const SemanticEncoder* reward_encoder,
                             const RewardWeights& weights) {
  config.validate();
  if (!agents.simulator || !agents.recommender || !agents.prompts || !stack.corpus)
    throw ConfigError("run_episode: agents and retrieval stack must be initialized");
  const Corpus& corpus = *stack.corpus;
  const NoiseSimulator noise(config.seed);
  const ChatBackend& simulator =
      config.flags.noise_feedback ? static_cast<const ChatBackend&>(noise) : *agents.simulator;

  InteractionTrace trace;
  trace.dialogue_id = d.id;
  std::vector<std::string> feedback_history, preference_history;
  std::vector<ItemId> prev_recs;
  try {
    for (int t = 0; t < config.max_turns; ++t) {
      TurnRecord rec;
      rec.turn = t;
      if (t > 0) {
        const auto req = simulator_request(corpus, d, prev_recs, config.flags.blind_simulator,
                                           *agents.prompts, t);
        rec.simulator_prompt = req.messages.front().content;
        rec.feedback = simulate_feedback(simulator, req);
        feedback_history.push_back(rec.feedback);
      }
      const std::string prev_pref = preference_history.empty() ? "" : preference_history.back();
      const auto ctx = turn_query_context(d, rec.feedback, prev_pref, prev_recs, config.flags);
      rec.candidates = stack.retrieve(ctx, d, config.k_retrieve);
      const auto req = recommender_request(corpus, d, rec.candidates, feedback_history,
                                           preference_history, prev_recs, *agents.prompts, t,
                                           config.k_recommend, config.k_retrieve);
      rec.raw_text = generate_recommendation(*agents.recommender, req);
      auto parsed = parse_recommender_output(rec.raw_text, corpus);
      rec.format_flags = parsed.format_flags;
      rec.preference = parsed.preference;
      rec.rec_list = parsed.ranked_item_ids;
      if (rec.rec_list.size() > config.k_recommend) rec.rec_list.resize(config.k_recommend);
      parsed.ranked_item_ids = rec.rec_list;
      if (reward_encoder)
        rec.rewards = score_recommendation(parsed, d.target_item_id, d.gold_preference,
                                           *reward_encoder, weights);
      preference_history.push_back(rec.preference);
      prev_recs = rec.rec_list;
      const bool hit =
          std::find(rec.rec_list.begin(), rec.rec_list.end(), d.target_item_id) != rec.rec_list.end();
      trace.turns.push_back(std::move(rec));
      if (hit) {
        trace.status = EpisodeStatus::hit;
        trace.hit_turn = t;
        for (int u = t + 1; u < config.max_turns; ++u) {
          TurnRecord copy = trace.turns.back();
          copy.turn = u;
          copy.frozen = true;
          trace.turns.push_back(std::move(copy));
        }
        break;
      }
    }
  } catch (const BackendError& e) {
    trace.status = EpisodeStatus::failed;
    trace.error = e.what();
    spdlog::warn("episode {} failed: {}", d.id, e.what());
  }
  return trace;
}

RankMetrics rank_metrics(std::span<const ItemId> rec_list, ItemId target, std::size_t k) {
  const std::size_t n = std::min(k, rec_list.size());
  for (std::size_t i = 0; i < n; ++i)
    if (rec_list[i] == target) {
      const double p = static_cast<double>(i + 1);
      return {1.0, 1.0 / std::log2(p + 1.0), 1.0 / p};
    }
  return {};
}

EvalResult run_eval(const std::vector<const Dialogue*>& dialogues, const Agents& agents,
                    const RetrievalStack& stack, const EpisodeConfig& config,
                    std::size_t parallelism) {
  config.validate();
  EvalResult out;
  out.episodes = dialogues.size();
  out.traces.resize(dialogues.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < dialogues.size();) {
      try {
        out.traces[i] = run_episode(*dialogues[i], agents, stack, config);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(1, dialogues.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  std::vector<std::size_t> order(dialogues.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return dialogues[a]->id < dialogues[b]->id; });
  std::vector<InteractionTrace> sorted;
  sorted.reserve(order.size());
  for (std::size_t i : order) sorted.push_back(std::move(out.traces[i]));
  out.traces = std::move(sorted);

  std::unordered_map<std::int64_t, ItemId> targets;
  for (const Dialogue* d : dialogues) targets[d->id] = d->target_item_id;
  std::size_t completed = 0;
  out.turns.resize(dialogues.empty() ? 0 : static_cast<std::size_t>(config.max_turns));
  for (std::size_t t = 0; t < out.turns.size(); ++t) out.turns[t].turn = static_cast<int>(t) + 1;
  for (const auto& trace : out.traces) {
    if (trace.status == EpisodeStatus::failed) {
      ++out.failed;
      continue;
    }
    ++completed;
    const ItemId target = targets.at(trace.dialogue_id);
    for (std::size_t t = 0; t < out.turns.size(); ++t) {
      const TurnRecord& r = trace.turns.at(t);
      auto& m = out.turns[t];
      m.recall_1 += rank_metrics(r.rec_list, target, 1).recall;
      const auto m10 = rank_metrics(r.rec_list, target, 10);
      m.recall_10 += m10.recall;
      m.ndcg_10 += m10.ndcg;
      m.mrr_10 += m10.mrr;
      const auto ids = r.candidates.ids();
      const auto mr = rank_metrics(ids, target, config.k_retrieve);
      m.retriever_recall += mr.recall;
      m.retriever_ndcg += mr.ndcg;
    }
  }
  if (completed > 0) {
    const double c = static_cast<double>(completed);
    for (auto& m : out.turns) {
      m.recall_1 /= c;
      m.recall_10 /= c;
      m.ndcg_10 /= c;
      m.mrr_10 /= c;
      m.retriever_recall /= c;
      m.retriever_ndcg /= c;
    }
  }
  if (out.failed) spdlog::warn("{} of {} episodes failed and are excluded", out.failed, out.episodes);
  return out;
}

AblationResult run_ablation(const std::vector<const Dialogue*>& dialogues, const Agents& agents,
                            const RetrievalStack& stack, const EpisodeConfig& base,
                            AblationMode mode, std::size_t parallelism) {
  EpisodeConfig ablated = base;
  ablated.flags.set(mode);
  return {mode, run_eval(dialogues, agents, stack, base, parallelism),
          run_eval(dialogues, agents, stack, ablated, parallelism)};
}

nlohmann::ordered_json metrics_json(const EvalResult& r) {
  nlohmann::ordered_json turns = nlohmann::ordered_json::array();
  for (const auto& m : r.turns)
    turns.push_back({{"turn", m.turn},
                     {"recall@1", m.recall_1},
                     {"recall@10", m.recall_10},
                     {"ndcg@10", m.ndcg_10},
                     {"mrr@10", m.mrr_10},
                     {"retriever_recall@20", m.retriever_recall},
                     {"retriever_ndcg@20", m.retriever_ndcg}});
  return {{"turns", turns}, {"episodes", r.episodes}, {"failed", r.failed}};
}

nlohmann::ordered_json ablation_json(const AblationResult& r) {
  nlohmann::ordered_json delta = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < std::min(r.baseline.turns.size(), r.ablated.turns.size()); ++t) {
    const auto& b = r.baseline.turns[t];
    const auto& a = r.ablated.turns[t];
    delta.push_back({{"turn", b.turn},
                     {"recall@1", a.recall_1 - b.recall_1},
                     {"recall@10", a.recall_10 - b.recall_10},
                     {"ndcg@10", a.ndcg_10 - b.ndcg_10},
                     {"mrr@10", a.mrr_10 - b.mrr_10},
                     {"retriever_recall@20", a.retriever_recall - b.retriever_recall},
                     {"retriever_ndcg@20", a.retriever_ndcg - b.retriever_ndcg}});
  }
  return {{"mode", to_string(r.mode)},
          {"baseline", metrics_json(r.baseline)},
          {"ablated", metrics_json(r.ablated)},
          {"delta", delta}};
}

nlohmann::ordered_json trace_json(const InteractionTrace& trace) {
  nlohmann::ordered_json turns = nlohmann::ordered_json::array();
  for (const auto& r : trace.turns) {
    nlohmann::ordered_json cands = nlohmann::ordered_json::array();
    for (const auto& c : r.candidates.items) cands.push_back({{"id", c.id}, {"score", c.score}});
    nlohmann::ordered_json rewards = nullptr;
    if (r.rewards)
      rewards = {{"think", r.rewards->think},   {"answer", r.rewards->answer},
                 {"hit", r.rewards->hit},       {"rank", r.rewards->rank},
                 {"prefer", r.rewards->prefer}, {"composite", r.rewards->composite}};
    turns.push_back({{"turn", r.turn},
                     {"feedback", r.feedback},
                     {"simulator_prompt", r.simulator_prompt},
                     {"candidates", cands},
                     {"preference", r.preference},
                     {"rec_list", r.rec_list},
                     {"format_flags",
                      {{"think_block_present", r.format_flags.think_block_present},
                       {"rank_list_matched", r.format_flags.rank_list_matched}}},
                     {"rewards", rewards},
                     {"raw_text", r.raw_text},
                     {"frozen", r.frozen}});
  }
  nlohmann::ordered_json j{{"dialogue_id", trace.dialogue_id}, {"status", to_string(trace.status)}};
  j["hit_turn"] = trace.hit_turn ? nlohmann::ordered_json(*trace.hit_turn) : nullptr;
  if (!trace.error.empty()) j["error"] = trace.error;
  j["turns"] = turns;
  return j;
}

void write_traces(const EvalResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : result.traces) out << trace_json(t).dump() << '\n';
}

std::string format_metrics_table(const EvalResult& r) {
  if (r.turns.empty()) return fmt::format("no episodes (failed {})\n", r.failed);
  std::string out =
      "turn 1 is the cold-start recommendation; later turns follow simulator feedback\n";
  out += fmt::format("{:>4} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n", "turn", "R@1", "R@10",
                     "N@10", "MRR@10", "ret.R", "ret.N");
  for (const auto& m : r.turns)
    out += fmt::format("{:>4} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", m.turn,
                       m.recall_1, m.recall_10, m.ndcg_10, m.mrr_10, m.retriever_recall,
                       m.retriever_ndcg);
  out += fmt::format("episodes {} failed {}\n", r.episodes, r.failed);
  return out;
}

ContextSource make_training_context_source(const Corpus& corpus, std::uint64_t simulator_seed) {
  return [&corpus, simulator_seed](const Dialogue& d, std::mt19937_64& rng) {
    QueryContext ctx = cold_start_context(d);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < 0.25) return ctx;

    // A stand-in for R_{t-1}: what a dialogue-only ranking would have shown,
    // i.e. the non-target items matching most of the attributes named so far.
    const Item& target = corpus.item(d.target_item_id);
    const auto mentioned = mentioned_items(d, corpus);
    const auto named_attrs = corpus.attributes_named_in(dialogue_text(d));
    std::vector<std::pair<std::size_t, ItemId>> scored;
    for (const Item& it : corpus.items())
      if (it.id != target.id &&
          std::find(mentioned.begin(), mentioned.end(), it.id) == mentioned.end())
        scored.emplace_back(attribute_overlap(it, named_attrs), it.id);
    std::shuffle(scored.begin(), scored.end(), rng);
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<ItemId> near;
    for (std::size_t i = 0; i < std::min<std::size_t>(10, scored.size()); ++i)
      near.push_back(scored[i].second);

    const auto named = scripted_feedback_attributes(corpus, d, near, simulator_seed);
    std::vector<AttributeId> rest;
    for (AttributeId a : target.attribute_ids)
      if (std::find(named.begin(), named.end(), a) == named.end() && u(rng) < 0.5)
        rest.push_back(a);

    const ScriptedSimulator sim(simulator_seed);
    AgentRequest req;
    req.corpus = &corpus;
    req.dialogue = &d;
    req.prev_recs = near;
    req.turn = 1 + static_cast<int>(u(rng) * 4);
    if (u(rng) >= 0.15) ctx.feedback = sim.complete(req);
    if (u(rng) >= 0.15) ctx.preference = describe_preference(corpus, rest);
    if (u(rng) >= 0.15) ctx.prev_rec_ids = near;
    return ctx;
  };
}

const char* to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::blind_simulator: return "blind_simulator";
    case AblationMode::noise_feedback: return "noise_feedback";
    case AblationMode::no_pref_in_retrieval: return "no_pref_in_retrieval";
    case AblationMode::no_rec_in_retrieval: return "no_rec_in_retrieval";
    case AblationMode::no_feedback_in_retrieval: return "no_feedback_in_retrieval";
  }
  return "blind_simulator";
}

AblationMode parse_ablation_mode(const std::string& s) {
  for (auto m : {AblationMode::blind_simulator, AblationMode::noise_feedback,
                 AblationMode::no_pref_in_retrieval, AblationMode::no_rec_in_retrieval,
                 AblationMode::no_feedback_in_retrieval})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown ablation mode '" + s + "'");
}

const char* to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::hit: return "hit";
    case EpisodeStatus::exhausted: return "exhausted";
    case EpisodeStatus::failed: return "failed";
  }
  return "failed";
}

}  // namespace smtpo
