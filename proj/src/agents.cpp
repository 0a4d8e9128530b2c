// SPDX-License-Identifier: Apache-2.0
#include "smtpo/agents.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "smtpo/text.hpp"

namespace smtpo {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string name_list(const Corpus& corpus, const std::vector<AttributeId>& attrs) {
  std::vector<std::string> names;
  for (AttributeId a : attrs) names.push_back(corpus.attribute(a).name);
  if (names.size() <= 1) return names.empty() ? "" : names.front();
  std::string out;
  for (std::size_t i = 0; i + 1 < names.size(); ++i) out += (i ? ", " : "") + names[i];
  return out + " and " + names.back();
}

const Corpus& need_corpus(const AgentRequest& r) {
  if (!r.corpus || !r.dialogue)
    throw BackendError("scripted backend needs corpus and dialogue context", false);
  return *r.corpus;
}

constexpr const char* kFeedbackTemplates[] = {
    "None of these feel right. I'm hoping for something with {}.",
    "Not quite what I want. I would really like {}.",
    "Those miss the mark for me. Ideally it would have {}.",
};

std::string feedback_sentence(const Corpus& corpus, const Dialogue& d,
                              const std::vector<AttributeId>& attrs, std::uint64_t seed, int turn) {
  const auto t = mix(mix(seed, static_cast<std::uint64_t>(d.id)), static_cast<std::uint64_t>(turn)) %
                 std::size(kFeedbackTemplates);
  std::string s = kFeedbackTemplates[t];
  return s.replace(s.find("{}"), 2, name_list(corpus, attrs));
}

// Stable ranking of candidates by overlap with `attrs`.
std::vector<std::size_t> rank_by_overlap(const Corpus& corpus,
                                         const std::vector<ScoredItem>& candidates,
                                         const std::vector<AttributeId>& attrs,
                                         std::vector<std::size_t>& counts) {
  std::vector<AttributeId> sorted = attrs;
  std::sort(sorted.begin(), sorted.end());
  counts.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    counts[i] = attribute_overlap(corpus.item(candidates[i].id), sorted);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  return order;
}

std::string build_output(const Corpus& corpus, const std::vector<ScoredItem>& candidates,
                         const std::vector<std::size_t>& order,
                         const std::vector<std::size_t>& counts, std::size_t list_size,
                         const std::string& preference, const std::string& rule) {
  std::vector<ItemId> ranked;
  std::vector<std::size_t> matched;
  for (std::size_t i = 0; i < order.size() && ranked.size() < list_size; ++i) {
    ranked.push_back(candidates[order[i]].id);
    matched.push_back(counts[order[i]]);
  }
  return format_recommendation(corpus, preference, ranked, matched, rule);
}

}  // namespace

std::vector<AttributeId> scripted_feedback_attributes(const Corpus& corpus, const Dialogue& d,
                                                      std::span<const ItemId> prev_recs,
                                                      std::uint64_t seed) {
  const Item& target = corpus.item(d.target_item_id);
  const auto named = corpus.attributes_named_in(dialogue_text(d));
  const std::unordered_set<AttributeId> in_dialogue(named.begin(), named.end());
  std::unordered_map<AttributeId, std::size_t> coverage;
  for (ItemId r : prev_recs)
    for (AttributeId a : corpus.item(r).attribute_ids) ++coverage[a];

  struct Key {
    AttributeId id;
    std::size_t cover;
    bool named;
    std::uint64_t tie;
  };
  std::vector<Key> keys;
  for (AttributeId a : target.attribute_ids)
    keys.push_back({a, coverage.contains(a) ? coverage[a] : 0, in_dialogue.contains(a),
                    mix(mix(seed, static_cast<std::uint64_t>(d.id)), static_cast<std::uint64_t>(a))});
  std::sort(keys.begin(), keys.end(), [](const Key& x, const Key& y) {
    if (x.cover != y.cover) return x.cover < y.cover;
    if (x.named != y.named) return x.named;
    return x.tie < y.tie;
  });
  std::vector<AttributeId> out;
  for (const Key& k : keys)
    if (k.cover == 0 && out.size() < 3) out.push_back(k.id);
  if (out.empty() && !keys.empty()) {
    const std::size_t least = keys.front().cover;
    for (const Key& k : keys)
      if (k.cover == least && out.size() < 3) out.push_back(k.id);
  }
  return out;
}

std::vector<AttributeId> feedback_attributes(const Corpus& corpus,
                                             const std::vector<std::string>& feedback) {
  std::vector<AttributeId> out;
  std::unordered_set<AttributeId> seen;
  for (const auto& f : feedback)
    for (AttributeId a : corpus.attributes_named_in(f))
      if (seen.insert(a).second) out.push_back(a);
  return out;
}

std::string describe_preference(const Corpus& corpus, const std::vector<AttributeId>& attrs) {
  if (attrs.empty()) return "No preference beyond the conversation has been stated yet.";
  return "The user wants a movie with " + name_list(corpus, attrs) + ".";
}

bool feedback_is_actionable(const Corpus& corpus, const std::vector<std::string>& feedback_history) {
  return !feedback_history.empty() &&
         !corpus.attributes_named_in(feedback_history.back()).empty();
}

std::vector<ItemId> hold_previous_list(const std::vector<ItemId>& ranked,
                                       std::span<const ItemId> prev_recs) {
  const std::unordered_set<ItemId> available(ranked.begin(), ranked.end());
  std::vector<ItemId> out;
  std::unordered_set<ItemId> taken;
  for (ItemId id : prev_recs)
    if (available.contains(id) && taken.insert(id).second) out.push_back(id);
  for (ItemId id : ranked)
    if (taken.insert(id).second) out.push_back(id);
  return out;
}

std::string format_recommendation(const Corpus& corpus, const std::string& preference,
                                  const std::vector<ItemId>& ranked,
                                  const std::vector<std::size_t>& match_counts,
                                  const std::string& ranking_rule) {
  std::vector<std::string> titles, matches, scores;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const Item& it = corpus.item(ranked[i]);
    titles.push_back(it.title);
    if (i < 3) {
      std::vector<std::string> attrs;
      for (AttributeId a : it.attribute_ids) attrs.push_back(corpus.attribute(a).name);
      matches.push_back(it.title + " has " + join(attrs, ", "));
    }
    scores.push_back(it.title + " = " + std::to_string(match_counts[i]));
  }
  std::string out = "<think>\n";
  out += "Step1: Preference Inference: " + preference + "\n";
  out += "Step2: Attribute Matching: " + (matches.empty() ? "no candidates" : join(matches, "; ")) + "\n";
  out += "Step3: Scoring: " + (scores.empty() ? "none" : join(scores, ", ")) + "\n";
  out += "Step4: Ranking: " + ranking_rule + "\n";
  out += "Step5: Recommendation Explanation: " +
         (titles.empty() ? std::string("nothing to recommend")
                         : titles.front() + " fits the stated preference best") +
         ".\n</think>\n";
  out += "RANK LIST: [" + join(titles, ", ") + "]";
  return out;
}

std::string ScriptedSimulator::complete(const AgentRequest& r) const {
  const Corpus& corpus = need_corpus(r);
  const auto attrs = scripted_feedback_attributes(corpus, *r.dialogue, r.prev_recs, seed_);
  if (attrs.empty()) return "I'm not sure any of these work for me.";
  return feedback_sentence(corpus, *r.dialogue, attrs, seed_, r.turn);
}

const std::vector<std::string>& NoiseSimulator::pool() {
  static const std::vector<std::string> p = {
      "Sorry, my phone keeps buzzing, what were we saying?",
      "I had a long day at work and my brain is fried.",
      "Do you know if the place downstairs sells popcorn?",
      "My neighbor is vacuuming again, it is so loud.",
      "Hmm, I need to water my plants before I forget.",
      "I just remembered I left the kettle on.",
      "It has been raining all week here.",
      "My cat is sitting on the keyboard right now.",
      "I wonder what time the bakery closes today.",
      "Let me grab a snack first, one second.",
      "I think I should call my sister later.",
      "Whatever, I do not really mind either way.",
  };
  return p;
}

std::string NoiseSimulator::complete(const AgentRequest& r) const {
  const auto id = r.dialogue ? static_cast<std::uint64_t>(r.dialogue->id) : 0;
  const auto& p = pool();
  return p[mix(mix(seed_, id), static_cast<std::uint64_t>(r.turn)) % p.size()];
}

std::string ScriptedRecommender::complete(const AgentRequest& r) const {
  const Corpus& corpus = need_corpus(r);
  if (r.candidates.empty()) throw BackendError("recommender received no candidates", false);
  const std::vector<std::string> latest =
      r.feedback_history.empty() ? std::vector<std::string>{}
                                 : std::vector<std::string>{r.feedback_history.back()};
  std::vector<std::size_t> counts;
  auto order = rank_by_overlap(corpus, r.candidates, feedback_attributes(corpus, latest), counts);
  const std::string pref = describe_preference(corpus, feedback_attributes(corpus, r.feedback_history));
  if (!r.prev_recs.empty() && !feedback_is_actionable(corpus, r.feedback_history)) {
    std::unordered_map<ItemId, std::size_t> pos;
    std::vector<ItemId> ranked;
    for (std::size_t i : order) {
      pos.emplace(r.candidates[i].id, i);
      ranked.push_back(r.candidates[i].id);
    }
    order.clear();
    for (ItemId id : hold_previous_list(ranked, r.prev_recs)) order.push_back(pos.at(id));
    return build_output(corpus, r.candidates, order, counts, r.list_size, pref,
                        "no new preference in the feedback, so the previous list is kept");
  }
  return build_output(corpus, r.candidates, order, counts, r.list_size, pref,
                      "ordered by attributes matched in the latest feedback, ties keep retrieval order");
}

std::string ScriptedTeacher::complete(const AgentRequest& r) const {
  const Corpus& corpus = need_corpus(r);
  if (!r.target) throw BackendError("teacher request lacks the target item", false);
  const Item& target = corpus.item(*r.target);
  switch (r.task) {
    case AgentTask::teacher_feedback: {
      Dialogue d = *r.dialogue;
      d.target_item_id = *r.target;
      const auto attrs = scripted_feedback_attributes(corpus, d, r.prev_recs, seed_);
      return feedback_sentence(corpus, d, attrs, seed_, r.turn);
    }
    case AgentTask::teacher_recommend: {
      if (r.candidates.empty()) throw BackendError("teacher received no candidates", false);
      std::vector<std::size_t> counts;
      auto order = rank_by_overlap(corpus, r.candidates, target.attribute_ids, counts);
      auto pos = std::find_if(order.begin(), order.end(),
                              [&](std::size_t i) { return r.candidates[i].id == *r.target; });
      if (pos != order.end()) std::rotate(order.begin(), pos, pos + 1);
      return build_output(corpus, r.candidates, order, counts, r.list_size,
                          describe_preference(corpus, target.attribute_ids),
                          "ordered by attributes shared with the wanted movie");
    }
    default:
      throw BackendError("scripted teacher only serves teacher tasks", false);
  }
}

std::string render_entities(const Corpus& corpus, const Dialogue& d) {
  std::vector<std::string> names;
  for (EntityId id : mentioned_entities(d))
    names.push_back(corpus.has_item(id) ? corpus.item(id).title : corpus.attribute(id).name);
  return names.empty() ? "(none)" : join(names, "; ");
}

std::string render_titles(const Corpus& corpus, std::span<const ItemId> ids) {
  std::vector<std::string> titles;
  for (ItemId id : ids) titles.push_back(corpus.item(id).title);
  return titles.empty() ? "(none)" : join(titles, "; ");
}

std::string render_candidates(const Corpus& corpus, const std::vector<ScoredItem>& candidates) {
  std::string out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Item& it = corpus.item(candidates[i].id);
    std::vector<std::string> attrs;
    for (AttributeId a : it.attribute_ids) attrs.push_back(corpus.attribute(a).name);
    out += std::to_string(i + 1) + ". " + it.title + " | " + join(attrs, ", ") + "\n";
  }
  return out;
}

std::string render_history(const std::vector<std::string>& feedback,
                           const std::vector<std::string>& preferences) {
  std::string out;
  for (std::size_t i = 0; i < std::max(feedback.size(), preferences.size()); ++i) {
    if (i < preferences.size())
      out += "Inferred preference (turn " + std::to_string(i) + "): " + preferences[i] + "\n";
    if (i < feedback.size())
      out += "User feedback (turn " + std::to_string(i + 1) + "): " + feedback[i] + "\n";
  }
  return out.empty() ? "(none)" : out;
}

AgentRequest simulator_request(const Corpus& corpus, const Dialogue& d,
                               std::span<const ItemId> prev_recs, bool blind,
                               const PromptLibrary& prompts, int turn) {
  AgentRequest r;
  r.task = AgentTask::simulate;
  r.corpus = &corpus;
  r.dialogue = &d;
  r.turn = turn;
  if (!blind) r.prev_recs.assign(prev_recs.begin(), prev_recs.end());
  const PromptVars vars{{"dialogue", dialogue_text(d)},
                        {"entities", render_entities(corpus, d)},
                        {"prev_recs", blind ? "(not shown)" : render_titles(corpus, r.prev_recs)}};
  r.messages.push_back({"user", prompts.render("simulator", vars)});
  return r;
}

AgentRequest recommender_request(const Corpus& corpus, const Dialogue& d,
                                 const CandidateSet& candidates,
                                 const std::vector<std::string>& feedback_history,
                                 const std::vector<std::string>& preference_history,
                                 std::span<const ItemId> prev_recs,
                                 const PromptLibrary& prompts, int turn, std::size_t list_size,
                                 std::size_t max_candidates) {
  if (candidates.empty()) throw DataError("recommender request needs at least one candidate");
  AgentRequest r;
  r.task = AgentTask::recommend;
  r.corpus = &corpus;
  r.dialogue = &d;
  r.turn = turn;
  r.list_size = list_size;
  r.candidates = candidates.items;
  if (r.candidates.size() > max_candidates) {
    spdlog::warn("recommender prompt: truncating {} candidates to {}", r.candidates.size(),
                 max_candidates);
    r.candidates.resize(max_candidates);
  }
  r.feedback_history = feedback_history;
  r.preference_history = preference_history;
  r.prev_recs.assign(prev_recs.begin(), prev_recs.end());
  const PromptVars vars{{"dialogue", dialogue_text(d)},
                        {"entities", render_entities(corpus, d)},
                        {"feedback_history", render_history(feedback_history, preference_history)},
                        {"prev_recs", render_titles(corpus, r.prev_recs)},
                        {"candidates", render_candidates(corpus, r.candidates)},
                        {"list_size", std::to_string(list_size)}};
  r.messages.push_back({"user", prompts.render("recommender", vars)});
  return r;
}

std::string simulate_feedback(const ChatBackend& backend, const AgentRequest& request) {
  std::string out = backend.complete(request);
  if (trim(out).empty()) throw BackendError("simulator returned an empty completion", false);
  return out;
}

std::string generate_recommendation(const ChatBackend& backend, const AgentRequest& request) {
  if (request.candidates.empty()) throw DataError("generate_recommendation: no candidates");
  std::string out = backend.complete(request);
  if (trim(out).empty()) throw BackendError("recommender returned an empty completion", false);
  return out;
}

const char* to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::http: return "http";
    case BackendKind::scripted_simulator: return "scripted_simulator";
    case BackendKind::scripted_recommender: return "scripted_recommender";
    case BackendKind::noise: return "noise";
    case BackendKind::scripted_teacher: return "scripted_teacher";
    case BackendKind::toy_policy: return "toy_policy";
  }
  return "http";
}

BackendKind parse_backend_kind(const std::string& s) {
  for (auto k : {BackendKind::http, BackendKind::scripted_simulator,
                 BackendKind::scripted_recommender, BackendKind::noise,
                 BackendKind::scripted_teacher, BackendKind::toy_policy})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown backend kind '" + s + "'");
}

}  // namespace smtpo
