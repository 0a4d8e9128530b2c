// SPDX-License-Identifier: Apache-2.0
#include "smtpo/sft_datagen.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "smtpo/text.hpp"

namespace smtpo {

namespace {

std::string item_line(const Corpus& corpus, ItemId id) {
  const Item& it = corpus.item(id);
  std::vector<std::string> attrs;
  for (AttributeId a : it.attribute_ids) attrs.push_back(corpus.attribute(a).name);
  return it.title + " | " + join(attrs, ", ");
}

PromptVars dialogue_vars(const Corpus& corpus, const Dialogue& d) {
  return {{"dialogue", dialogue_text(d)}, {"entities", render_entities(corpus, d)}};
}

std::vector<std::string> target_attribute_names(const Corpus& corpus, const Dialogue& d) {
  std::vector<std::string> names;
  for (AttributeId a : corpus.item(d.target_item_id).attribute_ids)
    names.push_back(corpus.attribute(a).name);
  return names;
}

void report(std::vector<std::string>* failures, const std::string& what) {
  spdlog::warn("{}", what);
  if (failures) failures->push_back(what);
}

}  // namespace

void SftConfig::validate() const {
  if (list_size < 1) throw ConfigError("sft.list_size must be >= 1");
  if (recommender_candidates < 1) throw ConfigError("sft.recommender_candidates must be >= 1");
}

std::vector<ItemId> build_candidate_list(const Dialogue& d, const Corpus& corpus,
                                         ListStrategy strategy, std::size_t size,
                                         std::mt19937_64& rng) {
  if (size < 1) throw ConfigError("candidate list size must be >= 1");
  const Item& target = corpus.item(d.target_item_id);
  const auto mentioned = mentioned_items(d, corpus);
  const std::unordered_set<ItemId> excluded(mentioned.begin(), mentioned.end());

  struct Entry {
    ItemId id;
    std::size_t overlap;
  };
  std::vector<Entry> pool;
  for (const Item& it : corpus.items())
    if (it.id != target.id && !excluded.contains(it.id))
      pool.push_back({it.id, attribute_overlap(it, target)});
  // Random order within equal overlap, then most overlap first.
  std::shuffle(pool.begin(), pool.end(), rng);
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Entry& a, const Entry& b) { return a.overlap > b.overlap; });
  if (!is_hard(strategy)) std::reverse(pool.begin(), pool.end());

  const std::size_t n_neg = has_target(strategy) ? size - 1 : size;
  if (n_neg > pool.size())
    throw DataError("catalog too small for a candidate list of " + std::to_string(size));
  const std::size_t quartile = (pool.size() + 3) / 4;
  std::vector<ItemId> negatives;
  if (n_neg <= quartile) {
    std::vector<std::size_t> idx(quartile);
    for (std::size_t i = 0; i < quartile; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n_neg; ++i) negatives.push_back(pool[idx[i]].id);
  } else {
    spdlog::warn("dialogue {}: {} quartile holds {} items, topping up to {} by nearest overlap",
                 d.id, is_hard(strategy) ? "top" : "bottom", quartile, n_neg);
    for (std::size_t i = 0; i < n_neg; ++i) negatives.push_back(pool[i].id);
    std::shuffle(negatives.begin(), negatives.end(), rng);
  }
  if (has_target(strategy)) {
    std::uniform_int_distribution<std::size_t> pos(0, negatives.size());
    negatives.insert(negatives.begin() + static_cast<std::ptrdiff_t>(pos(rng)), target.id);
  }
  return negatives;
}

std::vector<SftInstance> gen_simulator_tasks(const Dialogue& d, const Corpus& corpus,
                                             const ChatBackend& teacher,
                                             const PromptLibrary& prompts,
                                             const SftConfig& config, std::mt19937_64& rng,
                                             std::vector<std::string>* failures) {
  config.validate();
  if (corpus.item(d.target_item_id).attribute_ids.empty())
    throw DataError("dialogue " + std::to_string(d.id) + ": target has no attributes");
  const Item& target = corpus.item(d.target_item_id);
  std::vector<SftInstance> out;
  std::vector<std::pair<ListStrategy, std::vector<ItemId>>> lists;
  for (ListStrategy s : kAllStrategies)
    lists.emplace_back(s, build_candidate_list(d, corpus, s, config.list_size, rng));

  for (const auto& [strategy, list] : lists) {
    PromptVars vars = dialogue_vars(corpus, d);
    vars["prev_recs"] = render_titles(corpus, list);
    const std::string instruction = prompts.render("simulator", vars);
    AgentRequest req;
    req.task = AgentTask::teacher_feedback;
    req.corpus = &corpus;
    req.dialogue = &d;
    req.prev_recs = list;
    req.target = d.target_item_id;
    req.turn = 1;
    req.messages = {{"user", instruction + "\n\n" +
                                 prompts.render("teacher_feedback",
                                                {{"target", target.title},
                                                 {"target_attributes",
                                                  join(target_attribute_names(corpus, d), ", ")}})}};
    try {
      std::string output = teacher.complete(req);
      if (trim(output).empty()) throw BackendError("empty teacher completion", false);
      SftInstance inst{SftTask::feedback_gen, instruction, std::move(output), {}};
      inst.meta = {{"dialogue_id", d.id}, {"strategy", to_string(strategy)}, {"list", list}};
      out.push_back(std::move(inst));
    } catch (const BackendError& e) {
      report(failures, "dialogue " + std::to_string(d.id) + " feedback_gen/" +
                           to_string(strategy) + " skipped: " + e.what());
    }
  }

  SftInstance align{SftTask::attr_align, prompts.render("attr_align", dialogue_vars(corpus, d)),
                    "(" + target.title + "; " + join(target_attribute_names(corpus, d), ", ") + ")",
                    {}};
  align.meta = {{"dialogue_id", d.id}, {"item_id", target.id}};
  out.push_back(std::move(align));

  for (std::size_t k = 0; k < config.target_pred_per_dialogue; ++k) {
    const auto& [strategy, list] = lists[k % lists.size()];
    std::uniform_int_distribution<std::size_t> pick(0, list.size() - 1);
    const ItemId item = list[pick(rng)];
    PromptVars vars = dialogue_vars(corpus, d);
    vars["item"] = item_line(corpus, item);
    const bool yes = item == d.target_item_id;
    SftInstance inst{SftTask::target_pred, prompts.render("target_pred", vars), yes ? "Yes" : "No", {}};
    inst.meta = {{"dialogue_id", d.id}, {"strategy", to_string(strategy)}, {"item_id", item},
                 {"label", yes}};
    out.push_back(std::move(inst));
  }
  return out;
}

std::optional<SftInstance> gen_recommender_sft(const Dialogue& d, const Corpus& corpus,
                                               const ChatBackend& teacher,
                                               const PromptLibrary& prompts,
                                               ListStrategy strategy, const SftConfig& config,
                                               std::mt19937_64& rng,
                                               std::vector<std::string>* failures) {
  config.validate();
  const auto list = build_candidate_list(d, corpus, strategy, config.recommender_candidates, rng);
  CandidateSet cands;
  for (ItemId id : list) cands.items.push_back({id, 0.0});
  auto req = recommender_request(corpus, d, cands, {}, {}, {}, prompts, 0, config.list_size,
                                 config.recommender_candidates);
  const std::string instruction = req.messages.front().content;
  req.task = AgentTask::teacher_recommend;
  req.target = d.target_item_id;
  req.messages.front().content +=
      "\n\n" + prompts.render("teacher_recommender", {{"target", corpus.item(d.target_item_id).title}});
  try {
    std::string output = teacher.complete(req);
    if (trim(output).empty()) throw BackendError("empty teacher completion", false);
    SftInstance inst{SftTask::recommender_sft, instruction, std::move(output), {}};
    inst.meta = {{"dialogue_id", d.id}, {"strategy", to_string(strategy)}, {"candidates", list},
                 {"target_item_id", d.target_item_id}};
    return inst;
  } catch (const BackendError& e) {
    report(failures, "dialogue " + std::to_string(d.id) + " recommender_sft skipped: " + e.what());
    return std::nullopt;
  }
}

std::size_t emit_jsonl(const std::vector<SftInstance>& instances, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& i : instances)
    out << nlohmann::ordered_json{{"task", to_string(i.task)},
                                  {"instruction", i.instruction},
                                  {"output", i.output},
                                  {"meta", i.meta}}
               .dump()
        << '\n';
  if (!out) throw IoError("failed writing " + path.string());
  return instances.size();
}

std::vector<SftInstance> read_sft_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path.string());
  std::vector<SftInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::ordered_json::parse(line);
      SftInstance inst;
      inst.task = parse_sft_task(j.at("task").get<std::string>());
      inst.instruction = j.at("instruction").get<std::string>();
      inst.output = j.at("output").get<std::string>();
      inst.meta = j.at("meta");
      if (inst.instruction.empty() || inst.output.empty())
        throw DataError("empty instruction or output");
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed instance: " + e.what());
    } catch (const Error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

const char* to_string(ListStrategy s) {
  switch (s) {
    case ListStrategy::HardWithTarget: return "HardWithTarget";
    case ListStrategy::HardWithoutTarget: return "HardWithoutTarget";
    case ListStrategy::SimpleWithTarget: return "SimpleWithTarget";
    case ListStrategy::SimpleWithoutTarget: return "SimpleWithoutTarget";
  }
  return "HardWithTarget";
}

const char* to_string(SftTask t) {
  switch (t) {
    case SftTask::feedback_gen: return "feedback_gen";
    case SftTask::attr_align: return "attr_align";
    case SftTask::target_pred: return "target_pred";
    case SftTask::recommender_sft: return "recommender_sft";
  }
  return "feedback_gen";
}

ListStrategy parse_list_strategy(const std::string& s) {
  for (ListStrategy x : kAllStrategies)
    if (s == to_string(x)) return x;
  throw ConfigError("unknown list strategy '" + s + "'");
}

SftTask parse_sft_task(const std::string& s) {
  for (SftTask t : {SftTask::feedback_gen, SftTask::attr_align, SftTask::target_pred,
                    SftTask::recommender_sft})
    if (s == to_string(t)) return t;
  throw DataError("unknown sft task '" + s + "'");
}

}  // namespace smtpo
