// SPDX-License-Identifier: Apache-2.0
#include "smtpo/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "smtpo/text.hpp"

namespace smtpo {

using json = nlohmann::ordered_json;

KnowledgeGraph::KnowledgeGraph(std::vector<EntityId> nodes,
                               std::vector<KgEdge> edges, std::size_t n_items)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), n_items_(n_items) {
  index_.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    index_.emplace(nodes_[i], static_cast<int>(i));
  adjacency_.assign(nodes_.size(), {});
  for (const auto& e : edges_) {
    int a = index_of(e.item_id), b = index_of(e.attribute_id);
    if (a < 0 || b < 0)
      throw DataError("kg edge endpoint does not resolve: (" +
                      std::to_string(e.item_id) + ", " +
                      std::to_string(e.attribute_id) + ")");
    if (a == b) throw DataError("kg self-loop on " + std::to_string(e.item_id));
    if (!is_item(a) || is_item(b))
      throw DataError("kg edge must join an item to an attribute: (" +
                      std::to_string(e.item_id) + ", " +
                      std::to_string(e.attribute_id) + ")");
    adjacency_[a].push_back(b);
    adjacency_[b].push_back(a);
  }
}

int KnowledgeGraph::index_of(EntityId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

Corpus::Corpus(std::vector<Item> items, std::vector<Attribute> attributes,
               std::vector<Dialogue> dialogues, std::vector<KgEdge> edges)
    : items_(std::move(items)),
      attributes_(std::move(attributes)),
      dialogues_(std::move(dialogues)) {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    const auto& a = attributes_[i];
    if (a.name.empty())
      throw DataError("attribute " + std::to_string(a.id) + " has empty name");
    if (!attr_index_.emplace(a.id, i).second)
      throw DataError("duplicate attribute id " + std::to_string(a.id));
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto& it = items_[i];
    if (it.title.empty())
      throw DataError("item " + std::to_string(it.id) + " has empty title");
    if (attr_index_.contains(it.id))
      throw DataError("item id " + std::to_string(it.id) +
                      " collides with an attribute id");
    if (!item_index_.emplace(it.id, i).second)
      throw DataError("duplicate item id " + std::to_string(it.id));
    std::sort(it.attribute_ids.begin(), it.attribute_ids.end());
    it.attribute_ids.erase(
        std::unique(it.attribute_ids.begin(), it.attribute_ids.end()),
        it.attribute_ids.end());
    for (AttributeId a : it.attribute_ids)
      if (!attr_index_.contains(a))
        throw DataError("item " + std::to_string(it.id) +
                        " references unknown attribute id " + std::to_string(a));
  }

  // The edge set must equal the item-attribute membership relation.
  std::set<KgEdge> edge_set(edges.begin(), edges.end());
  std::set<KgEdge> membership;
  for (const auto& it : items_)
    for (AttributeId a : it.attribute_ids) membership.insert({it.id, a});
  for (const auto& e : edge_set) {
    if (!item_index_.contains(e.item_id))
      throw DataError("kg edge references unknown item id " +
                      std::to_string(e.item_id));
    if (!attr_index_.contains(e.attribute_id))
      throw DataError("kg edge references unknown attribute id " +
                      std::to_string(e.attribute_id));
    if (!membership.contains(e))
      throw DataError("kg edge (" + std::to_string(e.item_id) + ", " +
                      std::to_string(e.attribute_id) +
                      ") has no matching item attribute");
  }
  for (const auto& m : membership)
    if (!edge_set.contains(m))
      throw DataError("item " + std::to_string(m.item_id) + " attribute " +
                      std::to_string(m.attribute_id) + " has no kg edge");

  std::vector<EntityId> nodes;
  nodes.reserve(items_.size() + attributes_.size());
  for (const auto& it : items_) nodes.push_back(it.id);
  for (const auto& a : attributes_) nodes.push_back(a.id);
  kg_ = KnowledgeGraph(std::move(nodes),
                       std::vector<KgEdge>(edge_set.begin(), edge_set.end()),
                       items_.size());

  std::set<std::int64_t> seen;
  for (const auto& d : dialogues_) {
    const std::string tag = "dialogue " + std::to_string(d.id);
    if (!seen.insert(d.id).second) throw DataError("duplicate " + tag);
    if (d.turns.empty()) throw DataError(tag + " has no turns");
    if (!item_index_.contains(d.target_item_id))
      throw DataError(tag + " references unknown item id " +
                      std::to_string(d.target_item_id));
    for (const auto& m : d.mentioned) {
      if (!has_entity(m.entity))
        throw DataError(tag + " references unknown entity id " +
                        std::to_string(m.entity));
      if (m.attribute && !attr_index_.contains(*m.attribute))
        throw DataError(tag + " references unknown attribute id " +
                        std::to_string(*m.attribute));
      if (m.entity == d.target_item_id)
        throw DataError(tag + " mentions its own target item " +
                        std::to_string(m.entity));
    }
    for (AttributeId a : d.target_attribute_ids)
      if (!attr_index_.contains(a))
        throw DataError(tag + " references unknown attribute id " +
                        std::to_string(a));
  }
  build_indices();
}

void Corpus::build_indices() {
  dialogue_index_.clear();
  for (std::size_t i = 0; i < dialogues_.size(); ++i)
    dialogue_index_.emplace(dialogues_[i].id, i);
  normalized_titles_.clear();
  title_index_.clear();
  for (const auto& it : items_) {
    normalized_titles_.push_back(normalize_title(it.title));
    title_index_[normalized_titles_.back()].push_back(it.id);
  }
  normalized_attr_names_.clear();
  for (const auto& a : attributes_)
    normalized_attr_names_.push_back(normalize_text(a.name));
}

const Item& Corpus::item(ItemId id) const {
  auto it = item_index_.find(id);
  if (it == item_index_.end())
    throw DataError("unknown item id " + std::to_string(id));
  return items_[it->second];
}

const Attribute& Corpus::attribute(AttributeId id) const {
  auto it = attr_index_.find(id);
  if (it == attr_index_.end())
    throw DataError("unknown attribute id " + std::to_string(id));
  return attributes_[it->second];
}

const Dialogue& Corpus::dialogue(std::int64_t id) const {
  auto it = dialogue_index_.find(id);
  if (it == dialogue_index_.end())
    throw DataError("unknown dialogue id " + std::to_string(id));
  return dialogues_[it->second];
}

std::vector<const Dialogue*> Corpus::dialogues_in(Split split) const {
  std::vector<const Dialogue*> out;
  for (const auto& d : dialogues_)
    if (d.split == split) out.push_back(&d);
  return out;
}

std::optional<ItemId> Corpus::find_title(const std::string& normalized) const {
  auto it = title_index_.find(normalized);
  if (it == title_index_.end() || it->second.size() != 1) return std::nullopt;
  return it->second.front();
}

const std::string& Corpus::normalized_title(ItemId id) const {
  auto it = item_index_.find(id);
  if (it == item_index_.end())
    throw DataError("unknown item id " + std::to_string(id));
  return normalized_titles_[it->second];
}

std::vector<AttributeId> Corpus::attributes_named_in(std::string_view text) const {
  const std::string hay = normalize_text(text);
  std::vector<AttributeId> out;
  for (std::size_t i = 0; i < attributes_.size(); ++i)
    if (contains_phrase(hay, normalized_attr_names_[i]))
      out.push_back(attributes_[i].id);
  return out;
}

Corpus Corpus::with_dialogues(std::vector<Dialogue> dialogues) const {
  Corpus c = *this;
  c.dialogues_ = std::move(dialogues);
  c.build_indices();
  return c;
}

bool Corpus::operator==(const Corpus& other) const {
  return items_ == other.items_ && attributes_ == other.attributes_ &&
         dialogues_ == other.dialogues_ && kg_.edges() == other.kg_.edges() &&
         kg_.nodes() == other.kg_.nodes();
}

const char* to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::genre: return "genre";
    case AttributeKind::director: return "director";
    case AttributeKind::actor: return "actor";
    case AttributeKind::other: return "other";
  }
  return "other";
}

const char* to_string(Speaker speaker) {
  return speaker == Speaker::user ? "user" : "recommender";
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "train";
}

AttributeKind parse_attribute_kind(const std::string& s) {
  if (s == "genre") return AttributeKind::genre;
  if (s == "director") return AttributeKind::director;
  if (s == "actor") return AttributeKind::actor;
  if (s == "other") return AttributeKind::other;
  throw DataError("unknown attribute kind '" + s + "'");
}

Speaker parse_speaker(const std::string& s) {
  if (s == "user") return Speaker::user;
  if (s == "recommender") return Speaker::recommender;
  throw DataError("unknown speaker '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

std::string dialogue_text(const Dialogue& d) {
  std::string out;
  for (const auto& t : d.turns) {
    if (!out.empty()) out.push_back('\n');
    out += to_string(t.speaker);
    out += ": ";
    out += t.text;
  }
  return out;
}

std::vector<EntityId> mentioned_entities(const Dialogue& d) {
  std::vector<EntityId> out;
  auto add = [&](EntityId id) {
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  };
  for (const auto& m : d.mentioned) {
    add(m.entity);
    if (m.attribute) add(*m.attribute);
  }
  return out;
}

std::vector<ItemId> mentioned_items(const Dialogue& d, const Corpus& corpus) {
  std::vector<ItemId> out;
  for (const auto& m : d.mentioned)
    if (corpus.has_item(m.entity) &&
        std::find(out.begin(), out.end(), m.entity) == out.end())
      out.push_back(m.entity);
  return out;
}

std::size_t attribute_overlap(const Item& a, const Item& b) {
  return attribute_overlap(a, b.attribute_ids);
}

std::size_t attribute_overlap(const Item& item,
                              const std::vector<AttributeId>& attrs) {
  std::size_t n = 0;
  for (AttributeId x : attrs)
    if (std::binary_search(item.attribute_ids.begin(), item.attribute_ids.end(), x))
      ++n;
  return n;
}

// ---------------------------------------------------------------------------
// JSONL I/O

namespace {

template <typename Fn>
void read_jsonl(const std::filesystem::path& path, Fn&& on_record) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      on_record(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " +
                      e.what());
    }
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& dir) {
  std::vector<Attribute> attributes;
  read_jsonl(dir / "attributes.jsonl", [&](const json& j) {
    attributes.push_back({j.at("id").get<AttributeId>(),
                          j.at("name").get<std::string>(),
                          parse_attribute_kind(j.at("kind").get<std::string>())});
  });
  std::vector<Item> items;
  read_jsonl(dir / "items.jsonl", [&](const json& j) {
    items.push_back({j.at("id").get<ItemId>(), j.at("title").get<std::string>(),
                     j.at("attribute_ids").get<std::vector<AttributeId>>(),
                     j.value("description", std::string{})});
  });
  std::vector<Dialogue> dialogues;
  read_jsonl(dir / "dialogues.jsonl", [&](const json& j) {
    Dialogue d;
    d.id = j.at("id").get<std::int64_t>();
    for (const auto& t : j.at("turns"))
      d.turns.push_back({parse_speaker(t.at("speaker").get<std::string>()),
                         t.at("text").get<std::string>()});
    for (const auto& m : j.at("mentioned")) {
      if (!m.is_array() || m.empty() || m.size() > 2)
        throw DataError("mentioned entry must be [entity, attribute|null]");
      Mention men{m[0].get<EntityId>(), std::nullopt};
      if (m.size() == 2 && !m[1].is_null()) men.attribute = m[1].get<AttributeId>();
      d.mentioned.push_back(men);
    }
    d.target_item_id = j.at("target_item_id").get<ItemId>();
    d.target_attribute_ids =
        j.value("target_attribute_ids", std::vector<AttributeId>{});
    d.gold_preference = j.value("gold_preference", std::string{});
    d.split = parse_split(j.value("split", std::string{"train"}));
    dialogues.push_back(std::move(d));
  });
  std::vector<KgEdge> edges;
  read_jsonl(dir / "kg_edges.jsonl", [&](const json& j) {
    edges.push_back({j.at("item_id").get<ItemId>(),
                     j.at("attribute_id").get<AttributeId>()});
  });
  if (dialogues.empty())
    spdlog::warn("corpus at {} has no dialogues", dir.string());
  return Corpus(std::move(items), std::move(attributes), std::move(dialogues),
                std::move(edges));
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "items.jsonl");
    for (const auto& it : corpus.items())
      out << json{{"id", it.id},
                  {"title", it.title},
                  {"attribute_ids", it.attribute_ids},
                  {"description", it.description}}
                 .dump()
          << '\n';
  }
  {
    auto out = open_out(dir / "attributes.jsonl");
    for (const auto& a : corpus.attributes())
      out << json{{"id", a.id}, {"name", a.name}, {"kind", to_string(a.kind)}}.dump()
          << '\n';
  }
  {
    auto out = open_out(dir / "dialogues.jsonl");
    for (const auto& d : corpus.dialogues()) {
      json turns = json::array();
      for (const auto& t : d.turns)
        turns.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
      json mentioned = json::array();
      for (const auto& m : d.mentioned)
        mentioned.push_back(json::array(
            {m.entity, m.attribute ? json(*m.attribute) : json(nullptr)}));
      out << json{{"id", d.id},
                  {"turns", turns},
                  {"mentioned", mentioned},
                  {"target_item_id", d.target_item_id},
                  {"target_attribute_ids", d.target_attribute_ids},
                  {"gold_preference", d.gold_preference},
                  {"split", to_string(d.split)}}
                 .dump()
          << '\n';
    }
  }
  {
    auto out = open_out(dir / "kg_edges.jsonl");
    for (const auto& e : corpus.kg().edges())
      out << json{{"item_id", e.item_id}, {"attribute_id", e.attribute_id}}.dump()
          << '\n';
  }
}

Corpus split_corpus(const Corpus& corpus, std::array<double, 3> ratios,
                    std::uint64_t seed) {
  for (double r : ratios)
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  std::vector<Dialogue> dialogues = corpus.dialogues();
  const std::size_t n = dialogues.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto n_valid = static_cast<std::size_t>(std::llround(ratios[1] * n));
  auto n_test = static_cast<std::size_t>(std::llround(ratios[2] * n));
  if (n_valid + n_test > n) n_test = n - std::min(n, n_valid);
  for (std::size_t r = 0; r < n; ++r) {
    Split s = Split::train;
    if (r < n_test) s = Split::test;
    else if (r < n_test + n_valid) s = Split::valid;
    dialogues[order[r]].split = s;
  }
  return corpus.with_dialogues(std::move(dialogues));
}

}  // namespace smtpo
