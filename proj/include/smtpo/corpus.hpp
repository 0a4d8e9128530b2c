// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "smtpo/types.hpp"

namespace smtpo {

enum class AttributeKind { genre, director, actor, other };

struct Attribute {
  AttributeId id = 0;
  std::string name;
  AttributeKind kind = AttributeKind::other;

  bool operator==(const Attribute&) const = default;
};

struct Item {
  ItemId id = 0;
  std::string title;
  std::vector<AttributeId> attribute_ids;  // sorted, unique
  std::string description;

  bool operator==(const Item&) const = default;
};

enum class Speaker { user, recommender };

struct Turn {
  Speaker speaker = Speaker::user;
  std::string text;

  bool operator==(const Turn&) const = default;
};

// One (entity, attribute) pair of the mentioned set; the attribute slot is
// empty when the source lacks attribute annotation.
struct Mention {
  EntityId entity = 0;
  std::optional<AttributeId> attribute;

  bool operator==(const Mention&) const = default;
};

enum class Split { train, valid, test };

struct Dialogue {
  std::int64_t id = 0;
  std::vector<Turn> turns;
  std::vector<Mention> mentioned;
  ItemId target_item_id = 0;
  std::vector<AttributeId> target_attribute_ids;
  std::string gold_preference;
  Split split = Split::train;

  bool operator==(const Dialogue&) const = default;
};

struct KgEdge {
  ItemId item_id = 0;
  AttributeId attribute_id = 0;

  bool operator==(const KgEdge&) const = default;
  auto operator<=>(const KgEdge&) const = default;
};

// Undirected item-attribute graph. Node order: items, then attributes, each
// in corpus order; this is the row order of every embedding table.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  // The first n_items nodes are items, the rest attributes.
  KnowledgeGraph(std::vector<EntityId> nodes, std::vector<KgEdge> edges,
                 std::size_t n_items);

  const std::vector<EntityId>& nodes() const { return nodes_; }
  const std::vector<KgEdge>& edges() const { return edges_; }
  std::size_t node_count() const { return nodes_.size(); }
  bool empty() const { return edges_.empty(); }
  std::size_t item_count() const { return n_items_; }
  bool is_item(int index) const { return static_cast<std::size_t>(index) < n_items_; }

  // Dense row index of an entity, or -1.
  int index_of(EntityId id) const;
  const std::vector<int>& neighbors(int index) const { return adjacency_[index]; }

 private:
  std::vector<EntityId> nodes_;
  std::vector<KgEdge> edges_;
  std::size_t n_items_ = 0;
  std::unordered_map<EntityId, int> index_;
  std::vector<std::vector<int>> adjacency_;
};

class Corpus {
 public:
  Corpus() = default;

  // Validates every invariant eagerly; throws DataError naming the offender.
  Corpus(std::vector<Item> items, std::vector<Attribute> attributes,
         std::vector<Dialogue> dialogues, std::vector<KgEdge> edges);

  const std::vector<Item>& items() const { return items_; }
  const std::vector<Attribute>& attributes() const { return attributes_; }
  const std::vector<Dialogue>& dialogues() const { return dialogues_; }
  const KnowledgeGraph& kg() const { return kg_; }

  bool has_item(EntityId id) const { return item_index_.contains(id); }
  bool has_attribute(EntityId id) const { return attr_index_.contains(id); }
  bool has_entity(EntityId id) const { return has_item(id) || has_attribute(id); }
  const Item& item(ItemId id) const;
  const Attribute& attribute(AttributeId id) const;
  const Dialogue& dialogue(std::int64_t id) const;

  std::vector<const Dialogue*> dialogues_in(Split split) const;

  // Title lookup by normalized form; empty when missing or ambiguous.
  std::optional<ItemId> find_title(const std::string& normalized) const;
  const std::string& normalized_title(ItemId id) const;

  // Attributes whose names occur as whole phrases in the text.
  std::vector<AttributeId> attributes_named_in(std::string_view text) const;

  Corpus with_dialogues(std::vector<Dialogue> dialogues) const;

  bool operator==(const Corpus& other) const;

 private:
  void build_indices();

  std::vector<Item> items_;
  std::vector<Attribute> attributes_;
  std::vector<Dialogue> dialogues_;
  KnowledgeGraph kg_;
  std::unordered_map<EntityId, std::size_t> item_index_;
  std::unordered_map<EntityId, std::size_t> attr_index_;
  std::unordered_map<std::int64_t, std::size_t> dialogue_index_;
  std::vector<std::string> normalized_titles_;
  std::unordered_map<std::string, std::vector<ItemId>> title_index_;
  std::vector<std::string> normalized_attr_names_;
};

const char* to_string(AttributeKind kind);
const char* to_string(Speaker speaker);
const char* to_string(Split split);
AttributeKind parse_attribute_kind(const std::string& s);
Speaker parse_speaker(const std::string& s);
Split parse_split(const std::string& s);

// Speaker-prefixed turns joined by newlines.
std::string dialogue_text(const Dialogue& d);

// Entity ids of the mentioned set: entities plus non-null attribute slots,
// deduplicated in first-seen order.
std::vector<EntityId> mentioned_entities(const Dialogue& d);
std::vector<ItemId> mentioned_items(const Dialogue& d, const Corpus& corpus);

std::size_t attribute_overlap(const Item& a, const Item& b);
std::size_t attribute_overlap(const Item& item, const std::vector<AttributeId>& attrs);

// Reads items.jsonl, attributes.jsonl, dialogues.jsonl, kg_edges.jsonl.
Corpus load_corpus(const std::filesystem::path& dir);
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Assigns split tags by a seeded shuffle. Sizes round to the nearest count
// with the remainder landing in train.
Corpus split_corpus(const Corpus& corpus, std::array<double, 3> ratios,
                    std::uint64_t seed);

struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t n_items = 500;
  std::size_t n_attrs = 40;
  std::size_t n_dialogues = 2000;
};

// Structured catalog: directors carry a genre/actor/era profile, items draw
// mostly from their director's profile. Dialogues name target attributes
// verbatim and mention a related item. Splits are 80/10/10.
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

}  // namespace smtpo
