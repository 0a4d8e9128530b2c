// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <random>
#include <set>

#include "smtpo/corpus.hpp"
#include "smtpo/text.hpp"

namespace smtpo {

namespace {

constexpr const char* kGenres[] = {
    "comedy",    "thriller",  "western",    "noir",      "musical",
    "horror",    "romance",   "fantasy",    "documentary", "animation",
    "mystery",   "adventure", "satire",     "biopic",    "heist",
    "dystopia",  "swashbuckler", "melodrama", "slapstick", "cyberpunk",
    "espionage", "mockumentary", "folklore", "wuxia",     "kaiju"};

constexpr const char* kFirstNames[] = {
    "Ava",    "Bruno",  "Celia",  "Dorian", "Elsa",   "Felix",  "Greta",
    "Hugo",   "Ines",   "Jonas",  "Kira",   "Lorenzo", "Mira",  "Nils",
    "Odette", "Pavel",  "Rosa",   "Stellan", "Tamsin", "Umberto", "Vera",
    "Wolfram", "Xenia", "Yusuf",  "Zelda",  "Anouk",  "Basil",  "Cosima",
    "Dmitri", "Esme",   "Florian", "Gemma", "Henrik", "Ilse",   "Jasper",
    "Katya",  "Leopold", "Magda", "Nikos",  "Ottilie"};

constexpr const char* kLastNames[] = {
    "Lund",     "Okafor",  "Varga",   "Castell", "Marr",    "Quist",
    "Brandt",   "Ferro",   "Halloran", "Ibsen",  "Jovic",   "Kessler",
    "Lazaro",   "Moreau",  "Novak",   "Orsini",  "Petrov",  "Rask",
    "Sorensen", "Tavares", "Ueda",    "Voss",    "Whitlock", "Yilmaz",
    "Zamora",   "Abara",   "Bellamy", "Cordova", "Dunmore", "Eklund",
    "Falk",     "Grisham", "Holm",    "Ivanova", "Jaramillo", "Kowal",
    "Lindqvist", "Mbeki",  "Nakamura", "Oyelaran"};

constexpr const char* kEras[] = {"1920s", "1930s", "1940s", "1950s", "1960s",
                                 "1970s", "1980s", "1990s", "2000s", "2010s",
                                 "2020s"};

constexpr const char* kTitleAdjectives[] = {
    "Crimson",  "Silent",   "Hollow",   "Golden",   "Broken",    "Distant",
    "Frozen",   "Hidden",   "Burning",  "Velvet",   "Iron",      "Scarlet",
    "Midnight", "Wandering", "Emerald", "Savage",   "Gentle",    "Restless",
    "Shattered", "Lonely",  "Amber",    "Electric", "Painted",   "Stolen",
    "Wicked",   "Bitter",   "Radiant",  "Sunken",   "Ashen",     "Cobalt"};

constexpr const char* kTitleNouns[] = {
    "Harbor",   "Orchard",  "Lantern",  "Compass",  "Meridian",  "Citadel",
    "Tide",     "Canyon",   "Monarch",  "Echo",     "Garden",    "Horizon",
    "Voyage",   "Empire",   "Sparrow",  "Falcon",   "Cathedral", "Frontier",
    "Labyrinth", "Mirror",  "Prophecy", "Carnival", "Lighthouse", "Serpent",
    "Glacier",  "Ember",    "Kingdom",  "Reef",     "Pilgrim",   "Riddle"};

constexpr const char* kGreetings[] = {
    "Hi there, can you help me find a movie?",
    "Hello! I need something to watch tonight.",
    "Hey, looking for a film recommendation."};
constexpr const char* kOpeners[] = {
    "Sure! What kind of movies do you enjoy?",
    "Happy to help. What have you liked recently?",
    "Of course. Tell me about your taste."};
constexpr const char* kFollowUps[] = {
    "Great choice. Anything else you are hoping for?",
    "Nice. What else matters to you?",
    "Good one. Any other wishes?"};
constexpr const char* kClosers[] = {"Let me think about some options.",
                                    "I have a few ideas in mind.",
                                    "Give me a moment to look."};

template <typename T, std::size_t N>
constexpr std::size_t count_of(const T (&)[N]) {
  return N;
}

using Rng = std::mt19937_64;

std::size_t below(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <typename T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool,
                                          std::size_t k, Rng& rng) {
  std::vector<T> copy = pool;
  std::shuffle(copy.begin(), copy.end(), rng);
  copy.resize(std::min(k, copy.size()));
  return copy;
}

std::string person_name(std::size_t i) {
  constexpr std::size_t nf = count_of(kFirstNames), nl = count_of(kLastNames);
  if (i < nf) return std::string(kFirstNames[i]) + " " + kLastNames[i];
  return "Person" + std::to_string(i) + " " + kLastNames[i % nl];
}

std::string phrase_for(const Attribute& a) {
  switch (a.kind) {
    case AttributeKind::genre: return "some " + a.name;
    case AttributeKind::director: return "films by " + a.name;
    case AttributeKind::actor: return "anything with " + a.name;
    case AttributeKind::other: return "something from the " + a.name;
  }
  return a.name;
}

struct Profile {
  AttributeId director;
  std::vector<AttributeId> genres, actors, eras;
};

}  // namespace

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.n_items < 10) throw ConfigError("n_items below minimum of 10");
  if (spec.n_attrs < 5) throw ConfigError("n_attrs below minimum of 5");
  if (spec.n_dialogues < 1) throw ConfigError("n_dialogues below minimum of 1");
  Rng rng(spec.seed);

  // Attribute pools by kind.
  const std::size_t n = spec.n_attrs;
  const std::size_t n_dir = std::max<std::size_t>(1, n / 5);
  const std::size_t n_era = std::max<std::size_t>(1, n / 7);
  const std::size_t rest = n - n_dir - n_era;
  const std::size_t n_genre = std::max<std::size_t>(1, rest * 45 / 100);
  const std::size_t n_actor = rest - n_genre;

  std::vector<Attribute> attributes;
  std::vector<AttributeId> directors, genres, actors, eras;
  AttributeId next_id = static_cast<AttributeId>(spec.n_items) + 1;
  std::size_t person = 0;
  auto add = [&](std::string name, AttributeKind kind, std::vector<AttributeId>& pool) {
    attributes.push_back({next_id, std::move(name), kind});
    pool.push_back(next_id++);
  };
  for (std::size_t i = 0; i < n_dir; ++i)
    add(person_name(person++), AttributeKind::director, directors);
  for (std::size_t i = 0; i < n_genre; ++i)
    add(i < count_of(kGenres) ? kGenres[i] : "genre" + std::to_string(i),
        AttributeKind::genre, genres);
  for (std::size_t i = 0; i < n_actor; ++i)
    add(person_name(person++), AttributeKind::actor, actors);
  for (std::size_t i = 0; i < n_era; ++i)
    add(i < count_of(kEras) ? kEras[i] : "era" + std::to_string(i),
        AttributeKind::other, eras);
  std::vector<AttributeId> all_attrs;
  for (const auto& a : attributes) all_attrs.push_back(a.id);
  auto attr = [&](AttributeId id) -> const Attribute& {
    return attributes[static_cast<std::size_t>(id - (spec.n_items + 1))];
  };

  std::vector<Profile> profiles;
  for (AttributeId d : directors)
    profiles.push_back({d, sample_without_replacement(genres, 3, rng),
                        sample_without_replacement(actors, 4, rng),
                        sample_without_replacement(eras, 2, rng)});

  // Titles: shuffled adjective-noun pairs, numbered fallbacks past the grid.
  std::vector<std::string> titles;
  for (auto* a : kTitleAdjectives)
    for (auto* b : kTitleNouns) titles.push_back(std::string(a) + " " + b);
  std::shuffle(titles.begin(), titles.end(), rng);
  for (std::size_t i = titles.size(); i < spec.n_items; ++i)
    titles.push_back("Feature " + std::to_string(i));

  std::vector<Item> items;
  std::vector<KgEdge> edges;
  for (std::size_t i = 0; i < spec.n_items; ++i) {
    const Profile& p = profiles[below(rng, profiles.size())];
    Item it;
    it.id = static_cast<ItemId>(i + 1);
    const int year = 1950 + static_cast<int>(below(rng, 70));
    it.title = titles[i] + " (" + std::to_string(year) + ")";
    auto g = sample_without_replacement(p.genres, 2, rng);
    auto a = sample_without_replacement(p.actors, 2, rng);
    auto e = sample_without_replacement(p.eras, 1, rng);
    std::set<AttributeId> set{p.director};
    set.insert(g.begin(), g.end());
    set.insert(a.begin(), a.end());
    set.insert(e.begin(), e.end());
    std::string desc = "A " + join([&] {
      std::vector<std::string> names;
      for (auto x : g) names.push_back(attr(x).name);
      return names;
    }(), " and ") + " film directed by " + attr(p.director).name;
    if (!a.empty()) {
      std::vector<std::string> names;
      for (auto x : a) names.push_back(attr(x).name);
      desc += ", starring " + join(names, " and ");
    }
    if (!e.empty()) desc += ", set in the " + attr(e.front()).name;
    desc += ".";
    if (below(rng, 10) < 3) {
      AttributeId extra = all_attrs[below(rng, all_attrs.size())];
      if (set.insert(extra).second) desc += " Also notable: " + attr(extra).name + ".";
    }
    it.attribute_ids.assign(set.begin(), set.end());
    it.description = std::move(desc);
    for (AttributeId x : it.attribute_ids) edges.push_back({it.id, x});
    items.push_back(std::move(it));
  }

  std::vector<Dialogue> dialogues;
  for (std::size_t k = 0; k < spec.n_dialogues; ++k) {
    Dialogue d;
    d.id = static_cast<std::int64_t>(k + 1);
    const Item* target = nullptr;
    const Item* mention = nullptr;
    std::vector<AttributeId> shared;
    // Resample until the target has a related item to mention.
    while (!mention) {
      target = &items[below(rng, items.size())];
      std::vector<const Item*> related;
      for (const auto& other : items)
        if (other.id != target->id && attribute_overlap(other, *target) > 0)
          related.push_back(&other);
      if (related.empty()) continue;
      mention = related[below(rng, related.size())];
      shared.clear();
      std::set_intersection(target->attribute_ids.begin(), target->attribute_ids.end(),
                            mention->attribute_ids.begin(), mention->attribute_ids.end(),
                            std::back_inserter(shared));
    }
    const AttributeId via = shared[below(rng, shared.size())];
    std::vector<AttributeId> others;
    for (AttributeId x : target->attribute_ids)
      if (x != via) others.push_back(x);
    std::shuffle(others.begin(), others.end(), rng);
    const AttributeId wish = others[0];
    const std::optional<AttributeId> also =
        others.size() > 1 ? std::optional(others[1]) : std::nullopt;

    d.target_item_id = target->id;
    d.target_attribute_ids = target->attribute_ids;
    d.mentioned = {{mention->id, via}, {wish, std::nullopt}};
    if (also) d.mentioned.push_back({*also, std::nullopt});

    std::string wish_line = "I would like " + phrase_for(attr(wish)) + ".";
    if (also) wish_line += " Ideally " + phrase_for(attr(*also)) + " too.";
    if (below(rng, 2) == 0) {
      AttributeId distract = all_attrs[below(rng, all_attrs.size())];
      if (!std::binary_search(target->attribute_ids.begin(),
                              target->attribute_ids.end(), distract))
        wish_line += " A friend keeps suggesting " + phrase_for(attr(distract)) +
                     " but I am unsure about that.";
    }
    d.turns = {
        {Speaker::user, kGreetings[below(rng, count_of(kGreetings))]},
        {Speaker::recommender, kOpeners[below(rng, count_of(kOpeners))]},
        {Speaker::user, "I recently watched " + mention->title +
                            " and loved it, especially " + phrase_for(attr(via)) + "."},
        {Speaker::recommender, kFollowUps[below(rng, count_of(kFollowUps))]},
        {Speaker::user, wish_line},
        {Speaker::recommender, kClosers[below(rng, count_of(kClosers))]}};

    std::vector<std::string> names;
    for (AttributeId x : target->attribute_ids) names.push_back(attr(x).name);
    d.gold_preference = "The user is looking for a movie with " + join(names, ", ") + ".";
    dialogues.push_back(std::move(d));
  }

  Corpus corpus(std::move(items), std::move(attributes), std::move(dialogues),
                std::move(edges));
  return split_corpus(corpus, {0.8, 0.1, 0.1}, spec.seed);
}

}  // namespace smtpo
