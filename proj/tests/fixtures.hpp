// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "smtpo/corpus.hpp"

namespace smtpo::test {

// Items 1..3, attributes 101..104, one test and one train dialogue.
inline Corpus tiny_corpus() {
  std::vector<Item> items = {{1, "Joker", {101, 102}, "A clown story."},
                             {2, "Heat", {102, 103}, "A heist."},
                             {3, "Alien", {103, 104}, ""}};
  std::vector<Attribute> attrs = {{101, "comedy", AttributeKind::genre},
                                  {102, "1990s", AttributeKind::other},
                                  {103, "Ridley Scott", AttributeKind::director},
                                  {104, "Sigourney Weaver", AttributeKind::actor}};
  Dialogue a;
  a.id = 1;
  a.turns = {{Speaker::user, "I loved Heat. Something light, maybe a comedy?"},
             {Speaker::recommender, "Sure, let me look."}};
  a.mentioned = {{2, std::nullopt}, {101, std::nullopt}};
  a.target_item_id = 1;
  a.target_attribute_ids = {101, 102};
  a.gold_preference = "comedy from the 1990s";
  a.split = Split::test;
  Dialogue b;
  b.id = 2;
  b.turns = {{Speaker::user, "Joker was great. Anything by Ridley Scott?"}};
  b.mentioned = {{1, std::nullopt}, {103, std::nullopt}};
  b.target_item_id = 3;
  b.target_attribute_ids = {103, 104};
  b.gold_preference = "Ridley Scott films with Sigourney Weaver";
  b.split = Split::train;
  std::vector<KgEdge> edges;
  for (const auto& it : items)
    for (AttributeId a : it.attribute_ids) edges.push_back({it.id, a});
  return Corpus(std::move(items), std::move(attrs), {a, b}, std::move(edges));
}

// Small synthetic corpus shared by the module tests.
inline const Corpus& small_corpus() {
  static const Corpus c = generate_synthetic_corpus({11, 120, 20, 300});
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("smtpo_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace smtpo::test
