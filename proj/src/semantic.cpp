// SPDX-License-Identifier: Apache-2.0
#include "smtpo/semantic.hpp"

#include <fstream>

#include "http_util.hpp"
#include "json.hpp"
#include "smtpo/text.hpp"

namespace smtpo {

HashingEncoder::HashingEncoder(int dim) : dim_(dim) {
  if (dim <= 0) throw ConfigError("hashing encoder dim must be positive");
}

VectorXd HashingEncoder::encode(std::string_view text) const {
  VectorXd v = VectorXd::Zero(dim_);
  for (const auto& token : tokenize(text)) {
    const std::uint64_t h = fnv1a64(token);
    const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_));
    v[bucket] += ((h >> 47) & 1U) ? 1.0 : -1.0;
  }
  const double norm = v.norm();
  if (norm > 0) v /= norm;
  return v;
}

FileTableEncoder::FileTableEncoder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto vec = j.at("vector").get<std::vector<double>>();
      if (dim_ == 0) dim_ = static_cast<int>(vec.size());
      if (static_cast<int>(vec.size()) != dim_ || dim_ == 0)
        throw DataError("inconsistent vector width");
      table_.emplace(j.at("key").get<std::string>(),
                     Eigen::Map<const VectorXd>(vec.data(), dim_));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (dim_ == 0) throw DataError("semantic file table " + path.string() + " is empty");
}

VectorXd FileTableEncoder::encode(std::string_view text) const {
  auto it = table_.find(content_key(text));
  if (it == table_.end())
    throw DataError("semantic file table has no entry for key " + content_key(text));
  return it->second;
}

HttpEmbeddingEncoder::HttpEmbeddingEncoder(std::string base_url, std::string model,
                                           int dim, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), model_(std::move(model)), dim_(dim), timeout_(timeout) {}

VectorXd HttpEmbeddingEncoder::encode(std::string_view text) const {
  nlohmann::json body{{"model", model_}, {"input", std::string(text)}};
  const std::string raw = detail::post_json(base_url_, "/embeddings", body.dump(), timeout_);
  std::vector<double> vec;
  try {
    vec = nlohmann::json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed embeddings response: ") + e.what(), false);
  }
  if (static_cast<int>(vec.size()) != dim_)
    throw BackendError("embedding width " + std::to_string(vec.size()) +
                           " does not match configured dim " + std::to_string(dim_),
                       false);
  VectorXd v = Eigen::Map<const VectorXd>(vec.data(), dim_);
  if (!v.allFinite()) throw BackendError("embedding contains non-finite values", false);
  return v;
}

void write_file_table(const SemanticEncoder& source, const std::vector<std::string>& texts,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : texts) {
    const VectorXd v = source.encode(t);
    out << nlohmann::json{{"key", content_key(t)},
                          {"vector", std::vector<double>(v.data(), v.data() + v.size())}}
               .dump()
        << '\n';
  }
}

double cosine_similarity(const VectorXd& a, const VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

const char* to_string(SemanticKind kind) {
  switch (kind) {
    case SemanticKind::file_table: return "file_table";
    case SemanticKind::http_endpoint: return "http_endpoint";
    case SemanticKind::hashing_mock: return "hashing_mock";
  }
  return "hashing_mock";
}

}  // namespace smtpo
