// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>

#include "smtpo/types.hpp"

namespace smtpo {

enum class SemanticKind { file_table, http_endpoint, hashing_mock };

// Text encoder interface. encode() is deterministic for a fixed input and
// safe to call concurrently.
class SemanticEncoder {
 public:
  virtual ~SemanticEncoder() = default;
  virtual SemanticKind kind() const = 0;
  virtual int dim() const = 0;
  virtual VectorXd encode(std::string_view text) const = 0;
};

// Signed feature hashing over lowercase alphanumeric tokens, L2-normalized.
// Empty text encodes to the zero vector.
class HashingEncoder final : public SemanticEncoder {
 public:
  explicit HashingEncoder(int dim = 256);
  SemanticKind kind() const override { return SemanticKind::hashing_mock; }
  int dim() const override { return dim_; }
  VectorXd encode(std::string_view text) const override;

 private:
  int dim_;
};

// Precomputed vectors keyed by content_key(text), loaded from JSONL
// {"key":str,"vector":[float]}. Unknown text is a DataError.
class FileTableEncoder final : public SemanticEncoder {
 public:
  explicit FileTableEncoder(const std::filesystem::path& path);
  SemanticKind kind() const override { return SemanticKind::file_table; }
  int dim() const override { return dim_; }
  VectorXd encode(std::string_view text) const override;

 private:
  int dim_ = 0;
  std::unordered_map<std::string, VectorXd> table_;
};

// POST {base_url}/embeddings {"model":..., "input": text}; reads
// data[0].embedding.
class HttpEmbeddingEncoder final : public SemanticEncoder {
 public:
  HttpEmbeddingEncoder(std::string base_url, std::string model, int dim,
                       std::chrono::milliseconds timeout = std::chrono::seconds(30));
  SemanticKind kind() const override { return SemanticKind::http_endpoint; }
  int dim() const override { return dim_; }
  VectorXd encode(std::string_view text) const override;

 private:
  std::string base_url_, model_;
  int dim_;
  std::chrono::milliseconds timeout_;
};

// Writes a file table covering the given texts with another encoder's output.
void write_file_table(const SemanticEncoder& source,
                      const std::vector<std::string>& texts,
                      const std::filesystem::path& path);

double cosine_similarity(const VectorXd& a, const VectorXd& b);

const char* to_string(SemanticKind kind);

}  // namespace smtpo
