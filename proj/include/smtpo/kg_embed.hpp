// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "smtpo/corpus.hpp"
#include "smtpo/types.hpp"

namespace smtpo {

struct BprConfig {
  int dim = 128;
  int n_layers = 2;
  double learning_rate = 0.01;  // Adam step size
  int n_epochs = 60;
  int negatives_per_positive = 1;
  int batch_size = 512;
  double weight_decay = 1e-4;
  std::uint64_t seed = 7;
  double init_scale = 0.1;

  void validate() const;
};

// Frozen entity table with propagation baked in; rows follow kg node order.
class CollabEmbeddings {
 public:
  CollabEmbeddings() = default;
  CollabEmbeddings(std::vector<EntityId> ids, MatrixXd table, int n_layers);

  int dim() const { return static_cast<int>(table_.cols()); }
  int n_layers() const { return n_layers_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<EntityId>& ids() const { return ids_; }
  const MatrixXd& table() const { return table_; }

  bool contains(EntityId id) const { return index_.contains(id); }
  // Throws DataError for unseen entities.
  Eigen::Ref<const VectorXd> vector(EntityId id) const;
  Eigen::Ref<const VectorXd> row(std::size_t i) const { return table_.row(i).transpose(); }

  bool operator==(const CollabEmbeddings& o) const {
    return ids_ == o.ids_ && n_layers_ == o.n_layers_ && table_ == o.table_;
  }

 private:
  std::vector<EntityId> ids_;
  MatrixXd table_;
  MatrixXd table_t_;  // column-major transpose so vector() is a contiguous view
  int n_layers_ = 0;
  std::unordered_map<EntityId, std::size_t> index_;
};

// Mean over layers 0..n_layers of symmetric-normalized neighbor sums. Rows of
// `base` follow kg node order. Isolated nodes keep their base row.
MatrixXd propagate_layers(const MatrixXd& base, const KnowledgeGraph& kg,
                          int n_layers);

// -ln sigmoid(pos - neg), written as softplus(neg - pos).
template <typename Scalar>
Scalar bpr_loss(Scalar pos_score, Scalar neg_score) {
  using std::exp;
  using std::log1p;
  const Scalar x = neg_score - pos_score;
  return x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x));
}

struct BprTrainLog {
  std::vector<double> epoch_loss;
};

// BPR over (item, linked attribute, unlinked attribute) triples scored by the
// inner product of propagated vectors. Deterministic given config.seed.
CollabEmbeddings pretrain_collab(const KnowledgeGraph& kg, const BprConfig& config,
                                 BprTrainLog* log = nullptr);

// Mean of entity vectors; zero vector for an empty list.
VectorXd collab_encode(const CollabEmbeddings& emb, std::span<const EntityId> ids);

// Fraction of (held-out edge, sampled non-edge) pairs ranked correctly, ties
// counted half. Empty when either side is empty.
std::optional<double> edge_auc(const CollabEmbeddings& emb,
                               const std::vector<KgEdge>& positives,
                               const std::vector<KgEdge>& negatives);

struct EdgeHoldout {
  KnowledgeGraph train_graph;
  std::vector<KgEdge> held_out;
  std::vector<KgEdge> negatives;  // one unlinked (item, attribute) per held-out edge
};

// Removes a seeded fraction of edges (keeping every item with >= 1 edge) and
// samples matching non-edges from the full graph.
EdgeHoldout hold_out_edges(const KnowledgeGraph& kg, double fraction,
                           std::uint64_t seed);

enum class EmbeddingFormat { binary, jsonl };

void save_collab(const CollabEmbeddings& emb, const std::filesystem::path& path,
                 EmbeddingFormat format = EmbeddingFormat::binary);
// Detects the format from the header.
CollabEmbeddings load_collab(const std::filesystem::path& path);

}  // namespace smtpo
