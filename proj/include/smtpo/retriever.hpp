// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "smtpo/corpus.hpp"
#include "smtpo/kg_embed.hpp"
#include "smtpo/semantic.hpp"
#include "smtpo/types.hpp"

namespace smtpo {

enum class FusionMode { pooled, sequence };

// Two-layer linear map, row-vector convention: (v W1 + b1) W2 + b2.
struct Adapter {
  MatrixXd w1;  // in x hidden
  VectorXd b1;  // hidden
  MatrixXd w2;  // hidden x out
  VectorXd b2;  // out

  Eigen::Index in_dim() const { return w1.rows(); }
  Eigen::Index out_dim() const { return w2.cols(); }
  bool operator==(const Adapter& o) const {
    return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
  }
};

// Single-head projections, each d x d, applied as x W.
struct AttentionWeights {
  MatrixXd query, key, value;

  Eigen::Index dim() const { return key.cols(); }
  bool operator==(const AttentionWeights& o) const {
    return query == o.query && key == o.key && value == o.value;
  }
};

struct RetrieverParams {
  Adapter s2c;  // semantic -> collaborative, dim_s -> dim_s/2 -> dim_c
  Adapter c2s;  // collaborative -> semantic, dim_c -> dim_c/2 -> dim_s
  AttentionWeights attn_c;
  AttentionWeights attn_s;
  FusionMode fusion_mode = FusionMode::sequence;

  int dim_s() const { return static_cast<int>(s2c.in_dim()); }
  int dim_c() const { return static_cast<int>(s2c.out_dim()); }
  // Throws DataError on inconsistent shapes or non-finite entries.
  void validate() const;
  bool operator==(const RetrieverParams& o) const {
    return s2c == o.s2c && c2s == o.c2s && attn_c == o.attn_c &&
           attn_s == o.attn_s && fusion_mode == o.fusion_mode;
  }
};

// Gaussian weights with std 1/sqrt(fan_in), zero biases.
RetrieverParams init_retriever_params(int dim_s, int dim_c, FusionMode mode,
                                      std::uint64_t seed);
RetrieverParams zero_like(const RetrieverParams& p);

template <typename Derived>
VectorXd adapt(const Eigen::MatrixBase<Derived>& v, const Adapter& a) {
  if (v.size() != a.in_dim())
    throw DataError("adapter input width " + std::to_string(v.size()) +
                    " does not match " + std::to_string(a.in_dim()));
  VectorXd hidden = a.w1.transpose() * v + a.b1;
  return a.w2.transpose() * hidden + a.b2;
}

struct Attention {
  VectorXd output;
  VectorXd weights;  // softmax over keys
};

// Keys and values are rows. Scores q W^Q . k_j W^K / sqrt(key width).
Attention cross_attend(const VectorXd& query, const MatrixXd& keys,
                       const MatrixXd& values, const AttentionWeights& w);

struct QueryContext {
  std::string dialogue_text;
  std::string feedback;
  std::string preference;
  std::vector<EntityId> entity_ids;
  std::vector<ItemId> prev_rec_ids;
};

// dialogue [FEEDBACK] feedback [PREFERENCE] preference
std::string compose_query_text(const QueryContext& ctx);

// Collaborative key set: entity_ids then prev_rec_ids, deduplicated.
std::vector<EntityId> collaborative_context(const QueryContext& ctx);

// [fused collaborative | fused semantic], width dim_c + dim_s.
VectorXd encode_query(const QueryContext& ctx, const SemanticEncoder& sem,
                      const CollabEmbeddings& collab, const RetrieverParams& params);

// [collab vector | E_T(title + description)], no fusion.
VectorXd encode_item(const Item& item, const SemanticEncoder& sem,
                     const CollabEmbeddings& collab);

double score_pair(const VectorXd& query, const VectorXd& item);

struct ScoredItem {
  ItemId id = 0;
  double score = 0.0;
};

struct CandidateSet {
  std::vector<ScoredItem> items;  // scores non-increasing, ids distinct

  std::vector<ItemId> ids() const;
  bool contains(ItemId id) const;
  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

// Cached catalog encodings, one row per item in corpus order.
class ItemIndex {
 public:
  ItemIndex() = default;
  ItemIndex(const Corpus& corpus, const SemanticEncoder& sem,
            const CollabEmbeddings& collab);
  ItemIndex(std::vector<ItemId> ids, MatrixXd vectors);

  const std::vector<ItemId>& ids() const { return ids_; }
  const MatrixXd& vectors() const { return vectors_; }
  Eigen::Index width() const { return vectors_.cols(); }
  Eigen::Index row_of(ItemId id) const;

  void save(const std::filesystem::path& path) const;
  static ItemIndex load(const std::filesystem::path& path);

 private:
  std::vector<ItemId> ids_;
  MatrixXd vectors_;
  std::unordered_map<ItemId, Eigen::Index> rows_;
};

// Highest scores first, ties by ascending id. k beyond the catalog returns
// the whole catalog and warns.
CandidateSet retrieve_topk(const VectorXd& query, const ItemIndex& index,
                           std::size_t k, std::span<const ItemId> exclude = {});

// Everything needed to answer a query; all members are borrowed.
struct RetrievalStack {
  const Corpus* corpus = nullptr;
  const SemanticEncoder* sem = nullptr;
  const CollabEmbeddings* collab = nullptr;
  const RetrieverParams* params = nullptr;
  const ItemIndex* index = nullptr;

  // Top-k for the dialogue, never returning its mentioned items.
  CandidateSet retrieve(const QueryContext& ctx, const Dialogue& d, std::size_t k) const;
};

// -ln softmax_0 over [pos, negs...] / temperature, max-subtracted.
template <typename Scalar>
Scalar infonce_loss(Scalar pos_score, std::span<const Scalar> neg_scores,
                    Scalar temperature = Scalar(1)) {
  using std::exp;
  using std::log;
  Scalar m = pos_score / temperature;
  for (Scalar s : neg_scores) m = std::max(m, s / temperature);
  Scalar sum = exp(pos_score / temperature - m);
  for (Scalar s : neg_scores) sum += exp(s / temperature - m);
  return -(pos_score / temperature - m) + log(sum);
}

// n distinct items, excluding the target and mentioned items.
std::vector<ItemId> sample_negatives(const Corpus& corpus, const Dialogue& dialogue,
                                     std::size_t n, std::mt19937_64& rng);

// Builds a training or evaluation context for a dialogue. Implementations
// supply feedback and preference text (agent backend or templates).
using ContextSource =
    std::function<QueryContext(const Dialogue&, std::mt19937_64&)>;

// Cold-start context: dialogue text and mentioned entities only.
QueryContext cold_start_context(const Dialogue& d);

struct RetrieverTrainConfig {
  int epochs = 50;
  double learning_rate = 5e-3;  // Adam
  int batch_size = 32;
  int negatives = 32;
  double temperature = 1.0;
  int patience = 4;
  int eval_k = 20;
  FusionMode fusion_mode = FusionMode::sequence;
  std::uint64_t seed = 7;

  void validate() const;
};

struct RetrieverTrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> valid_recall;
  int best_epoch = -1;
};

struct RetrievalQuality {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t n = 0;
};

// Recall@k / NDCG@k of the target over contexts drawn from `source` with a
// fixed seed. Mentioned items are excluded from retrieval.
RetrievalQuality evaluate_retriever(const std::vector<const Dialogue*>& dialogues,
                                    const Corpus& corpus, const SemanticEncoder& sem,
                                    const CollabEmbeddings& collab,
                                    const RetrieverParams& params, const ItemIndex& index,
                                    const ContextSource& source, std::size_t k,
                                    std::uint64_t seed);

// InfoNCE over (query, target, sampled negatives); only RetrieverParams move.
// Early stopping keeps the parameters with the best validation Recall@eval_k.
RetrieverParams train_retriever(const Corpus& corpus, const SemanticEncoder& sem,
                                const CollabEmbeddings& collab,
                                const RetrieverTrainConfig& config,
                                const ContextSource& source,
                                RetrieverTrainLog* log = nullptr);

// Loss and gradient for one example; exposed for gradient checks.
struct RetrieverExample {
  QueryContext context;
  ItemId target = 0;
  std::vector<ItemId> negatives;
};
double retriever_loss_and_grad(const RetrieverExample& ex, const SemanticEncoder& sem,
                               const CollabEmbeddings& collab, const ItemIndex& index,
                               const RetrieverParams& params, double temperature,
                               RetrieverParams* grad);

void save_retriever(const RetrieverParams& params, const std::filesystem::path& path);
RetrieverParams load_retriever(const std::filesystem::path& path);

const char* to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& s);

}  // namespace smtpo
