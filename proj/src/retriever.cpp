// SPDX-License-Identifier: Apache-2.0
#include "smtpo/retriever.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <spdlog/spdlog.h>

namespace smtpo {

namespace {

MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

Adapter init_adapter(int in, int out, std::mt19937_64& rng) {
  const int hidden = std::max(1, in / 2);
  return {gaussian(in, hidden, rng), VectorXd::Zero(hidden), gaussian(hidden, out, rng),
          VectorXd::Zero(out)};
}

AttentionWeights init_attention(int d, std::mt19937_64& rng) {
  AttentionWeights w;
  w.query = gaussian(d, d, rng);
  w.key = gaussian(d, d, rng);
  w.value = gaussian(d, d, rng);
  return w;
}

void check_adapter(const Adapter& a, const char* name, Eigen::Index in, Eigen::Index out) {
  const bool ok = a.w1.rows() == in && a.b1.size() == a.w1.cols() &&
                  a.w2.rows() == a.w1.cols() && a.w2.cols() == out && a.b2.size() == out;
  if (!ok) throw DataError(std::string("retriever params: inconsistent shapes in ") + name);
  if (!a.w1.allFinite() || !a.b1.allFinite() || !a.w2.allFinite() || !a.b2.allFinite())
    throw DataError(std::string("retriever params: non-finite entries in ") + name);
}

void check_attention(const AttentionWeights& w, const char* name, Eigen::Index d) {
  for (const MatrixXd* m : {&w.query, &w.key, &w.value}) {
    if (m->rows() != d || m->cols() != d)
      throw DataError(std::string("retriever params: ") + name + " must be " +
                      std::to_string(d) + "x" + std::to_string(d));
    if (!m->allFinite())
      throw DataError(std::string("retriever params: non-finite entries in ") + name);
  }
}

MatrixXd collab_rows(const CollabEmbeddings& collab, const std::vector<EntityId>& ids) {
  MatrixXd m(static_cast<Eigen::Index>(ids.size()), collab.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) m.row(i) = collab.vector(ids[i]).transpose();
  return m;
}

constexpr char kParamsMagic[8] = {'S', 'M', 'T', 'P', 'O', 'R', 'P', '1'};
constexpr char kIndexMagic[8] = {'S', 'M', 'T', 'P', 'O', 'I', 'X', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated " + what);
  return v;
}

void put_matrix(std::ostream& out, const MatrixXd& m) {
  put<std::int64_t>(out, m.rows());
  put<std::int64_t>(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}
MatrixXd get_matrix(std::istream& in, const std::string& what) {
  const auto rows = get<std::int64_t>(in, what);
  const auto cols = get<std::int64_t>(in, what);
  if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 28))
    throw DataError("implausible matrix shape in " + what);
  MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw DataError("truncated " + what);
  return m;
}
void put_adapter(std::ostream& out, const Adapter& a) {
  put_matrix(out, a.w1);
  put_matrix(out, a.b1);
  put_matrix(out, a.w2);
  put_matrix(out, a.b2);
}
Adapter get_adapter(std::istream& in, const std::string& what) {
  Adapter a;
  a.w1 = get_matrix(in, what);
  a.b1 = get_matrix(in, what);
  a.w2 = get_matrix(in, what);
  a.b2 = get_matrix(in, what);
  return a;
}

}  // namespace

void RetrieverParams::validate() const {
  const Eigen::Index ds = s2c.in_dim(), dc = s2c.out_dim();
  if (ds <= 0 || dc <= 0) throw DataError("retriever params: empty adapter");
  check_adapter(s2c, "adapter_s2c", ds, dc);
  check_adapter(c2s, "adapter_c2s", dc, ds);
  check_attention(attn_c, "attn_c", dc);
  check_attention(attn_s, "attn_s", ds);
}

RetrieverParams init_retriever_params(int dim_s, int dim_c, FusionMode mode,
                                      std::uint64_t seed) {
  if (dim_s <= 0 || dim_c <= 0) throw ConfigError("retriever dims must be positive");
  std::mt19937_64 rng(seed);
  RetrieverParams p;
  p.s2c = init_adapter(dim_s, dim_c, rng);
  p.c2s = init_adapter(dim_c, dim_s, rng);
  p.attn_c = init_attention(dim_c, rng);
  p.attn_s = init_attention(dim_s, rng);
  p.fusion_mode = mode;
  return p;
}

RetrieverParams zero_like(const RetrieverParams& p) {
  RetrieverParams z = p;
  for (Adapter* a : {&z.s2c, &z.c2s}) {
    a->w1.setZero();
    a->b1.setZero();
    a->w2.setZero();
    a->b2.setZero();
  }
  for (AttentionWeights* w : {&z.attn_c, &z.attn_s}) {
    w->query.setZero();
    w->key.setZero();
    w->value.setZero();
  }
  return z;
}

Attention cross_attend(const VectorXd& query, const MatrixXd& keys, const MatrixXd& values,
                       const AttentionWeights& w) {
  if (keys.rows() == 0) throw DataError("cross_attend: empty key sequence");
  if (keys.rows() != values.rows())
    throw DataError("cross_attend: key and value sequences differ in length");
  if (query.size() != w.query.rows() || keys.cols() != w.key.rows() ||
      values.cols() != w.value.rows())
    throw DataError("cross_attend: width mismatch with attention weights");
  const VectorXd q = w.query.transpose() * query;
  const MatrixXd k = keys * w.key;
  const MatrixXd v = values * w.value;
  VectorXd logits = k * q / std::sqrt(static_cast<double>(k.cols()));
  logits.array() -= logits.maxCoeff();
  VectorXd alpha = logits.array().exp();
  alpha /= alpha.sum();
  return {v.transpose() * alpha, std::move(alpha)};
}

std::string compose_query_text(const QueryContext& ctx) {
  return ctx.dialogue_text + " [FEEDBACK] " + ctx.feedback + " [PREFERENCE] " + ctx.preference;
}

std::vector<EntityId> collaborative_context(const QueryContext& ctx) {
  std::vector<EntityId> out;
  std::unordered_set<EntityId> seen;
  for (const auto* list : {&ctx.entity_ids, &ctx.prev_rec_ids})
    for (EntityId id : *list)
      if (seen.insert(id).second) out.push_back(id);
  return out;
}

VectorXd encode_query(const QueryContext& ctx, const SemanticEncoder& sem,
                      const CollabEmbeddings& collab, const RetrieverParams& params) {
  if (sem.dim() != params.dim_s() || collab.dim() != params.dim_c())
    throw DataError("encode_query: encoder widths do not match retriever params");
  const VectorXd es = sem.encode(compose_query_text(ctx));
  const auto ids = collaborative_context(ctx);
  const VectorXd pooled = collab_encode(collab, ids);

  VectorXd out(params.dim_c() + params.dim_s());
  if (ids.empty()) {
    out.head(params.dim_c()).setZero();
  } else {
    const MatrixXd keys = params.fusion_mode == FusionMode::sequence
                              ? collab_rows(collab, ids)
                              : MatrixXd(pooled.transpose());
    out.head(params.dim_c()) = cross_attend(adapt(es, params.s2c), keys, keys, params.attn_c).output;
  }
  const MatrixXd skeys = es.transpose();
  out.tail(params.dim_s()) = cross_attend(adapt(pooled, params.c2s), skeys, skeys, params.attn_s).output;
  return out;
}

VectorXd encode_item(const Item& item, const SemanticEncoder& sem,
                     const CollabEmbeddings& collab) {
  const std::string text =
      item.description.empty() ? item.title : item.title + " " + item.description;
  VectorXd out(collab.dim() + sem.dim());
  out.head(collab.dim()) = collab.vector(item.id);
  out.tail(sem.dim()) = sem.encode(text);
  return out;
}

double score_pair(const VectorXd& query, const VectorXd& item) {
  if (query.size() != item.size())
    throw DataError("score_pair: widths " + std::to_string(query.size()) + " and " +
                    std::to_string(item.size()) + " differ");
  return query.dot(item);
}

std::vector<ItemId> CandidateSet::ids() const {
  std::vector<ItemId> out;
  out.reserve(items.size());
  for (const auto& s : items) out.push_back(s.id);
  return out;
}

bool CandidateSet::contains(ItemId id) const {
  return std::any_of(items.begin(), items.end(), [&](const ScoredItem& s) { return s.id == id; });
}

ItemIndex::ItemIndex(const Corpus& corpus, const SemanticEncoder& sem,
                     const CollabEmbeddings& collab) {
  vectors_.resize(static_cast<Eigen::Index>(corpus.items().size()), collab.dim() + sem.dim());
  for (std::size_t i = 0; i < corpus.items().size(); ++i) {
    const Item& it = corpus.items()[i];
    ids_.push_back(it.id);
    vectors_.row(i) = encode_item(it, sem, collab).transpose();
    rows_.emplace(it.id, static_cast<Eigen::Index>(i));
  }
}

ItemIndex::ItemIndex(std::vector<ItemId> ids, MatrixXd vectors)
    : ids_(std::move(ids)), vectors_(std::move(vectors)) {
  if (static_cast<Eigen::Index>(ids_.size()) != vectors_.rows())
    throw DataError("item index: id count does not match vector rows");
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (!rows_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second)
      throw DataError("item index: duplicate item id " + std::to_string(ids_[i]));
}

Eigen::Index ItemIndex::row_of(ItemId id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) throw DataError("unknown item id " + std::to_string(id));
  return it->second;
}

void ItemIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kIndexMagic, sizeof(kIndexMagic));
  put(out, kFormatVersion);
  put<std::int64_t>(out, static_cast<std::int64_t>(ids_.size()));
  for (ItemId id : ids_) put<std::int64_t>(out, id);
  put_matrix(out, vectors_);
  if (!out) throw IoError("failed writing " + path.string());
}

ItemIndex ItemIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kIndexMagic))
    throw DataError(path.string() + " is not an item-embedding cache");
  const std::string what = "item cache " + path.string();
  if (get<std::uint32_t>(in, what) != kFormatVersion)
    throw DataError("unsupported item cache version in " + path.string());
  const auto n = get<std::int64_t>(in, what);
  if (n < 0) throw DataError("negative item count in " + path.string());
  std::vector<ItemId> ids(static_cast<std::size_t>(n));
  for (auto& id : ids) id = get<std::int64_t>(in, what);
  return ItemIndex(std::move(ids), get_matrix(in, what));
}

CandidateSet retrieve_topk(const VectorXd& query, const ItemIndex& index, std::size_t k,
                           std::span<const ItemId> exclude) {
  if (k == 0) throw ConfigError("retrieve_topk: k must be at least 1");
  if (query.size() != index.width())
    throw DataError("retrieve_topk: query width does not match item index");
  const VectorXd scores = index.vectors() * query;
  const auto& ids = index.ids();
  std::unordered_set<ItemId> skip(exclude.begin(), exclude.end());
  std::vector<Eigen::Index> order;
  order.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!skip.contains(ids[i])) order.push_back(static_cast<Eigen::Index>(i));
  if (k > order.size()) {
    spdlog::warn("retrieve_topk: k={} exceeds catalog size {}; returning all", k, order.size());
    k = order.size();
  }
  auto better = [&](Eigen::Index a, Eigen::Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    better);
  CandidateSet out;
  out.items.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.items.push_back({ids[order[i]], scores[order[i]]});
  return out;
}

CandidateSet RetrievalStack::retrieve(const QueryContext& ctx, const Dialogue& d,
                                      std::size_t k) const {
  const auto exclude = mentioned_items(d, *corpus);
  return retrieve_topk(encode_query(ctx, *sem, *collab, *params), *index, k, exclude);
}

std::vector<ItemId> sample_negatives(const Corpus& corpus, const Dialogue& dialogue,
                                     std::size_t n, std::mt19937_64& rng) {
  if (n == 0) return {};
  std::unordered_set<ItemId> excluded;
  excluded.insert(dialogue.target_item_id);
  for (ItemId id : mentioned_items(dialogue, corpus)) excluded.insert(id);
  std::vector<ItemId> pool;
  for (const Item& it : corpus.items())
    if (!excluded.contains(it.id)) pool.push_back(it.id);
  if (pool.size() < n)
    throw DataError("sample_negatives: need " + std::to_string(n) + " items but only " +
                    std::to_string(pool.size()) + " remain after exclusions (short by " +
                    std::to_string(n - pool.size()) + ")");
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  return pool;
}

QueryContext cold_start_context(const Dialogue& d) {
  QueryContext ctx;
  ctx.dialogue_text = dialogue_text(d);
  ctx.entity_ids = mentioned_entities(d);
  return ctx;
}

void save_retriever(const RetrieverParams& params, const std::filesystem::path& path) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kParamsMagic, sizeof(kParamsMagic));
  put(out, kFormatVersion);
  put<std::int32_t>(out, params.dim_s());
  put<std::int32_t>(out, params.dim_c());
  put<std::int32_t>(out, params.fusion_mode == FusionMode::sequence ? 1 : 0);
  put_adapter(out, params.s2c);
  put_adapter(out, params.c2s);
  for (const AttentionWeights* w : {&params.attn_c, &params.attn_s}) {
    put_matrix(out, w->query);
    put_matrix(out, w->key);
    put_matrix(out, w->value);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

RetrieverParams load_retriever(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kParamsMagic))
    throw DataError(path.string() + " is not a retriever params file");
  const std::string what = "retriever params " + path.string();
  if (get<std::uint32_t>(in, what) != kFormatVersion)
    throw DataError("unsupported retriever params version in " + path.string());
  const auto ds = get<std::int32_t>(in, what);
  const auto dc = get<std::int32_t>(in, what);
  RetrieverParams p;
  p.fusion_mode = get<std::int32_t>(in, what) ? FusionMode::sequence : FusionMode::pooled;
  p.s2c = get_adapter(in, what);
  p.c2s = get_adapter(in, what);
  for (AttentionWeights* w : {&p.attn_c, &p.attn_s}) {
    w->query = get_matrix(in, what);
    w->key = get_matrix(in, what);
    w->value = get_matrix(in, what);
  }
  p.validate();
  if (p.dim_s() != ds || p.dim_c() != dc)
    throw DataError("retriever params header disagrees with stored shapes in " + path.string());
  return p;
}

const char* to_string(FusionMode mode) {
  return mode == FusionMode::sequence ? "sequence" : "pooled";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "sequence") return FusionMode::sequence;
  if (s == "pooled") return FusionMode::pooled;
  throw ConfigError("unknown fusion_mode '" + s + "' (expected sequence or pooled)");
}

}  // namespace smtpo
