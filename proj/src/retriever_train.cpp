// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "smtpo/retriever.hpp"

namespace smtpo {

namespace {

struct AdapterCache {
  VectorXd input, hidden;
};

struct AttnCache {
  VectorXd query_in;
  MatrixXd keys;  // keys double as values on both sides
  VectorXd q;
  MatrixXd k, v;
  VectorXd alpha;
};

VectorXd adapter_fwd(const Adapter& a, const VectorXd& x, AdapterCache& c) {
  c.input = x;
  c.hidden = a.w1.transpose() * x + a.b1;
  return a.w2.transpose() * c.hidden + a.b2;
}

void adapter_bwd(const Adapter& a, const AdapterCache& c, const VectorXd& g_out, Adapter& g) {
  g.b2 += g_out;
  g.w2.noalias() += c.hidden * g_out.transpose();
  const VectorXd g_hidden = a.w2 * g_out;
  g.b1 += g_hidden;
  g.w1.noalias() += c.input * g_hidden.transpose();
}

VectorXd attend_fwd(const AttentionWeights& w, const VectorXd& query_in, const MatrixXd& keys,
                    AttnCache& c) {
  c.query_in = query_in;
  c.keys = keys;
  c.q = w.query.transpose() * query_in;
  c.k = keys * w.key;
  c.v = keys * w.value;
  VectorXd logits = c.k * c.q / std::sqrt(static_cast<double>(c.k.cols()));
  logits.array() -= logits.maxCoeff();
  c.alpha = logits.array().exp();
  c.alpha /= c.alpha.sum();
  return c.v.transpose() * c.alpha;
}

// Accumulates weight gradients; returns the gradient w.r.t. query_in.
VectorXd attend_bwd(const AttentionWeights& w, const AttnCache& c, const VectorXd& g_out,
                    AttentionWeights& g) {
  g.value.noalias() += c.keys.transpose() * (c.alpha * g_out.transpose());
  const VectorXd g_alpha = c.v * g_out;
  const VectorXd g_logit = (c.alpha.array() * (g_alpha.array() - c.alpha.dot(g_alpha))).matrix();
  if (g_logit.cwiseAbs().maxCoeff() == 0.0) return VectorXd::Zero(c.query_in.size());
  const double s = 1.0 / std::sqrt(static_cast<double>(c.k.cols()));
  const VectorXd g_q = c.k.transpose() * g_logit * s;
  g.key.noalias() += c.keys.transpose() * (g_logit * c.q.transpose() * s);
  g.query.noalias() += c.query_in * g_q.transpose();
  return w.query * g_q;
}

std::vector<std::pair<double*, Eigen::Index>> tensors(RetrieverParams& p) {
  std::vector<std::pair<double*, Eigen::Index>> out;
  for (Adapter* a : {&p.s2c, &p.c2s}) {
    out.emplace_back(a->w1.data(), a->w1.size());
    out.emplace_back(a->b1.data(), a->b1.size());
    out.emplace_back(a->w2.data(), a->w2.size());
    out.emplace_back(a->b2.data(), a->b2.size());
  }
  for (AttentionWeights* w : {&p.attn_c, &p.attn_s}) {
    out.emplace_back(w->query.data(), w->query.size());
    out.emplace_back(w->key.data(), w->key.size());
    out.emplace_back(w->value.data(), w->value.size());
  }
  return out;
}

class Adam {
 public:
  Adam(Eigen::Index n, double lr) : m_(VectorXd::Zero(n)), v_(VectorXd::Zero(n)), lr_(lr) {}

  void step(RetrieverParams& params, RetrieverParams& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
    auto pt = tensors(params);
    auto gt = tensors(grad);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < pt.size(); ++i) {
      const Eigen::Index n = pt[i].second;
      Eigen::Map<VectorXd> x(pt[i].first, n);
      Eigen::Map<const VectorXd> g(gt[i].first, n);
      auto m = m_.segment(off, n);
      auto v = v_.segment(off, n);
      m = kBeta1 * m + (1 - kBeta1) * g;
      v = kBeta2 * v + (1 - kBeta2) * g.cwiseAbs2();
      x.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
      off += n;
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  VectorXd m_, v_;
  double lr_;
  int t_ = 0;
};

Eigen::Index total_size(RetrieverParams& p) {
  Eigen::Index n = 0;
  for (auto& [ptr, size] : tensors(p)) n += size;
  return n;
}

}  // namespace

void RetrieverTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("retriever.epochs must be >= 0");
  if (learning_rate < 0) throw ConfigError("retriever.learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("retriever.batch_size must be >= 1");
  if (negatives < 1) throw ConfigError("retriever.negatives must be >= 1");
  if (!(temperature > 0)) throw ConfigError("retriever.temperature must be > 0");
  if (patience < 1) throw ConfigError("retriever.patience must be >= 1");
  if (eval_k < 1) throw ConfigError("retriever.eval_k must be >= 1");
}

double retriever_loss_and_grad(const RetrieverExample& ex, const SemanticEncoder& sem,
                               const CollabEmbeddings& collab, const ItemIndex& index,
                               const RetrieverParams& params, double temperature,
                               RetrieverParams* grad) {
  const int dc = params.dim_c(), ds = params.dim_s();
  const VectorXd es = sem.encode(compose_query_text(ex.context));
  const auto ids = collaborative_context(ex.context);
  const VectorXd pooled = collab_encode(collab, ids);

  AdapterCache s2c_cache, c2s_cache;
  AttnCache c_cache, s_cache;
  VectorXd query(dc + ds);
  const bool has_collab = !ids.empty();
  if (has_collab) {
    MatrixXd keys;
    if (params.fusion_mode == FusionMode::sequence) {
      keys.resize(static_cast<Eigen::Index>(ids.size()), dc);
      for (std::size_t i = 0; i < ids.size(); ++i) keys.row(i) = collab.vector(ids[i]).transpose();
    } else {
      keys = pooled.transpose();
    }
    query.head(dc) = attend_fwd(params.attn_c, adapter_fwd(params.s2c, es, s2c_cache), keys, c_cache);
  } else {
    query.head(dc).setZero();
  }
  query.tail(ds) =
      attend_fwd(params.attn_s, adapter_fwd(params.c2s, pooled, c2s_cache), es.transpose(), s_cache);

  const Eigen::Index n = static_cast<Eigen::Index>(ex.negatives.size()) + 1;
  MatrixXd cand(n, index.width());
  cand.row(0) = index.vectors().row(index.row_of(ex.target));
  for (Eigen::Index j = 1; j < n; ++j)
    cand.row(j) = index.vectors().row(index.row_of(ex.negatives[j - 1]));
  const VectorXd logits = cand * query / temperature;
  const double m = logits.maxCoeff();
  VectorXd p = (logits.array() - m).exp();
  const double z = p.sum();
  p /= z;
  const double loss = -(logits[0] - m) + std::log(z);
  if (!std::isfinite(loss)) throw NumericalError("retriever loss is not finite");
  if (!grad) return loss;

  VectorXd g_logit = p;
  g_logit[0] -= 1.0;
  const VectorXd g_query = cand.transpose() * g_logit / temperature;
  if (has_collab) {
    const VectorXd g_in = attend_bwd(params.attn_c, c_cache, g_query.head(dc), grad->attn_c);
    adapter_bwd(params.s2c, s2c_cache, g_in, grad->s2c);
  }
  const VectorXd g_in = attend_bwd(params.attn_s, s_cache, g_query.tail(ds), grad->attn_s);
  adapter_bwd(params.c2s, c2s_cache, g_in, grad->c2s);
  return loss;
}

RetrievalQuality evaluate_retriever(const std::vector<const Dialogue*>& dialogues,
                                    const Corpus& corpus, const SemanticEncoder& sem,
                                    const CollabEmbeddings& collab,
                                    const RetrieverParams& params, const ItemIndex& index,
                                    const ContextSource& source, std::size_t k,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RetrievalQuality q;
  for (const Dialogue* d : dialogues) {
    const QueryContext ctx = source(*d, rng);
    const auto exclude = mentioned_items(*d, corpus);
    const auto cands = retrieve_topk(encode_query(ctx, sem, collab, params), index, k, exclude);
    for (std::size_t p = 0; p < cands.size(); ++p)
      if (cands.items[p].id == d->target_item_id) {
        q.recall += 1.0;
        q.ndcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
        break;
      }
    ++q.n;
  }
  if (q.n) {
    q.recall /= static_cast<double>(q.n);
    q.ndcg /= static_cast<double>(q.n);
  }
  return q;
}

RetrieverParams train_retriever(const Corpus& corpus, const SemanticEncoder& sem,
                                const CollabEmbeddings& collab,
                                const RetrieverTrainConfig& config,
                                const ContextSource& source, RetrieverTrainLog* log) {
  config.validate();
  const auto train = corpus.dialogues_in(Split::train);
  const auto valid = corpus.dialogues_in(Split::valid);
  if (train.empty()) throw DataError("train_retriever: train split is empty");

  RetrieverParams params =
      init_retriever_params(sem.dim(), collab.dim(), config.fusion_mode, config.seed);
  if (config.epochs == 0) return params;

  const ItemIndex index(corpus, sem, collab);
  std::mt19937_64 rng(config.seed ^ 0x5eedf00dULL);
  Adam adam(total_size(params), config.learning_rate);
  RetrieverParams best = params;
  double best_recall = -1.0;
  int stale = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      RetrieverParams grad = zero_like(params);
      for (std::size_t b = start; b < end; ++b) {
        const Dialogue& d = *train[order[b]];
        RetrieverExample ex;
        ex.context = source(d, rng);
        ex.target = d.target_item_id;
        ex.negatives = sample_negatives(corpus, d, static_cast<std::size_t>(config.negatives), rng);
        epoch_loss += retriever_loss_and_grad(ex, sem, collab, index, params, config.temperature, &grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& [ptr, n] : tensors(grad)) Eigen::Map<VectorXd>(ptr, n) *= scale;
      adam.step(params, grad);
    }
    epoch_loss /= static_cast<double>(train.size());
    if (log) log->epoch_loss.push_back(epoch_loss);

    if (valid.empty()) {
      best = params;
      spdlog::info("retriever epoch {} loss {:.4f}", epoch + 1, epoch_loss);
      continue;
    }
    const auto quality = evaluate_retriever(valid, corpus, sem, collab, params, index, source,
                                            static_cast<std::size_t>(config.eval_k),
                                            config.seed + 1);
    if (log) log->valid_recall.push_back(quality.recall);
    spdlog::info("retriever epoch {} loss {:.4f} valid R@{} {:.4f}", epoch + 1, epoch_loss,
                 config.eval_k, quality.recall);
    if (quality.recall > best_recall) {
      best_recall = quality.recall;
      best = params;
      stale = 0;
      if (log) log->best_epoch = epoch;
    } else if (++stale >= config.patience) {
      spdlog::info("retriever early stop after epoch {}", epoch + 1);
      break;
    }
  }
  return best;
}

}  // namespace smtpo
