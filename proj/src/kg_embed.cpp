// SPDX-License-Identifier: Apache-2.0
#include "smtpo/kg_embed.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "json.hpp"

namespace smtpo {

void BprConfig::validate() const {
  if (dim <= 0) throw ConfigError("bpr.dim must be positive");
  if (n_layers < 0) throw ConfigError("bpr.n_layers must be non-negative");
  if (learning_rate < 0) throw ConfigError("bpr.learning_rate must be non-negative");
  if (n_epochs < 0) throw ConfigError("bpr.n_epochs must be non-negative");
  if (negatives_per_positive <= 0)
    throw ConfigError("bpr.negatives_per_positive must be positive");
  if (batch_size <= 0) throw ConfigError("bpr.batch_size must be positive");
}

CollabEmbeddings::CollabEmbeddings(std::vector<EntityId> ids, MatrixXd table,
                                   int n_layers)
    : ids_(std::move(ids)), table_(std::move(table)), n_layers_(n_layers) {
  if (static_cast<Eigen::Index>(ids_.size()) != table_.rows())
    throw DataError("embedding table rows do not match id count");
  if (!table_.allFinite()) throw NumericalError("embedding table has non-finite entries");
  table_t_ = table_.transpose();
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (!index_.emplace(ids_[i], i).second)
      throw DataError("duplicate entity id " + std::to_string(ids_[i]) +
                      " in embedding table");
}

Eigen::Ref<const VectorXd> CollabEmbeddings::vector(EntityId id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw DataError("no collaborative embedding for entity " + std::to_string(id));
  return table_t_.col(static_cast<Eigen::Index>(it->second));
}

MatrixXd propagate_layers(const MatrixXd& base, const KnowledgeGraph& kg,
                          int n_layers) {
  const auto n = static_cast<Eigen::Index>(kg.node_count());
  if (base.rows() != n) throw DataError("base table does not cover all kg nodes");
  std::vector<double> inv_sqrt_deg(n);
  for (Eigen::Index v = 0; v < n; ++v) {
    auto deg = kg.neighbors(static_cast<int>(v)).size();
    inv_sqrt_deg[v] = deg ? 1.0 / std::sqrt(static_cast<double>(deg)) : 0.0;
  }
  MatrixXd sum = base;
  MatrixXd layer = base;
  MatrixXd next(base.rows(), base.cols());
  for (int l = 0; l < n_layers; ++l) {
    for (Eigen::Index v = 0; v < n; ++v) {
      const auto& nbrs = kg.neighbors(static_cast<int>(v));
      if (nbrs.empty()) {
        next.row(v) = layer.row(v);
        continue;
      }
      next.row(v).setZero();
      for (int u : nbrs) next.row(v) += inv_sqrt_deg[u] * layer.row(u);
      next.row(v) *= inv_sqrt_deg[v];
    }
    layer.swap(next);
    sum += layer;
  }
  return sum / static_cast<double>(n_layers + 1);
}

namespace {

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  MatrixXd m, v;
  long t = 0;

  Adam(double lr_, Eigen::Index rows, Eigen::Index cols)
      : lr(lr_), m(MatrixXd::Zero(rows, cols)), v(MatrixXd::Zero(rows, cols)) {}

  void step(MatrixXd& param, const MatrixXd& grad) {
    ++t;
    m = beta1 * m + (1 - beta1) * grad;
    v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1 - std::pow(beta1, t), c2 = 1 - std::pow(beta2, t);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

CollabEmbeddings pretrain_collab(const KnowledgeGraph& kg, const BprConfig& config,
                                 BprTrainLog* log) {
  config.validate();
  if (kg.node_count() == 0 || kg.empty())
    throw DataError("cannot pretrain collaborative embeddings on an empty graph");

  const auto n = static_cast<Eigen::Index>(kg.node_count());
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, config.init_scale);
  MatrixXd base(n, config.dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < config.dim; ++j) base(i, j) = gauss(rng);

  // Per-item sorted list of linked attribute rows, for negative sampling.
  std::vector<int> attr_rows;
  for (Eigen::Index v = 0; v < n; ++v)
    if (!kg.is_item(static_cast<int>(v))) attr_rows.push_back(static_cast<int>(v));
  std::vector<std::pair<int, int>> positives;
  for (const auto& e : kg.edges())
    positives.emplace_back(kg.index_of(e.item_id), kg.index_of(e.attribute_id));

  auto linked = [&](int item_row, int attr_row) {
    const auto& nb = kg.neighbors(item_row);
    return std::find(nb.begin(), nb.end(), attr_row) != nb.end();
  };

  Adam adam(config.learning_rate, n, config.dim);
  std::uniform_int_distribution<std::size_t> pick_attr(0, attr_rows.size() - 1);
  struct Triple { int item, pos, neg; };

  for (int epoch = 0; epoch < config.n_epochs; ++epoch) {
    std::shuffle(positives.begin(), positives.end(), rng);
    std::vector<Triple> triples;
    for (const auto& [item, pos] : positives) {
      for (int k = 0; k < config.negatives_per_positive; ++k) {
        if (kg.neighbors(item).size() >= attr_rows.size()) break;
        int neg;
        do {
          neg = attr_rows[pick_attr(rng)];
        } while (linked(item, neg));
        triples.push_back({item, pos, neg});
      }
    }
    if (triples.empty()) break;

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < triples.size(); start += config.batch_size) {
      const std::size_t end = std::min(triples.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      const MatrixXd prop = propagate_layers(base, kg, config.n_layers);
      MatrixXd grad_prop = MatrixXd::Zero(n, config.dim);
      for (std::size_t t = start; t < end; ++t) {
        const auto& tr = triples[t];
        const double diff = prop.row(tr.item).dot(prop.row(tr.pos)) -
                            prop.row(tr.item).dot(prop.row(tr.neg));
        loss_sum += bpr_loss(diff, 0.0);
        // d/d diff of -ln sigmoid(diff)
        const double g = -sigmoid(-diff) * scale;
        grad_prop.row(tr.item) += g * (prop.row(tr.pos) - prop.row(tr.neg));
        grad_prop.row(tr.pos) += g * prop.row(tr.item);
        grad_prop.row(tr.neg) -= g * prop.row(tr.item);
      }
      // Propagation is a symmetric linear operator, so it is its own adjoint.
      MatrixXd grad = propagate_layers(grad_prop, kg, config.n_layers);
      grad += config.weight_decay * base;
      adam.step(base, grad);
    }
    const double mean_loss = loss_sum / static_cast<double>(triples.size());
    if (log) log->epoch_loss.push_back(mean_loss);
    spdlog::debug("bpr epoch {} loss {:.6f}", epoch, mean_loss);
  }

  return CollabEmbeddings(kg.nodes(), propagate_layers(base, kg, config.n_layers),
                          config.n_layers);
}

VectorXd collab_encode(const CollabEmbeddings& emb, std::span<const EntityId> ids) {
  VectorXd out = VectorXd::Zero(emb.dim());
  if (ids.empty()) return out;
  for (EntityId id : ids) out += emb.vector(id);
  return out / static_cast<double>(ids.size());
}

std::optional<double> edge_auc(const CollabEmbeddings& emb,
                               const std::vector<KgEdge>& positives,
                               const std::vector<KgEdge>& negatives) {
  if (positives.empty() || negatives.empty()) return std::nullopt;
  auto score = [&](const KgEdge& e) {
    return emb.vector(e.item_id).dot(emb.vector(e.attribute_id));
  };
  std::vector<double> neg;
  for (const auto& e : negatives) neg.push_back(score(e));
  std::sort(neg.begin(), neg.end());
  double correct = 0.0;
  for (const auto& e : positives) {
    const double s = score(e);
    auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    auto hi = std::upper_bound(neg.begin(), neg.end(), s);
    correct += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return correct / (static_cast<double>(positives.size()) * static_cast<double>(neg.size()));
}

EdgeHoldout hold_out_edges(const KnowledgeGraph& kg, double fraction,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<KgEdge> edges = kg.edges();
  std::shuffle(edges.begin(), edges.end(), rng);
  const auto target = static_cast<std::size_t>(fraction * static_cast<double>(edges.size()));
  std::unordered_map<EntityId, std::size_t> remaining;
  for (const auto& e : edges) ++remaining[e.item_id];

  EdgeHoldout out;
  std::vector<KgEdge> kept;
  for (const auto& e : edges) {
    if (out.held_out.size() < target && remaining[e.item_id] > 1) {
      out.held_out.push_back(e);
      --remaining[e.item_id];
    } else {
      kept.push_back(e);
    }
  }
  std::sort(kept.begin(), kept.end());
  out.train_graph = KnowledgeGraph(kg.nodes(), kept, kg.item_count());

  std::vector<EntityId> attrs(kg.nodes().begin() + static_cast<long>(kg.item_count()),
                              kg.nodes().end());
  if (!attrs.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, attrs.size() - 1);
    for (const auto& e : out.held_out) {
      const auto& nb = kg.neighbors(kg.index_of(e.item_id));
      if (nb.size() >= attrs.size()) continue;
      EntityId a;
      do {
        a = attrs[pick(rng)];
      } while (std::find(nb.begin(), nb.end(), kg.index_of(a)) != nb.end());
      out.negatives.push_back({e.item_id, a});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kBinaryMagic[8] = {'S', 'M', 'T', 'P', 'O', 'C', 'E', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated embedding file");
  return v;
}

}  // namespace

void save_collab(const CollabEmbeddings& emb, const std::filesystem::path& path,
                 EmbeddingFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (format == EmbeddingFormat::binary) {
    out.write(kBinaryMagic, sizeof(kBinaryMagic));
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(emb.dim()));
    put(out, static_cast<std::uint32_t>(emb.n_layers()));
    put(out, static_cast<std::uint64_t>(emb.size()));
    for (std::size_t i = 0; i < emb.size(); ++i) {
      put(out, static_cast<std::int64_t>(emb.ids()[i]));
      const VectorXd v = emb.row(i);
      out.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(sizeof(double) * v.size()));
    }
    return;
  }
  nlohmann::ordered_json header{{"format", "smtpo-collab-jsonl"},
                                {"version", kVersion},
                                {"dim", emb.dim()},
                                {"n_layers", emb.n_layers()}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < emb.size(); ++i) {
    const VectorXd v = emb.row(i);
    out << nlohmann::ordered_json{{"entity_id", emb.ids()[i]},
                                  {"vector", std::vector<double>(v.data(), v.data() + v.size())}}
               .dump()
        << '\n';
  }
}

CollabEmbeddings load_collab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (in && std::memcmp(magic, kBinaryMagic, sizeof(magic)) == 0) {
    if (get<std::uint32_t>(in) != kVersion)
      throw DataError("unsupported embedding file version in " + path.string());
    const auto dim = get<std::uint32_t>(in);
    const auto layers = get<std::uint32_t>(in);
    const auto count = get<std::uint64_t>(in);
    std::vector<EntityId> ids(count);
    MatrixXd table(static_cast<Eigen::Index>(count), dim);
    VectorXd row(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
      ids[i] = get<std::int64_t>(in);
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(sizeof(double) * dim));
      if (!in) throw DataError("truncated embedding file " + path.string());
      table.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return CollabEmbeddings(std::move(ids), std::move(table), static_cast<int>(layers));
  }

  in.clear();
  in.seekg(0);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty embedding file " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw DataError("unrecognized embedding file header in " + path.string());
  }
  if (header.value("format", "") != "smtpo-collab-jsonl")
    throw DataError("unrecognized embedding file header in " + path.string());
  const int dim = header.at("dim").get<int>();
  std::vector<EntityId> ids;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ids.push_back(j.at("entity_id").get<EntityId>());
      rows.push_back(j.at("vector").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": malformed record: " + e.what());
    }
    if (static_cast<int>(rows.back().size()) != dim)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": vector width does not match header dim");
  }
  MatrixXd table(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    table.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const VectorXd>(rows[i].data(), dim).transpose();
  return CollabEmbeddings(std::move(ids), std::move(table),
                          header.value("n_layers", 0));
}

}  // namespace smtpo
