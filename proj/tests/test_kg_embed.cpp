// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "smtpo/kg_embed.hpp"

using namespace smtpo;
using doctest::Approx;

namespace {

KnowledgeGraph pair_graph() { return KnowledgeGraph({1, 2}, {{1, 2}}, 1); }

}  // namespace

TEST_CASE("propagate_layers with zero layers is the identity") {
  const Corpus& c = test::tiny_corpus();
  MatrixXd base = MatrixXd::Random(static_cast<Eigen::Index>(c.kg().node_count()), 4);
  CHECK(propagate_layers(base, c.kg(), 0) == base);
}

TEST_CASE("propagate_layers on a single edge averages the endpoints") {
  MatrixXd base(2, 3);
  base << 1, 2, 3, -4, 5, 0.5;
  const MatrixXd out = propagate_layers(base, pair_graph(), 1);
  const VectorXd expected = (base.row(0) + base.row(1)).transpose() / 2;
  for (int j = 0; j < 3; ++j) {
    CHECK(out(0, j) == Approx(expected[j]).epsilon(1e-12));
    CHECK(out(1, j) == Approx(expected[j]).epsilon(1e-12));
  }
}

TEST_CASE("isolated nodes keep their base vector") {
  KnowledgeGraph kg({1, 2, 3}, {{1, 2}}, 1);
  MatrixXd base = MatrixXd::Random(3, 4);
  const MatrixXd out = propagate_layers(base, kg, 3);
  CHECK((out.row(2) - base.row(2)).norm() < 1e-15);
}

TEST_CASE("bpr_loss values") {
  CHECK(bpr_loss(0.0, 0.0) == Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(bpr_loss(2.0, 0.0) - 0.126928) < 1e-6);
  CHECK(bpr_loss(100.0, 0.0) < 1e-40);
  CHECK(std::isfinite(bpr_loss(0.0, 1000.0)));
  CHECK(bpr_loss(0.0, 1000.0) == Approx(1000.0));
}

TEST_CASE("collab_encode means entity vectors") {
  MatrixXd t(2, 2);
  t << 1, -2, -1, 2;
  const CollabEmbeddings emb({10, 20}, t, 0);
  const std::vector<EntityId> one{10}, both{10, 20}, none{};
  CHECK(collab_encode(emb, one) == t.row(0).transpose());
  CHECK(collab_encode(emb, both).norm() == 0.0);
  CHECK(collab_encode(emb, none) == VectorXd::Zero(2));
  CHECK_THROWS_AS(emb.vector(30), DataError);
}

TEST_CASE("pretraining is deterministic and epoch-free runs return the propagated init") {
  const Corpus& c = test::small_corpus();
  BprConfig cfg;
  cfg.dim = 16;
  cfg.n_epochs = 0;
  const CollabEmbeddings init = pretrain_collab(c.kg(), cfg);
  CHECK(init == pretrain_collab(c.kg(), cfg));
  CHECK(init.n_layers() == cfg.n_layers);
  CHECK(init.size() == c.kg().node_count());

  cfg.n_epochs = 3;
  BprTrainLog log;
  const CollabEmbeddings trained = pretrain_collab(c.kg(), cfg, &log);
  CHECK(log.epoch_loss.size() == 3);
  CHECK_FALSE(trained == init);
  CHECK(trained == pretrain_collab(c.kg(), cfg));
}

TEST_CASE("held-out AUC is high on a small synthetic graph") {
  const Corpus& c = test::small_corpus();
  const auto hold = hold_out_edges(c.kg(), 0.1, 3);
  CHECK(hold.held_out.size() == hold.negatives.size());
  CHECK(hold.train_graph.edges().size() + hold.held_out.size() == c.kg().edges().size());
  BprConfig cfg;
  cfg.dim = 32;
  cfg.n_epochs = 40;
  const auto auc = edge_auc(pretrain_collab(hold.train_graph, cfg), hold.held_out, hold.negatives);
  REQUIRE(auc);
  CHECK(*auc >= 0.75);
}

TEST_CASE("one-edge graph trains and reports AUC as undefined") {
  BprConfig cfg;
  cfg.dim = 4;
  cfg.n_epochs = 2;
  const CollabEmbeddings emb = pretrain_collab(pair_graph(), cfg);
  CHECK(emb.size() == 2);
  const auto hold = hold_out_edges(pair_graph(), 0.5, 1);
  CHECK_FALSE(edge_auc(emb, hold.held_out, hold.negatives));
}

TEST_CASE("edge_auc counts ties as half") {
  MatrixXd t(3, 1);
  t << 1, 1, 1;
  const CollabEmbeddings emb({1, 2, 3}, t, 0);
  CHECK(*edge_auc(emb, {{1, 2}}, {{1, 3}}) == 0.5);
}

TEST_CASE("embedding tables round-trip in both formats") {
  BprConfig cfg;
  cfg.dim = 8;
  cfg.n_epochs = 1;
  const CollabEmbeddings emb = pretrain_collab(test::tiny_corpus().kg(), cfg);
  test::TempDir dir("collab");
  save_collab(emb, dir / "e.bin");
  save_collab(emb, dir / "e.jsonl", EmbeddingFormat::jsonl);
  CHECK(load_collab(dir / "e.bin") == emb);
  const CollabEmbeddings j = load_collab(dir / "e.jsonl");
  CHECK(j.ids() == emb.ids());
  CHECK((j.table() - emb.table()).cwiseAbs().maxCoeff() < 1e-12);
  {
    std::ofstream out(dir / "junk.bin", std::ios::binary);
    out << "garbage";
  }
  CHECK_THROWS_AS(load_collab(dir / "junk.bin"), DataError);
}
