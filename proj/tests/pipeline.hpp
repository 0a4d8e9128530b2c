// SPDX-License-Identifier: Apache-2.0
// The default end-to-end stack: synthetic corpus, BPR collaborative
// embeddings, trained retriever, item index.
#pragma once

#include <memory>

#include "smtpo/config.hpp"

namespace smtpo::test {

struct Pipeline {
  RunConfig cfg;
  Corpus corpus;
  std::unique_ptr<SemanticEncoder> sem;
  CollabEmbeddings collab;
  RetrieverParams params;
  RetrieverTrainLog retriever_log;
  ItemIndex index;
  RetrievalStack stack;
  PromptLibrary prompts = PromptLibrary::embedded();

  explicit Pipeline(RunConfig c = {}) : cfg(std::move(c)) {
    corpus = generate_synthetic_corpus(cfg.synthetic);
    sem = make_semantic_encoder(cfg.semantic);
  }

  void pretrain() { collab = pretrain_collab(corpus.kg(), cfg.collab); }

  void train() {
    params = train_retriever(corpus, *sem, collab, cfg.retriever,
                             make_training_context_source(corpus, cfg.simulator.seed), &retriever_log);
    index = ItemIndex(corpus, *sem, collab);
    stack = {&corpus, sem.get(), &collab, &params, &index};
  }
};

}  // namespace smtpo::test
