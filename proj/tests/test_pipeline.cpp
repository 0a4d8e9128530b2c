// SPDX-License-Identifier: Apache-2.0
// End-to-end checks on the default synthetic run.
#include "doctest.h"
#include "pipeline.hpp"

using namespace smtpo;

TEST_CASE("default synthetic run") {
  test::Pipeline pipe;
  pipe.pretrain();
  pipe.train();

  // Validation recall of the kept parameters.
  REQUIRE(pipe.retriever_log.best_epoch >= 0);
  CHECK(pipe.retriever_log.valid_recall[static_cast<std::size_t>(pipe.retriever_log.best_epoch)] >= 0.8);

  const ScriptedSimulator sim(pipe.cfg.simulator.seed);
  GrpoTrainLog log;
  const ToyPolicy policy = train_toy_policy(pipe.corpus, pipe.stack, sim, pipe.prompts, pipe.cfg.episode,
                                            pipe.cfg.grpo, *pipe.sem, pipe.cfg.rewards, pipe.cfg.toy_theta_init, &log);

  // Mean composite reward rises every epoch.
  REQUIRE(log.epoch_mean_reward.size() == static_cast<std::size_t>(pipe.cfg.grpo.epochs));
  for (std::size_t i = 1; i < log.epoch_mean_reward.size(); ++i)
    CHECK(log.epoch_mean_reward[i] > log.epoch_mean_reward[i - 1]);

  // Feedback ablations do not beat the baseline.
  const ToyPolicyRecommender rec(policy.theta);
  const Agents agents{&sim, &rec, &pipe.prompts};
  const auto test = pipe.corpus.dialogues_in(Split::test);
  const auto no_fb =
      run_ablation(test, agents, pipe.stack, pipe.cfg.episode, AblationMode::no_feedback_in_retrieval, 4);
  CHECK(no_fb.ablated.turns.back().recall_10 < no_fb.baseline.turns.back().recall_10);
  const auto blind = run_ablation(test, agents, pipe.stack, pipe.cfg.episode, AblationMode::blind_simulator, 4);
  CHECK(blind.ablated.turns.back().recall_10 <= blind.baseline.turns.back().recall_10);
}
