// SPDX-License-Identifier: Apache-2.0
// smtpo: data synthesis, training, evaluation and ablation front end.
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "smtpo/config.hpp"
#include "smtpo/text.hpp"

#ifndef SMTPO_VERSION
#define SMTPO_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace smtpo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitBackend = 4;
constexpr int kExitEmptyEval = 5;

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string ablation;
  std::optional<std::size_t> parallelism;
  std::string prompts_dir;
  std::string data;
  std::string models;
  std::vector<std::int64_t> dialogue_ids;
  std::string split;
  bool resplit = false;
  bool quiet = false;
  bool verbose = false;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, in.gcount());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// One manifest per run directory, written last so a present manifest means
// the run finished.
class Manifest {
 public:
  Manifest(std::string subcommand, std::vector<std::string> argv)
      : started_(std::chrono::steady_clock::now()) {
    j_["tool"] = "smtpo";
    j_["version"] = SMTPO_VERSION;
    j_["subcommand"] = std::move(subcommand);
    j_["argv"] = std::move(argv);
    j_["started_at"] = utc_now();
    j_["inputs"] = ordered_json::array();
    j_["outputs"] = ordered_json::array();
    j_["timings_ms"] = ordered_json::object();
    j_["notes"] = ordered_json::array();
  }

  void config(const RunConfig& c, const PromptLibrary& prompts) {
    j_["config"] = to_json(c);
    j_["seeds"] = {{"seed", c.seed},
                   {"synthetic", c.synthetic.seed},
                   {"collab", c.collab.seed},
                   {"retriever", c.retriever.seed},
                   {"episode", c.episode.seed},
                   {"grpo", c.grpo.seed},
                   {"simulator", c.simulator.seed},
                   {"teacher", c.teacher.seed}};
    j_["components"] = {{"engine", SMTPO_VERSION},
                        {"prompts", prompts.version()},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                      std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)}};
  }

  void input(const fs::path& p) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) input(f);
      return;
    }
    j_["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
  }
  void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
  void note(const std::string& s) { j_["notes"].push_back(s); }
  void set(const std::string& key, ordered_json v) { j_[key] = std::move(v); }

  template <typename F>
  auto timed(const std::string& phase, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record(phase, t0);
    } else {
      auto r = f();
      record(phase, t0);
      return r;
    }
  }

  void write(const fs::path& dir) {
    j_["timings_ms"]["total"] = ms_since(started_);
    const fs::path p = dir / "manifest.json";
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << j_.dump(2) << '\n';
  }

 private:
  static double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  void record(const std::string& phase, std::chrono::steady_clock::time_point t0) {
    j_["timings_ms"][phase] = ms_since(t0);
  }

  ordered_json j_;
  std::chrono::steady_clock::time_point started_;
};

void write_json(const fs::path& p, const ordered_json& j, Manifest& m) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
  m.output(p);
}

// Everything a subcommand may need, built lazily: artifacts come from
// --models when present there, otherwise they are trained in-process.
class Session {
 public:
  Session(const Options& o, RunConfig cfg, Manifest& m)
      : opt_(o), cfg_(std::move(cfg)), m_(m), out_(o.out) {
    prompts_ = cfg_.prompts_dir.empty() ? PromptLibrary::embedded()
                                        : PromptLibrary::with_overrides(cfg_.prompts_dir);
    m_.config(cfg_, prompts_);
  }

  const RunConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }
  const PromptLibrary& prompts() const { return prompts_; }
  Manifest& manifest() { return m_; }

  const Corpus& corpus() {
    if (corpus_) return *corpus_;
    if (!opt_.data.empty()) {
      m_.input(opt_.data);
      corpus_ = m_.timed("load_corpus", [&] { return load_corpus(opt_.data); });
    } else {
      m_.note("corpus generated from the synthetic section of the config");
      corpus_ = m_.timed("generate_corpus", [&] { return generate_synthetic_corpus(cfg_.synthetic); });
      if (cfg_.split != std::array<double, 3>{0.8, 0.1, 0.1})
        corpus_ = split_corpus(*corpus_, cfg_.split, cfg_.seed);
    }
    return *corpus_;
  }

  const SemanticEncoder& sem() {
    if (!sem_) sem_ = make_semantic_encoder(cfg_.semantic);
    return *sem_;
  }

  const CollabEmbeddings& collab() {
    if (collab_) return *collab_;
    if (auto p = model_file("collab.bin")) {
      m_.input(*p);
      collab_ = load_collab(*p);
    } else {
      m_.note("collaborative embeddings trained in-process");
      collab_ = m_.timed("pretrain_collab", [&] { return pretrain_collab(corpus().kg(), cfg_.collab); });
    }
    return *collab_;
  }

  const RetrieverParams& params() {
    if (params_) return *params_;
    if (auto p = model_file("retriever.bin")) {
      m_.input(*p);
      params_ = load_retriever(*p);
    } else {
      m_.note("retriever trained in-process");
      params_ = m_.timed("train_retriever", [&] {
        return train_retriever(corpus(), sem(), collab(), cfg_.retriever, training_source());
      });
    }
    if (params_->dim_s() != sem().dim() || params_->dim_c() != collab().dim())
      throw ConfigError("retriever weights do not match the semantic/collab widths in use");
    return *params_;
  }

  ContextSource training_source() {
    return make_training_context_source(corpus(), cfg_.simulator.seed);
  }

  const RetrievalStack& stack() {
    if (!index_) {
      const auto& p = params();
      index_ = m_.timed("build_index", [&] { return ItemIndex(corpus(), sem(), collab()); });
      stack_ = RetrievalStack{&corpus(), &sem(), &collab(), &p, &*index_};
    }
    return stack_;
  }

  const ChatBackend& simulator() {
    if (!simulator_) simulator_ = make_backend(cfg_.simulator);
    return *simulator_;
  }

  const ChatBackend& teacher() {
    if (!teacher_) teacher_ = make_backend(cfg_.teacher);
    return *teacher_;
  }

  ToyPolicy train_policy(GrpoTrainLog* log = nullptr, bool keep_groups = false,
                         std::optional<GrpoConfig> override_cfg = std::nullopt) {
    const GrpoConfig gc = override_cfg.value_or(cfg_.grpo);
    return m_.timed("train_grpo", [&] {
      return train_toy_policy(corpus(), stack(), simulator(), prompts_, cfg_.episode, gc, sem(),
                              cfg_.rewards, cfg_.toy_theta_init, log, keep_groups);
    });
  }

  const VectorXd& theta() {
    if (theta_) return *theta_;
    if (!cfg_.recommender.policy_path.empty()) {
      m_.input(cfg_.recommender.policy_path);
      theta_ = load_toy_policy(cfg_.recommender.policy_path).theta;
    } else if (auto p = model_file("toy_policy.json")) {
      m_.input(*p);
      theta_ = load_toy_policy(*p).theta;
    } else {
      m_.note("toy policy trained in-process");
      theta_ = train_policy().theta;
    }
    return *theta_;
  }

  const ChatBackend& recommender() {
    if (!recommender_) {
      std::optional<VectorXd> th;
      if (cfg_.recommender.kind == BackendKind::toy_policy) th = theta();
      recommender_ = make_backend(cfg_.recommender, th);
    }
    return *recommender_;
  }

  Agents agents() { return Agents{&simulator(), &recommender(), &prompts_}; }

  std::vector<const Dialogue*> dialogues() {
    if (!opt_.dialogue_ids.empty()) {
      std::vector<const Dialogue*> out;
      for (auto id : opt_.dialogue_ids) out.push_back(&corpus().dialogue(id));
      return out;
    }
    return corpus().dialogues_in(parse_split(opt_.split));
  }

 private:
  std::optional<fs::path> model_file(const std::string& name) const {
    if (opt_.models.empty()) return std::nullopt;
    const fs::path p = fs::path(opt_.models) / name;
    if (fs::exists(p)) return p;
    return std::nullopt;
  }

  const Options& opt_;
  RunConfig cfg_;
  Manifest& m_;
  fs::path out_;
  PromptLibrary prompts_;
  std::optional<Corpus> corpus_;
  std::unique_ptr<SemanticEncoder> sem_;
  std::optional<CollabEmbeddings> collab_;
  std::optional<RetrieverParams> params_;
  std::optional<ItemIndex> index_;
  RetrievalStack stack_;
  std::unique_ptr<ChatBackend> simulator_, teacher_, recommender_;
  std::optional<VectorXd> theta_;
};

int cmd_synth(Session& s) {
  const Corpus& c = s.corpus();
  s.manifest().timed("write_corpus", [&] { write_corpus(c, s.out()); });
  for (const char* f : {"items.jsonl", "attributes.jsonl", "dialogues.jsonl", "kg_edges.jsonl"})
    s.manifest().output(s.out() / f);
  std::cout << "wrote " << c.items().size() << " items, " << c.attributes().size()
            << " attributes, " << c.dialogues().size() << " dialogues to " << s.out().string() << '\n';
  return 0;
}

int cmd_ingest(Session& s, const Options& o) {
  if (o.data.empty()) throw ConfigError("ingest needs --data <corpus dir>");
  Corpus c = s.corpus();
  if (o.resplit) c = split_corpus(c, s.cfg().split, s.cfg().seed);
  s.manifest().timed("write_corpus", [&] { write_corpus(c, s.out()); });
  for (const char* f : {"items.jsonl", "attributes.jsonl", "dialogues.jsonl", "kg_edges.jsonl"})
    s.manifest().output(s.out() / f);
  std::cout << "ingested " << c.items().size() << " items, " << c.dialogues().size()
            << " dialogues (train " << c.dialogues_in(Split::train).size() << ", valid "
            << c.dialogues_in(Split::valid).size() << ", test " << c.dialogues_in(Split::test).size()
            << ")\n";
  return 0;
}

int cmd_pretrain_collab(Session& s) {
  const auto& cfg = s.cfg();
  const Corpus& c = s.corpus();
  const auto hold = hold_out_edges(c.kg(), 0.1, cfg.collab.seed);
  const auto probe = s.manifest().timed("holdout_probe", [&] { return pretrain_collab(hold.train_graph, cfg.collab); });
  const auto auc = edge_auc(probe, hold.held_out, hold.negatives);
  BprTrainLog log;
  const auto emb = s.manifest().timed("pretrain_collab", [&] { return pretrain_collab(c.kg(), cfg.collab, &log); });
  const fs::path p = s.out() / "collab.bin";
  save_collab(emb, p);
  s.manifest().output(p);
  ordered_json report{{"heldout_auc", auc ? ordered_json(*auc) : ordered_json("n/a")},
                      {"heldout_edges", hold.held_out.size()},
                      {"epoch_loss", log.epoch_loss}};
  write_json(s.out() / "collab_report.json", report, s.manifest());
  std::cout << "held-out edge AUC " << (auc ? std::to_string(*auc) : std::string("n/a")) << '\n';
  return 0;
}

int cmd_train_retriever(Session& s) {
  const auto& cfg = s.cfg();
  const Corpus& c = s.corpus();
  RetrieverTrainLog log;
  const auto params = s.manifest().timed("train_retriever", [&] {
    return train_retriever(c, s.sem(), s.collab(), cfg.retriever, s.training_source(), &log);
  });
  const fs::path p = s.out() / "retriever.bin";
  save_retriever(params, p);
  s.manifest().output(p);
  const ItemIndex index(c, s.sem(), s.collab());
  const auto test = c.dialogues_in(Split::test);
  const auto k = static_cast<std::size_t>(cfg.retriever.eval_k);
  const auto cold = evaluate_retriever(test, c, s.sem(), s.collab(), params, index,
                                       [](const Dialogue& d, std::mt19937_64&) { return cold_start_context(d); },
                                       k, cfg.retriever.seed);
  const auto ctx = evaluate_retriever(test, c, s.sem(), s.collab(), params, index,
                                      s.training_source(), k, cfg.retriever.seed);
  ordered_json report{{"best_epoch", log.best_epoch},
                      {"epoch_loss", log.epoch_loss},
                      {"valid_recall", log.valid_recall},
                      {"test_cold_start", {{"recall", cold.recall}, {"ndcg", cold.ndcg}, {"n", cold.n}}},
                      {"test_multi_turn_contexts", {{"recall", ctx.recall}, {"ndcg", ctx.ndcg}, {"n", ctx.n}}},
                      {"k", k}};
  write_json(s.out() / "retriever_report.json", report, s.manifest());
  std::cout << "test R@" << k << " cold start " << cold.recall << ", multi-turn contexts "
            << ctx.recall << " (n=" << cold.n << ")\n";
  return 0;
}

int cmd_gen_sft(Session& s) {
  const Corpus& c = s.corpus();
  const auto dialogues = s.dialogues();
  std::mt19937_64 rng(s.cfg().seed);
  std::vector<SftInstance> sim, rec;
  std::vector<std::string> failures;
  s.manifest().timed("gen_sft", [&] {
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
      auto tasks = gen_simulator_tasks(*dialogues[i], c, s.teacher(), s.prompts(), s.cfg().sft, rng, &failures);
      sim.insert(sim.end(), std::make_move_iterator(tasks.begin()), std::make_move_iterator(tasks.end()));
      const ListStrategy strategy = kAllStrategies[i % std::size(kAllStrategies)];
      if (auto r = gen_recommender_sft(*dialogues[i], c, s.teacher(), s.prompts(), strategy,
                                       s.cfg().sft, rng, &failures))
        rec.push_back(std::move(*r));
    }
  });
  emit_jsonl(sim, s.out() / "simulator_sft.jsonl");
  emit_jsonl(rec, s.out() / "recommender_sft.jsonl");
  s.manifest().output(s.out() / "simulator_sft.jsonl");
  s.manifest().output(s.out() / "recommender_sft.jsonl");
  s.manifest().set("sft", {{"dialogues", dialogues.size()},
                           {"simulator_instances", sim.size()},
                           {"recommender_instances", rec.size()},
                           {"skipped", failures}});
  std::cout << "wrote " << sim.size() << " simulator and " << rec.size()
            << " recommender instances from " << dialogues.size() << " dialogues";
  if (!failures.empty()) std::cout << " (" << failures.size() << " skipped, see manifest)";
  std::cout << '\n';
  return 0;
}

int cmd_train_grpo(Session& s) {
  GrpoTrainLog log;
  const ToyPolicy policy = s.train_policy(&log);
  const fs::path p = s.out() / "toy_policy.json";
  save_toy_policy(policy, p);
  s.manifest().output(p);
  write_json(s.out() / "grpo_report.json",
             {{"epoch_mean_reward", log.epoch_mean_reward},
              {"theta", std::vector<double>(policy.theta.data(), policy.theta.data() + policy.theta.size())}},
             s.manifest());
  std::cout << "epoch mean composite reward:";
  for (double r : log.epoch_mean_reward) std::cout << ' ' << r;
  std::cout << '\n';
  return 0;
}

EpisodeConfig episode_with(const RunConfig& cfg, const std::string& ablation) {
  EpisodeConfig e = cfg.episode;
  if (!ablation.empty()) e.flags.set(parse_ablation_mode(ablation));
  return e;
}

int cmd_simulate(Session& s, const Options& o) {
  const auto dialogues = s.dialogues();
  const auto episode = episode_with(s.cfg(), o.ablation);
  const fs::path p = s.out() / "traces.jsonl";
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  const auto agents = s.agents();
  const auto& stack = s.stack();
  std::size_t failed = 0;
  s.manifest().timed("simulate", [&] {
    for (const Dialogue* d : dialogues) {
      const auto trace = run_episode(*d, agents, stack, episode, &s.sem(), s.cfg().rewards);
      if (trace.status == EpisodeStatus::failed) ++failed;
      out << trace_json(trace).dump() << '\n';
      std::cout << "dialogue " << d->id << ": " << to_string(trace.status);
      if (trace.hit_turn) std::cout << " at reported turn " << *trace.hit_turn + 1;
      if (!trace.error.empty()) std::cout << " (" << trace.error << ')';
      std::cout << '\n';
    }
  });
  s.manifest().output(p);
  s.manifest().set("episodes", {{"total", dialogues.size()}, {"failed", failed}});
  return failed == dialogues.size() && failed > 0 ? kExitBackend : 0;
}

int cmd_eval(Session& s, const Options& o) {
  const auto dialogues = s.dialogues();
  if (dialogues.empty()) {
    std::cerr << "no dialogues in the " << o.split << " split; nothing to evaluate\n";
    write_json(s.out() / "metrics.json", metrics_json(EvalResult{}), s.manifest());
    return kExitEmptyEval;
  }
  const auto agents = s.agents();
  const auto& stack = s.stack();
  const std::size_t par = s.cfg().parallelism;
  if (!o.ablation.empty()) {
    const auto r = s.manifest().timed("eval", [&] {
      return run_ablation(dialogues, agents, stack, s.cfg().episode, parse_ablation_mode(o.ablation), par);
    });
    write_json(s.out() / "metrics.json", ablation_json(r), s.manifest());
    write_traces(r.ablated, s.out() / "traces.jsonl");
    s.manifest().output(s.out() / "traces.jsonl");
    std::cout << "baseline\n" << format_metrics_table(r.baseline) << "\n" << o.ablation << "\n"
              << format_metrics_table(r.ablated);
    return r.baseline.failed == r.baseline.episodes ? kExitBackend : 0;
  }
  const auto r = s.manifest().timed("eval", [&] { return run_eval(dialogues, agents, stack, s.cfg().episode, par); });
  write_json(s.out() / "metrics.json", metrics_json(r), s.manifest());
  write_traces(r, s.out() / "traces.jsonl");
  s.manifest().output(s.out() / "traces.jsonl");
  std::cout << format_metrics_table(r);
  return r.failed == r.episodes ? kExitBackend : 0;
}

int cmd_ablate(Session& s, const Options& o) {
  if (o.ablation.empty()) throw ConfigError("ablate needs --ablation <mode|all>");
  const auto dialogues = s.dialogues();
  if (dialogues.empty()) {
    std::cerr << "no dialogues in the " << o.split << " split; nothing to evaluate\n";
    return kExitEmptyEval;
  }
  std::vector<AblationMode> modes;
  if (o.ablation == "all")
    modes = {AblationMode::blind_simulator, AblationMode::noise_feedback,
             AblationMode::no_pref_in_retrieval, AblationMode::no_rec_in_retrieval,
             AblationMode::no_feedback_in_retrieval};
  else
    modes = {parse_ablation_mode(o.ablation)};
  const auto agents = s.agents();
  const auto& stack = s.stack();
  ordered_json all = ordered_json::array();
  for (AblationMode m : modes) {
    const auto r = s.manifest().timed(std::string("ablate_") + to_string(m), [&] {
      return run_ablation(dialogues, agents, stack, s.cfg().episode, m, s.cfg().parallelism);
    });
    all.push_back(ablation_json(r));
    const auto& b = r.baseline.turns.back();
    const auto& a = r.ablated.turns.back();
    std::cout << std::left << std::setw(26) << to_string(m) << " final-turn R@10 baseline "
              << b.recall_10 << " ablated " << a.recall_10 << " delta " << a.recall_10 - b.recall_10
              << '\n';
  }
  write_json(s.out() / "ablation.json", modes.size() == 1 ? all.front() : ordered_json{{"modes", all}},
             s.manifest());
  return 0;
}

int cmd_export_rollouts(Session& s, const Options& o) {
  std::vector<RolloutGroup> groups;
  if (s.cfg().recommender.kind == BackendKind::toy_policy) {
    // Sampling pass with a frozen policy: rollouts carry exact logprobs.
    GrpoConfig frozen = s.cfg().grpo;
    frozen.learning_rate = 0.0;
    frozen.epochs = 1;
    GrpoTrainLog log;
    RunConfig c = s.cfg();
    const VectorXd theta = s.theta();
    s.manifest().timed("rollouts", [&] {
      train_toy_policy(s.corpus(), s.stack(), s.simulator(), s.prompts(), episode_with(c, o.ablation),
                       frozen, s.sem(), c.rewards, theta, &log, true);
    });
    groups = std::move(log.groups);
  } else {
    auto dialogues = s.dialogues();
    if (s.cfg().grpo.max_dialogues && dialogues.size() > s.cfg().grpo.max_dialogues)
      dialogues.resize(s.cfg().grpo.max_dialogues);
    groups = s.manifest().timed("rollouts", [&] {
      return collect_rollouts(dialogues, s.agents(), s.stack(), episode_with(s.cfg(), o.ablation),
                              s.cfg().grpo.group_size, s.sem(), s.cfg().rewards);
    });
  }
  const fs::path p = s.out() / "rollouts.jsonl";
  const auto n = export_rollouts(groups, p);
  s.manifest().output(p);
  std::cout << "exported " << n << " rollout groups to " << p.string() << '\n';
  return 0;
}

int run(const std::string& name, const Options& o, const std::vector<std::string>& argv) {
  if (o.out.empty()) throw ConfigError("--out <dir> is required");
  std::vector<std::string> overrides = o.sets;
  if (o.seed)
    for (const char* key : {"seed", "synthetic.seed", "collab.seed", "retriever.seed",
                            "episode.seed", "grpo.seed", "simulator.seed", "teacher.seed"})
      overrides.push_back(std::string(key) + "=" + std::to_string(*o.seed));
  if (o.parallelism) overrides.push_back("parallelism=" + std::to_string(*o.parallelism));
  if (!o.prompts_dir.empty()) {
    nlohmann::json s = o.prompts_dir;
    overrides.push_back("prompts_dir=" + s.dump());
  }
  const RunConfig cfg = load_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config),
                                    overrides);
  cfg.validate();
  if (!o.ablation.empty() && o.ablation != "all") parse_ablation_mode(o.ablation);
  fs::create_directories(o.out);

  Manifest m(name, argv);
  if (!o.config.empty()) m.input(o.config);
  Session s(o, cfg, m);
  int rc = 0;
  if (name == "synth") rc = cmd_synth(s);
  else if (name == "ingest") rc = cmd_ingest(s, o);
  else if (name == "pretrain-collab") rc = cmd_pretrain_collab(s);
  else if (name == "train-retriever") rc = cmd_train_retriever(s);
  else if (name == "gen-sft") rc = cmd_gen_sft(s);
  else if (name == "train-grpo") rc = cmd_train_grpo(s);
  else if (name == "simulate") rc = cmd_simulate(s, o);
  else if (name == "eval") rc = cmd_eval(s, o);
  else if (name == "ablate") rc = cmd_ablate(s, o);
  else if (name == "export-rollouts") rc = cmd_export_rollouts(s, o);
  m.set("exit_code", rc);
  m.write(o.out);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smtpo: simulator-guided multi-turn recommendation engine"};
  app.set_version_flag("--version", SMTPO_VERSION);
  app.require_subcommand(1);
  Options o;

  struct Spec {
    const char* name;
    const char* help;
    std::string default_split;
  };
  const std::vector<Spec> specs = {
      {"synth", "Generate a synthetic corpus (four JSONL files)", "test"},
      {"ingest", "Validate a corpus directory and write a normalized copy", "test"},
      {"pretrain-collab", "Pretrain collaborative KG embeddings with BPR", "test"},
      {"train-retriever", "Train the dual-view retriever with InfoNCE", "test"},
      {"gen-sft", "Emit simulator and recommender SFT instances", "train"},
      {"train-grpo", "Train the toy Plackett-Luce policy with GRPO", "train"},
      {"simulate", "Run interaction episodes and write their traces", "test"},
      {"eval", "Turn-wise evaluation over a split", "test"},
      {"ablate", "Baseline versus ablated evaluation", "test"},
      {"export-rollouts", "Export GRPO rollout groups as JSONL", "train"}};
  for (const auto& spec : specs) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    sub->add_option("--config", o.config, "JSON run config (see docs/config.md)")->check(CLI::ExistingFile);
    sub->add_option("--set", o.sets, "Override a config key, e.g. --set grpo.epochs=5")->allow_extra_args(false);
    sub->add_option("--out", o.out, "Output directory")->required();
    sub->add_option("--seed", o.seed, "Set every seed in the config");
    sub->add_option("--parallelism", o.parallelism, "Concurrent episodes");
    sub->add_option("--prompts-dir", o.prompts_dir, "Directory of prompt template overrides");
    sub->add_option("--data", o.data, "Corpus directory (default: synthetic corpus from config)");
    sub->add_option("--models", o.models, "Directory with collab.bin, retriever.bin, toy_policy.json");
    sub->add_option("--dialogue", o.dialogue_ids, "Restrict to these dialogue ids");
    sub->add_option("--split", o.split, "Dialogue split to use (default: " + spec.default_split + ")")
        ->check(CLI::IsMember({"train", "valid", "test"}));
    sub->add_flag("-q,--quiet", o.quiet, "Only warnings and errors");
    sub->add_flag("-v,--verbose", o.verbose, "Debug logging");
    if (std::string(spec.name) == "ingest")
      sub->add_flag("--resplit", o.resplit, "Reassign splits with the configured ratios");
    if (std::string(spec.name) == "eval" || std::string(spec.name) == "simulate" ||
        std::string(spec.name) == "export-rollouts")
      sub->add_option("--ablation", o.ablation, "Ablation mode");
    if (std::string(spec.name) == "ablate")
      sub->add_option("--ablation", o.ablation, "Ablation mode, or 'all'")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (dynamic_cast<const CLI::RequiredError*>(&e) && app.get_subcommands().empty())
      std::cerr << app.help();
    return kExitConfig;
  }

  spdlog::set_level(o.verbose ? spdlog::level::debug : o.quiet ? spdlog::level::warn : spdlog::level::info);
  const std::string name = app.get_subcommands().front()->get_name();
  if (o.split.empty())
    o.split = std::find_if(specs.begin(), specs.end(), [&](const Spec& x) { return name == x.name; })
                  ->default_split;
  const std::vector<std::string> args(argv, argv + argc);
  try {
    return run(name, o, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
