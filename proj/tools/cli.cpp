#include "cli.hpp"

#include <cstdlib>
#include <memory>

#include "CLI11.hpp"
#include "adt/error.hpp"
#include "adt/pipeline.hpp"
#include "adt/service.hpp"
#include "httplib.h"

namespace adt {

namespace {

int serve(const PipelineConfig& cfg, const std::string& host, int port, std::string ckpt_dir, std::ostream& out) {
  auto assets = std::make_shared<ServiceAssets>();
  assets->vectors = load_vectors(cfg.resolve(cfg.paths.vectors));
  assets->topics = load_topic_model(cfg.resolve(cfg.paths.topics));
  assets->inventory = load_inventory(cfg.resolve(cfg.paths.inventory), assets->vectors);
  assets->top_words = topic_top_words(assets->topics, assets->vectors, 5);
  if (ckpt_dir.empty()) ckpt_dir = cfg.resolve(cfg.paths.checkpoint).parent_path().string();
  assets->checkpoints = load_checkpoint_dir(ckpt_dir);
  SessionManager manager(assets);
  httplib::Server server;
  install_routes(server, manager);
  if (!server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  out << "listening on " << host << ":" << port << " with " << assets->checkpoints.size() << " checkpoint(s)"
      << std::endl;
  server.listen_after_bind();
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decision Transformer topic recommender for counseling transcripts", "adt"};
  app.require_subcommand(1);

  std::string config_path, data_dir, scale, condition;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> context_k, jobs;
  app.add_option("--config", config_path, "JSON pipeline config");
  app.add_option("--data-dir", data_dir, "data root (default $ADT_DATA_DIR or .)");
  app.add_option("--seed", seed, "base seed");
  app.add_option("--scale", scale, "reward scale: full|task|bond|goal");
  app.add_option("--context-k", context_k, "context length K");
  app.add_option("--condition", condition, "condition filter or 'all'");
  app.add_option("--jobs", jobs, "parallel ablation cells");
  std::optional<std::size_t> steps;
  app.add_option("--steps", steps, "optimizer steps for the model");

  const auto sub = [&](const char* name, const char* help) {
    auto* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };
  auto* gen = sub("gen-synthetic", "write a planted-topic synthetic corpus");
  std::optional<std::size_t> n_sessions, n_turns, n_topics;
  std::optional<double> chain_prob;
  gen->add_option("--sessions", n_sessions, "number of sessions");
  gen->add_option("--turns", n_turns, "turn-pairs per session");
  gen->add_option("--topics", n_topics, "number of planted topics");
  gen->add_option("--chain-prob", chain_prob, "probability of following the session's topic ring");
  auto* ingest = sub("ingest", "segment transcripts into turn-pairs");
  auto* embed = sub("embed", "train word vectors on the turn-pairs");
  auto* topics = sub("topics", "fit the topic model");
  auto* rewards = sub("rewards", "score alliance rewards per turn-pair");
  auto* trajectories = sub("trajectories", "build (return, state, action) trajectories");
  auto* train = sub("train", "train a model and save a checkpoint");
  auto* eval = sub("eval", "evaluate a checkpoint or repeated runs");
  std::string eval_ckpt;
  std::optional<std::size_t> runs;
  auto* ckpt_opt = eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate on its held-out split");
  eval->add_option("--runs", runs, "train and evaluate this many seeds")->excludes(ckpt_opt);
  auto* ablate = sub("ablate", "context-length by reward-scale grid");
  auto* attn = sub("attn", "attention reports for a checkpoint");
  std::string attn_ckpt;
  attn->add_option("--checkpoint", attn_ckpt, "checkpoint (default from config)");
  auto* labelgen = sub("labelgen", "export synthetic and gold topic labels");
  auto* serve_cmd = sub("serve", "run the live recommendation HTTP service");
  std::string host = "127.0.0.1", ckpt_dir;
  int port = 8080;
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "port");
  serve_cmd->add_option("--checkpoints", ckpt_dir, "directory of .ckpt files (default: checkpoint's directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    PipelineConfig cfg;
    if (const char* env = std::getenv("ADT_DATA_DIR"); env && *env) cfg.data_dir = env;
    if (!config_path.empty()) cfg = load_config(config_path, cfg);
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    auto& ex = cfg.experiment;
    if (seed) ex.base_seed = cfg.synthetic.seed = cfg.embed.seed = cfg.topic_seed = *seed;
    if (!scale.empty()) ex.scale = parse_scale(scale);
    if (context_k) ex.K = *context_k;
    if (!condition.empty()) ex.condition = parse_condition_filter(condition);
    if (jobs) cfg.jobs = *jobs;
    if (n_sessions) cfg.synthetic.n_sessions = *n_sessions;
    if (n_turns) cfg.synthetic.turns_per_session = *n_turns;
    if (n_topics) cfg.synthetic.n_topics = *n_topics;
    if (chain_prob) cfg.synthetic.chain_prob = *chain_prob;
    if (steps) ex.opt.steps = *steps;

    if (gen->parsed()) {
      stage_gen_synthetic(cfg, out);
    } else if (ingest->parsed()) {
      stage_ingest(cfg, out);
    } else if (embed->parsed()) {
      stage_embed(cfg, out);
    } else if (topics->parsed()) {
      stage_topics(cfg, out);
    } else if (rewards->parsed()) {
      stage_rewards(cfg, out);
    } else if (trajectories->parsed()) {
      stage_trajectories(cfg, out);
    } else if (train->parsed()) {
      stage_train(cfg, out);
    } else if (eval->parsed()) {
      if (!eval_ckpt.empty()) {
        stage_eval_checkpoint(cfg, eval_ckpt, out);
      } else {
        stage_eval_runs(cfg, runs.value_or(cfg.runs), out);
      }
    } else if (ablate->parsed()) {
      stage_ablate(cfg, out);
    } else if (attn->parsed()) {
      stage_attn(cfg, attn_ckpt.empty() ? cfg.resolve(cfg.paths.checkpoint) : std::filesystem::path(attn_ckpt), out);
    } else if (labelgen->parsed()) {
      stage_labelgen(cfg, out);
    } else if (serve_cmd->parsed()) {
      return serve(cfg, host, port, ckpt_dir, out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace adt
