#include "adt/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "adt/analysis.hpp"
#include "adt/error.hpp"
#include "adt/labelgen.hpp"
#include "adt/service.hpp"
#include "adt/topics.hpp"
#include "json.hpp"

namespace adt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& obj, const char* key, T& dst) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: bad value for '") + key + "'");
  }
}

void check_keys(const json& obj, const char* section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ValidationError(std::string("config: '") + section + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ValidationError(std::string("config: unknown key '") + k + "' in " + section);
  }
}

void read_path(const json& obj, const char* key, fs::path& dst) {
  std::string s;
  if (!obj.contains(key)) return;
  read_field(obj, key, s);
  dst = s;
}

void read_opt(const json& j, const char* section, OptConfig& o) {
  check_keys(j, section,
             {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "clip_norm", "batch_size", "steps",
              "warmup_steps"});
  read_field(j, "learning_rate", o.learning_rate);
  read_field(j, "beta1", o.beta1);
  read_field(j, "beta2", o.beta2);
  read_field(j, "epsilon", o.epsilon);
  read_field(j, "weight_decay", o.weight_decay);
  read_field(j, "clip_norm", o.clip_norm);
  read_field(j, "batch_size", o.batch_size);
  read_field(j, "steps", o.steps);
  read_field(j, "warmup_steps", o.warmup_steps);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string r_text(const EvalResult& e) { return e.pearson_r ? fixed(*e.pearson_r) : "undefined (" + e.error + ")"; }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

struct Loaded {
  std::vector<SessionPairs> sessions;
  VocabEmbedding vectors;
};

std::vector<SessionTrajectory> load_trajs(const PipelineConfig& cfg) {
  auto t = load_trajectories(cfg.resolve(cfg.paths.trajectories));
  if (t.empty()) throw ValidationError("no trajectories in " + cfg.resolve(cfg.paths.trajectories).string());
  return t;
}

// Same split as the training run that produced `ckpt`.
std::vector<std::vector<SessionTrajectory>> checkpoint_split(const std::vector<SessionTrajectory>& trajs,
                                                             const Checkpoint& ckpt) {
  const auto& md = ckpt.metadata;
  const auto need = [&](const char* k) -> const std::string& {
    const auto it = md.find(k);
    if (it == md.end()) throw ValidationError(std::string("checkpoint metadata lacks '") + k + "'");
    return it->second;
  };
  const auto fr = json::parse(need("fractions")).get<std::vector<double>>();
  const auto seed = std::stoull(need("split_seed"));
  const auto pool = filter_condition(trajs, parse_condition_filter(need("condition")));
  return split_sessions(pool, fr, seed);
}

}  // namespace

fs::path PipelineConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : data_dir / p; }

void PipelineConfig::validate() const {
  const auto& f = experiment.fractions;
  if (f.size() < 2) throw ValidationError("split fractions need at least two parts");
  for (double x : f)
    if (!(x >= 0)) throw ValidationError("split fractions must be nonnegative");
  if (std::abs(std::accumulate(f.begin(), f.end(), 0.0) - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");
  experiment.opt.validate();
  experiment.bc_opt.validate();
  if (experiment.K == 0) throw ValidationError("context length must be >= 1");
  if (runs == 0) throw ValidationError("runs must be >= 1");
  if (jobs == 0) throw ValidationError("jobs must be >= 1");
  if (n_topics < 2) throw ValidationError("need at least 2 topics");
}

std::optional<Condition> parse_condition_filter(const std::string& name) {
  if (name == "all") return std::nullopt;
  for (Condition c : {Condition::kDepression, Condition::kAnxiety, Condition::kSchizophrenia, Condition::kSuicidal,
                      Condition::kOther})
    if (condition_name(c) == name) return c;
  throw ValidationError("unknown condition '" + name + "'");
}

void apply_config_json(PipelineConfig& cfg, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  check_keys(j, "config",
             {"data_dir", "paths", "embed", "topics", "model", "opt", "bc_opt", "scale", "context_k", "fractions",
              "seed", "condition", "runs", "jobs", "ablation", "synthetic", "attn_windows", "baseline", "f64"});
  read_path(j, "data_dir", cfg.data_dir);
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, "paths",
               {"corpus", "pairs", "vectors", "inventory", "topics", "rewards", "trajectories", "checkpoint",
                "out_dir"});
    read_path(p, "corpus", cfg.paths.corpus);
    read_path(p, "pairs", cfg.paths.pairs);
    read_path(p, "vectors", cfg.paths.vectors);
    read_path(p, "inventory", cfg.paths.inventory);
    read_path(p, "topics", cfg.paths.topics);
    read_path(p, "rewards", cfg.paths.rewards);
    read_path(p, "trajectories", cfg.paths.trajectories);
    read_path(p, "checkpoint", cfg.paths.checkpoint);
    read_path(p, "out_dir", cfg.paths.out_dir);
  }
  if (j.contains("embed")) {
    const auto& e = j["embed"];
    check_keys(e, "embed", {"dim", "window", "negatives", "epochs", "seed", "min_count", "learning_rate"});
    read_field(e, "dim", cfg.embed.dim);
    read_field(e, "window", cfg.embed.window);
    read_field(e, "negatives", cfg.embed.negatives);
    read_field(e, "epochs", cfg.embed.epochs);
    read_field(e, "seed", cfg.embed.seed);
    read_field(e, "min_count", cfg.embed.min_count);
    read_field(e, "learning_rate", cfg.embed.learning_rate);
  }
  if (j.contains("topics")) {
    check_keys(j["topics"], "topics", {"k", "seed"});
    read_field(j["topics"], "k", cfg.n_topics);
    read_field(j["topics"], "seed", cfg.topic_seed);
  }
  auto& ex = cfg.experiment;
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"d_model", "n_layers", "n_heads", "max_timestep", "dropout"});
    read_field(m, "d_model", ex.model.d_model);
    read_field(m, "n_layers", ex.model.n_layers);
    read_field(m, "n_heads", ex.model.n_heads);
    read_field(m, "max_timestep", ex.model.max_timestep);
    read_field(m, "dropout", ex.model.dropout);
  }
  if (j.contains("opt")) read_opt(j["opt"], "opt", ex.opt);
  if (j.contains("bc_opt")) read_opt(j["bc_opt"], "bc_opt", ex.bc_opt);
  if (j.contains("scale")) ex.scale = parse_scale(j["scale"].get<std::string>());
  read_field(j, "context_k", ex.K);
  read_field(j, "fractions", ex.fractions);
  read_field(j, "seed", ex.base_seed);
  if (j.contains("condition")) ex.condition = parse_condition_filter(j["condition"].get<std::string>());
  read_field(j, "baseline", ex.with_baseline);
  read_field(j, "f64", ex.f64);
  read_field(j, "runs", cfg.runs);
  read_field(j, "jobs", cfg.jobs);
  read_field(j, "attn_windows", cfg.attn_windows);
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    check_keys(a, "ablation", {"lengths", "scales", "seeds"});
    read_field(a, "lengths", cfg.ablation.lengths);
    read_field(a, "seeds", cfg.ablation.seeds);
    if (a.contains("scales")) {
      cfg.ablation.scales.clear();
      for (const auto& s : a["scales"]) cfg.ablation.scales.push_back(parse_scale(s.get<std::string>()));
    }
  }
  if (j.contains("synthetic")) {
    const auto& s = j["synthetic"];
    check_keys(s, "synthetic", {"n_sessions", "turns_per_session", "n_topics", "seed", "chain_prob"});
    read_field(s, "n_sessions", cfg.synthetic.n_sessions);
    read_field(s, "turns_per_session", cfg.synthetic.turns_per_session);
    read_field(s, "n_topics", cfg.synthetic.n_topics);
    read_field(s, "seed", cfg.synthetic.seed);
    read_field(s, "chain_prob", cfg.synthetic.chain_prob);
  }
}

PipelineConfig load_config(const fs::path& path, PipelineConfig base) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const fs::path dir = base.data_dir;
  apply_config_json(base, text);
  // A relative data_dir in the file is taken relative to the config file.
  if (base.data_dir != dir && base.data_dir.is_relative()) base.data_dir = path.parent_path() / base.data_dir;
  return base;
}

fs::path planted_path(const fs::path& corpus) {
  fs::path p = corpus;
  return p.replace_extension(".topics.jsonl");
}

void stage_gen_synthetic(const PipelineConfig& cfg, std::ostream& out) {
  const auto corpus = generate_synthetic(cfg.synthetic);
  const auto path = cfg.resolve(cfg.paths.corpus);
  ensure_parent(path);
  write_transcripts(corpus.transcripts, path);
  write_planted(corpus.planted, planted_path(path));
  out << "wrote " << corpus.transcripts.size() << " sessions to " << path.string() << "\n";
}

void stage_ingest(const PipelineConfig& cfg, std::ostream& out) {
  const auto transcripts = load_transcripts(cfg.resolve(cfg.paths.corpus));
  const auto sessions = segment_all(transcripts);
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.pairs.size();
  const auto path = cfg.resolve(cfg.paths.pairs);
  ensure_parent(path);
  write_session_pairs(sessions, path);
  out << "segmented " << sessions.size() << " sessions into " << n << " turn-pairs\n";
}

void stage_embed(const PipelineConfig& cfg, std::ostream& out) {
  const auto sessions = load_session_pairs(cfg.resolve(cfg.paths.pairs));
  std::vector<double> losses;
  const auto v = train_sgns(pair_sentences(sessions), cfg.embed, &losses);
  const auto path = cfg.resolve(cfg.paths.vectors);
  ensure_parent(path);
  save_vectors(v, path);
  out << "trained " << v.size() << " word vectors of width " << v.dim();
  if (!losses.empty()) out << ", final epoch loss " << fixed(losses.back());
  out << "\n";
}

std::optional<double> stage_topics(const PipelineConfig& cfg, std::ostream& out) {
  const auto sessions = load_session_pairs(cfg.resolve(cfg.paths.pairs));
  const auto v = load_vectors(cfg.resolve(cfg.paths.vectors));
  std::vector<StateVector> states;
  for (const auto& s : sessions)
    for (const auto& p : s.pairs) states.push_back(embed_turn_pair(p, v));
  FitTrace trace;
  const auto m = fit_topics(states, cfg.n_topics, cfg.topic_seed, &trace);
  const auto path = cfg.resolve(cfg.paths.topics);
  ensure_parent(path);
  save_topic_model(m, path);
  out << "fitted " << m.k << " topics in " << trace.iterations << " iterations\n";
  const auto words = topic_top_words(m, v, 6);
  for (std::size_t k = 0; k < words.size(); ++k) {
    out << "  topic " << k << ":";
    for (const auto& w : words[k]) out << ' ' << w;
    out << "\n";
  }
  const auto sidecar = planted_path(cfg.resolve(cfg.paths.corpus));
  if (!fs::exists(sidecar)) return std::nullopt;
  const auto planted = load_planted(sidecar);
  std::map<std::string, const PlantedSession*> by_id;
  for (const auto& p : planted) by_id[p.session_id] = &p;
  std::vector<ActionId> pred, truth;
  std::size_t i = 0;
  for (const auto& s : sessions) {
    const auto it = by_id.find(s.session_id);
    for (std::size_t t = 0; t < s.pairs.size(); ++t, ++i) {
      if (it == by_id.end() || t >= it->second->topics.size()) continue;
      pred.push_back(assign_topic(states[i], m));
      truth.push_back(it->second->topics[t]);
    }
  }
  if (pred.empty()) return std::nullopt;
  const std::size_t k = std::max<std::size_t>(m.k, cfg.synthetic.n_topics);
  const double agree = relabeled_agreement(pred, truth, k);
  out << "planted topic agreement " << fixed(agree) << " over " << pred.size() << " turn-pairs\n";
  return agree;
}

void stage_rewards(const PipelineConfig& cfg, std::ostream& out) {
  const auto sessions = load_session_pairs(cfg.resolve(cfg.paths.pairs));
  const auto v = load_vectors(cfg.resolve(cfg.paths.vectors));
  const auto inv = load_inventory(cfg.resolve(cfg.paths.inventory), v);
  const auto path = cfg.resolve(cfg.paths.rewards);
  ensure_parent(path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  std::size_t n = 0;
  for (const auto& s : sessions) {
    json rows = json::array();
    for (const auto& p : s.pairs) {
      const auto r = score_turn_pair(embed_turn_pair(p, v), inv);
      rows.push_back({r.full, r.task, r.bond, r.goal});
      ++n;
    }
    f << json{{"session_id", s.session_id}, {"rewards", rows}}.dump() << '\n';
  }
  out << "scored " << n << " turn-pairs on " << inv.items.size() << " inventory items\n";
}

void stage_trajectories(const PipelineConfig& cfg, std::ostream& out) {
  const auto sessions = load_session_pairs(cfg.resolve(cfg.paths.pairs));
  const auto v = load_vectors(cfg.resolve(cfg.paths.vectors));
  const auto m = load_topic_model(cfg.resolve(cfg.paths.topics));
  const auto inv = load_inventory(cfg.resolve(cfg.paths.inventory), v);
  EmbedStats stats;
  std::vector<std::string> warnings;
  const auto trajs = build_trajectories(sessions, v, m, inv, &stats, &warnings);
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  const auto path = cfg.resolve(cfg.paths.trajectories);
  ensure_parent(path);
  write_trajectories(trajs, path);
  std::size_t steps = 0;
  for (const auto& t : trajs) steps += t.steps.size();
  out << "built " << trajs.size() << " trajectories with " << steps << " steps";
  if (stats.all_oov > 0) out << " (" << stats.all_oov.load() << " turn-pairs fully out of vocabulary)";
  out << "\n";
}

SeedResult stage_train(const PipelineConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto trajs = load_trajs(cfg);
  const auto& ex = cfg.experiment;
  DTConfig shape = ex.model;
  shape.K = ex.K;
  DecisionTransformer<float> model(shape);
  const auto r = run_single(trajs, ex, ex.base_seed, &model);
  const auto parts = split_sessions(filter_condition(trajs, ex.condition), ex.fractions, ex.base_seed);
  const std::map<std::string, std::string> md = {
      {kMetaScale, std::string(scale_name(ex.scale))},
      {kMetaTargetP90, fmt(return_percentile(parts[0], ex.scale, 90))},
      {"split_seed", std::to_string(ex.base_seed)},
      {"fractions", json(ex.fractions).dump()},
      {"condition", ex.condition ? std::string(condition_name(*ex.condition)) : "all"},
  };
  const auto path = cfg.resolve(cfg.paths.checkpoint);
  ensure_parent(path);
  save_checkpoint(model, md, path);
  out << "trained on " << parts[0].size() << " sessions, final batch loss " << fixed(r.final_loss) << "\n";
  out << "held-out r " << r_text(r.dt) << ", accuracy " << fixed(r.dt.accuracy) << " over " << r.dt.n_positions
      << " positions\n";
  if (r.bc) out << "baseline r " << r_text(*r.bc) << ", accuracy " << fixed(r.bc->accuracy) << "\n";
  out << "saved " << path.string() << "\n";
  return r;
}

EvalResult stage_eval_checkpoint(const PipelineConfig& cfg, const fs::path& ckpt_path, std::ostream& out) {
  const auto trajs = load_trajs(cfg);
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto scale = parse_scale(ckpt.metadata.count(kMetaScale) ? ckpt.metadata.at(kMetaScale) : "full");
  const auto parts = checkpoint_split(trajs, ckpt);
  const auto res = evaluate_pearson(ckpt.model, parts.at(1), scale);
  out << "r " << r_text(res) << ", accuracy " << fixed(res.accuracy) << " over " << res.n_positions
      << " positions\n";
  return res;
}

SeedRunSummary stage_eval_runs(const PipelineConfig& cfg, std::size_t runs, std::ostream& out) {
  cfg.validate();
  const auto trajs = load_trajs(cfg);
  const auto& ex = cfg.experiment;
  const auto s = run_seeds(trajs, ex, runs);
  const auto dir = cfg.resolve(cfg.paths.out_dir);
  fs::create_directories(dir);
  std::ofstream(dir / "eval.jsonl", std::ios::binary) << summary_records(s, ex.scale, ex.K);
  std::ostringstream text;
  for (const auto& r : s.runs) {
    text << "seed " << r.seed << ": r " << r_text(r.dt) << " acc " << fixed(r.dt.accuracy);
    if (r.bc) text << " | baseline r " << r_text(*r.bc) << " acc " << fixed(r.bc->accuracy);
    text << "\n";
  }
  text << "mean r " << fixed(s.dt_r.mean) << " +- " << fixed(s.dt_r.std) << " (" << s.dt_r.n << " defined)";
  if (ex.with_baseline) text << " | baseline mean r " << fixed(s.bc_r.mean) << " +- " << fixed(s.bc_r.std);
  text << "\n";
  std::ofstream(dir / "eval.txt", std::ios::binary) << text.str();
  out << text.str();
  return s;
}

AblationTable stage_ablate(const PipelineConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto trajs = load_trajs(cfg);
  auto ex = cfg.experiment;
  const auto t = ablate_context(trajs, ex, cfg.ablation.lengths, cfg.ablation.scales, cfg.ablation.seeds, cfg.jobs);
  const auto dir = cfg.resolve(cfg.paths.out_dir);
  fs::create_directories(dir);
  const auto table = format_ablation_table(t);
  std::ofstream(dir / "ablation.txt", std::ios::binary) << table;
  std::ofstream(dir / "ablation.jsonl", std::ios::binary) << ablation_records(t);
  out << table;
  return t;
}

void stage_attn(const PipelineConfig& cfg, const fs::path& ckpt_path, std::ostream& out) {
  const auto trajs = load_trajs(cfg);
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto scale = parse_scale(ckpt.metadata.count(kMetaScale) ? ckpt.metadata.at(kMetaScale) : "full");
  const auto parts = checkpoint_split(trajs, ckpt);
  const auto& mc = ckpt.model.config();
  auto windows = make_all_windows(parts.at(1), mc.K, scale, mc.return_scale);
  if (windows.size() > cfg.attn_windows) windows.resize(cfg.attn_windows);
  const auto rows = collect_attention(ckpt.model, std::span<const TrainingWindow>(windows));
  auto reports = aggregate_absolute(rows, true);
  const auto rel = aggregate_relative(rows);
  reports.insert(reports.end(), rel.begin(), rel.end());
  const auto dir = cfg.resolve(cfg.paths.out_dir);
  fs::create_directories(dir);
  export_report(reports, dir / "attention.csv");
  for (const auto& r : reports)
    std::ofstream(dir / ("attention_" + std::string(mode_name(r.mode)) + "_" + std::string(modality_name(r.modality)) +
                         ".svg"),
                  std::ios::binary)
        << report_svg(r);
  out << "aggregated " << rows.size() << " attention rows from " << windows.size() << " windows into "
      << reports.size() << " reports under " << dir.string() << "\n";
  for (const auto& r : rel) {
    if (r.modality != Modality::kAll) continue;
    out << "relative mass:";
    for (const auto& [k, v] : r.scores) out << ' ' << k << '=' << fixed(v, 3);
    out << "\n";
  }
}

void stage_labelgen(const PipelineConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto trajs = load_trajs(cfg);
  const auto sessions = load_session_pairs(cfg.resolve(cfg.paths.pairs));
  const auto r = run_labelgen(trajs, sessions, cfg.experiment, cfg.experiment.base_seed);
  const auto dir = cfg.resolve(cfg.paths.out_dir);
  fs::create_directories(dir);
  export_finetune_file(r.synthetic, dir / "labels_synthetic.jsonl");
  export_finetune_file(r.gold_train, dir / "labels_gold_train.jsonl");
  export_finetune_file(r.gold_test, dir / "labels_gold_test.jsonl");
  out << "partitions " << r.partitions[0].size() << "/" << r.partitions[1].size() << "/" << r.partitions[2].size()
      << " sessions; " << r.synthetic.size() << " synthetic, " << r.gold_train.size() << " gold train, "
      << r.gold_test.size() << " gold test records\n";
}

}  // namespace adt
