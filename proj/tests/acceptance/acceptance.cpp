// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. All tolerances and budgets are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "adt/analysis.hpp"
#include "adt/error.hpp"
#include "adt/labelgen.hpp"
#include "adt/pipeline.hpp"
#include "adt/rng.hpp"
#include "adt/service.hpp"
#include "adt/synthetic.hpp"
#include "adt/train.hpp"
#include "cli.hpp"
#include "json.hpp"
#include "support/fixtures.hpp"
#include "support/pipeline_fixture.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace adt;

namespace {

// Gradient oracle.
constexpr double kFdStep = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr std::size_t kGradMinCoords = 200;
constexpr double kGradBudgetSec = 60;
// Causality and padding.
constexpr double kRowSumTol = 1e-6;
// Overfit.
constexpr std::size_t kOverfitWindows = 16;
constexpr std::size_t kOverfitSteps = 2000;
constexpr double kOverfitMinAcc = 0.95;
constexpr double kOverfitBudgetSec = 300;
// Oracle equivalences.
constexpr double kRtgTol = 1e-12;
constexpr double kPearsonTol = 1e-12;
constexpr std::size_t kPearsonPairs = 1000;
// End to end.
constexpr std::size_t kE2eSessions = 200, kE2eTurns = 40, kE2eSeeds = 5, kE2eK = 20;
constexpr double kMinRGap = 0.05;
constexpr double kMinRecovery = 0.90;
constexpr double kE2eBudgetSec = 1800;
// Ablation: full 4x4 grid with a reduced optimizer budget.
constexpr std::size_t kAblationSteps = 60, kAblationSeeds = 2;
// Attention.
constexpr double kReportSumTol = 1e-9;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string source_dir() { return ADT_SOURCE_DIR; }

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "adt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::cerr << "adt " << args[1] << " failed: " << err.str();
  return code;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  std::vector<json> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

void randomize(DecisionTransformer<double>& m, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& s : m.layout().specs()) {
    auto p = m.params().subspan(s.offset, s.size);
    const bool gain = s.name.ends_with(".gain");
    for (auto& x : p) x = gain ? 1.0 + 0.2 * rng.normal() : 0.3 * rng.normal();
  }
}

std::vector<TrainingWindow> random_windows(const DTConfig& c, std::uint64_t seed, std::size_t sessions,
                                           std::size_t steps) {
  Rng rng(seed);
  std::vector<TrainingWindow> out;
  for (std::size_t s = 0; s < sessions; ++s) {
    const auto traj = adt::testing::random_trajectory(rng, steps, c.d_state, c.n_actions);
    const auto w = make_windows(traj, c.K, RewardScale::kFull, 2.0);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  DTConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 1;
  c.K = 3;
  c.d_state = 8;
  c.n_actions = 4;
  c.max_timestep = 8;
  c.dropout = 0.0;
  DecisionTransformer<double> m(c);
  randomize(m, 21);
  const auto windows = random_windows(c, 4, 3, 4);
  const std::span<const TrainingWindow> batch(windows);
  const auto g = m.backward(m.forward(batch), batch);

  Rng rng(99);
  double worst = 0;
  std::size_t checked = 0;
  const std::size_t total = m.layout().total();
  for (const auto& s : m.layout().specs()) {
    // At least two coordinates per tensor, the rest proportional to size.
    const std::size_t n = std::max<std::size_t>(2, (kGradMinCoords * s.size + total - 1) / total);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = s.offset + rng.below(s.size);
      const double orig = m.params()[idx];
      m.params()[idx] = orig + kFdStep;
      const double up = loss(m.forward(batch), batch);
      m.params()[idx] = orig - kFdStep;
      const double down = loss(m.forward(batch), batch);
      m.params()[idx] = orig;
      const double numeric = (up - down) / (2 * kFdStep);
      const double analytic = g.params[idx];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  const double secs = since(t0);
  o.note(std::to_string(checked) + " coords, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s");
  o.require(checked >= kGradMinCoords, "coordinate count");
  o.require(worst <= kGradRelTol, "relative error");
  o.require(secs < kGradBudgetSec, "runtime");
  return o;
}

Outcome causality_padding() {
  Outcome o;
  DTConfig c;
  c.d_model = 16;
  c.n_layers = 3;
  c.n_heads = 2;
  c.K = 5;
  c.d_state = 6;
  c.n_actions = 4;
  c.max_timestep = 16;
  c.dropout = 0.0;
  DecisionTransformer<double> m(c);
  randomize(m, 3);

  std::size_t perturbations = 0, compared = 0, nonzero = 0;
  for (const auto& w : random_windows(c, 8, 2, 9)) {
    const auto base = m.forward(std::span<const TrainingWindow>(&w, 1));
    for (std::size_t tp = 0; tp < c.K; ++tp) {
      if (!w.pad_mask[tp]) continue;
      for (int modality = 0; modality < 3; ++modality) {
        TrainingWindow p = w;
        if (modality == 0) p.returns_to_go[tp] += 3.0;
        if (modality == 1)
          for (std::size_t j = 0; j < c.d_state; ++j) p.states[tp * c.d_state + j] -= 1.25;
        if (modality == 2) p.actions[tp] = (p.actions[tp] + 1) % c.n_actions;
        ++perturbations;
        const auto tr = m.forward(std::span<const TrainingWindow>(&p, 1));
        // Logits at state tokens strictly before the perturbed token.
        const std::size_t limit = modality == 2 ? tp + 1 : tp;
        for (std::size_t t = 0; t < limit; ++t) {
          const auto a = base.logits(0, t), b = tr.logits(0, t);
          for (std::size_t k = 0; k < c.n_actions; ++k, ++compared)
            if (a[k] != b[k]) ++nonzero;
        }
      }
    }
  }
  o.require(perturbations > 0 && compared > 0, "nothing compared");
  o.require(nonzero == 0, std::to_string(nonzero) + " earlier logits moved");

  // Padded keys and row sums, in both precisions.
  double worst_sum = 0, pad_mass = 0, future_mass = 0;
  std::size_t padded_windows = 0;
  const auto scan = [&](const auto& model, const std::vector<TrainingWindow>& ws) {
    const auto tr = model.forward(std::span<const TrainingWindow>(ws));
    const std::size_t L = 3 * c.K;
    for (std::size_t b = 0; b < ws.size(); ++b) {
      if (ws[b].real_steps() < c.K) ++padded_windows;
      for (std::size_t h = 0; h < c.n_heads; ++h)
        for (std::size_t q = 0; q < L; ++q) {
          if (!ws[b].pad_mask[q / 3]) continue;
          const auto row = tr.attention_row(b, h, q);
          double sum = 0;
          for (std::size_t k = 0; k < L; ++k) {
            sum += row[k];
            if (!ws[b].pad_mask[k / 3]) pad_mass += std::abs(static_cast<double>(row[k]));
            if (k > q) future_mass += std::abs(static_cast<double>(row[k]));
          }
          worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        }
    }
  };
  const auto ws = random_windows(c, 12, 3, 7);
  scan(m, ws);
  scan(DecisionTransformer<float>::init(c, 4), ws);
  o.note(std::to_string(perturbations) + " perturbations, " + std::to_string(compared) + " logits compared, " +
         "padded mass " + fmt("%g", pad_mass) + ", max |row sum - 1| " + fmt("%.1e", worst_sum));
  o.require(padded_windows > 0, "no padded windows");
  o.require(pad_mass == 0.0, "mass on padded keys");
  o.require(future_mass == 0.0, "mass on future keys");
  o.require(worst_sum <= kRowSumTol, "row sums");
  return o;
}

Outcome overfit() {
  Outcome o;
  const auto p = adt::testing::small_pipeline(kOverfitWindows, 12, 17);
  DTConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 3;
  cfg.K = 10;
  cfg.d_state = p.vectors.dim();
  cfg.n_actions = p.topics.k;
  cfg.max_timestep = 64;
  cfg.dropout = 0.1;
  cfg.return_scale = default_return_scale(p.trajectories, RewardScale::kFull);
  std::vector<TrainingWindow> windows;
  for (const auto& t : p.trajectories) {
    const auto rtg = returns_to_go(scale_rewards(t, RewardScale::kFull));
    // The second-to-last step: every slot of this window carries a target.
    windows.push_back(window_at(t, t.steps.size() - 2, cfg.K, rtg, cfg.return_scale));
  }
  auto model = DecisionTransformer<float>::init(cfg, 11);
  OptConfig opt;
  opt.learning_rate = 1e-3;
  opt.batch_size = kOverfitWindows;
  opt.steps = kOverfitSteps;
  opt.warmup_steps = 100;
  const auto t0 = Clock::now();
  train_dt(model, windows, opt, 5);
  const double secs = since(t0);
  const auto batch = std::span<const TrainingWindow>(windows);
  const double acc = accuracy(model.forward(batch), batch);
  o.note(std::to_string(windows.size()) + " windows, " + std::to_string(count_targets(batch, cfg.n_actions)) +
         " targets, accuracy " + fmt("%.4f", acc) + ", " + fmt("%.1f", secs) + " s");
  o.require(windows.size() == kOverfitWindows, "window count");
  o.require(acc >= kOverfitMinAcc, "accuracy");
  o.require(secs < kOverfitBudgetSec, "runtime");
  return o;
}

double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= x.size();
  my /= y.size();
  long double c = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    c += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(c / std::sqrt(vx * vy));
}

Outcome oracle_equivalences(const fs::path& work) {
  Outcome o;
  Rng rng(2024);
  double rtg_err = 0;
  for (std::size_t len : {1, 2, 7, 40, 333}) {
    std::vector<double> r(len);
    for (auto& x : r) x = rng.normal() * 3.0;
    const auto got = returns_to_go(r);
    for (std::size_t t = 0; t < len; ++t) {
      double want = 0;
      for (std::size_t j = t; j < len; ++j) want += r[j];
      rtg_err = std::max(rtg_err, std::abs(got[t] - want));
    }
  }
  double p_err = 0;
  for (std::size_t i = 0; i < kPearsonPairs; ++i) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> x(n), y(n);
    const double mix = rng.uniform() * 2 - 1;
    for (std::size_t j = 0; j < n; ++j) {
      x[j] = rng.normal();
      y[j] = mix * x[j] + rng.normal() * 0.5;
    }
    if (n == 2 && x[0] == x[1]) continue;
    p_err = std::max(p_err, std::abs(pearson(x, y) - pearson_oracle(x, y)));
  }

  DTConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.K = 6;
  c.d_state = 5;
  c.n_actions = 7;
  c.max_timestep = 32;
  c.return_scale = 2.5;
  auto model = DecisionTransformer<float>::init(c, 77);
  {
    // Move away from init so every tensor matters.
    Rng pr(5);
    for (auto& x : model.params()) x += static_cast<float>(0.05 * pr.normal());
  }
  const auto path = work / "oracle.ckpt";
  save_checkpoint(model, {{"note", "oracle"}}, path);
  const auto back = load_checkpoint(path);
  const auto ws = random_windows(c, 31, 3, 9);
  const auto a = model.forward(std::span<const TrainingWindow>(ws));
  const auto b = back.model.forward(std::span<const TrainingWindow>(ws));
  const bool params_same = std::equal(model.params().begin(), model.params().end(), back.model.params().begin(),
                                      back.model.params().end(),
                                      [](float u, float v) { return std::memcmp(&u, &v, sizeof u) == 0; });
  const bool logits_same = a.action_logits.size() == b.action_logits.size() &&
                           std::memcmp(a.action_logits.data(), b.action_logits.data(),
                                       a.action_logits.size() * sizeof(float)) == 0;
  o.note("rtg max err " + fmt("%.1e", rtg_err) + ", pearson max err " + fmt("%.1e", p_err) +
         (logits_same ? ", checkpoint forward bit-identical" : ", checkpoint forward differs"));
  o.require(rtg_err <= kRtgTol, "returns-to-go");
  o.require(p_err <= kPearsonTol, "pearson");
  o.require(params_same && logits_same, "checkpoint round trip");
  o.require(back.metadata.at("note") == "oracle", "checkpoint metadata");
  return o;
}

// Brute force over every relabeling; independent of the assignment solver.
double best_relabeling(const std::vector<ActionId>& pred, const std::vector<ActionId>& truth, std::size_t k) {
  std::vector<std::vector<std::size_t>> conf(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++conf[pred[i]][truth[i]];
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hit = 0;
    for (std::size_t a = 0; a < k; ++a) hit += conf[a][perm[a]];
    best = std::max(best, hit);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

struct E2eState {
  bool ok = false;
  PipelineConfig cfg;
};

Outcome end_to_end(const fs::path& work, E2eState& state) {
  Outcome o;
  const auto t0 = Clock::now();
  fs::copy_file(source_dir() + "/data/inventory.tsv", work / "inventory.tsv", fs::copy_options::overwrite_existing);
  const std::string config = source_dir() + "/configs/desk.json";
  const std::vector<std::string> base = {"--config", config, "--data-dir", work.string()};
  const auto run = [&](std::vector<std::string> args, std::string* text = nullptr) {
    args.insert(args.begin(), base.begin(), base.end());
    return cli(args, text) == 0;
  };
  std::string gen_text;
  for (const auto& stage : {"gen-synthetic", "ingest", "embed", "topics", "rewards", "trajectories", "train"}) {
    if (!run({stage})) {
      o.require(false, std::string("stage ") + stage);
      return o;
    }
  }
  if (!run({"eval", "--runs", std::to_string(kE2eSeeds)})) {
    o.require(false, "eval");
    return o;
  }
  const double secs = since(t0);

  state.cfg = load_config(config, PipelineConfig{});
  state.cfg.data_dir = work;
  const auto& cfg = state.cfg;
  o.require(cfg.synthetic.n_sessions == kE2eSessions && cfg.synthetic.turns_per_session == kE2eTurns,
            "config corpus size");
  o.require(cfg.experiment.K == kE2eK, "config K");

  const auto records = read_jsonl(cfg.resolve(cfg.paths.out_dir) / "eval.jsonl");
  std::vector<double> dt, bc;
  for (const auto& r : records) {
    if (!r["r"].is_null()) dt.push_back(r["r"]);
    if (r.contains("bc_r") && !r["bc_r"].is_null()) bc.push_back(r["bc_r"]);
  }
  o.require(records.size() == kE2eSeeds, "seed count");
  o.require(dt.size() == kE2eSeeds && bc.size() == kE2eSeeds, "undefined correlations");
  const auto mean = [](const std::vector<double>& v) {
    return v.empty() ? NAN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double dt_mean = mean(dt), bc_mean = mean(bc);

  // Topic recovery: assign every turn-pair, compare with the planted topics.
  const auto sessions = load_session_pairs(cfg.resolve(cfg.paths.pairs));
  const auto vectors = load_vectors(cfg.resolve(cfg.paths.vectors));
  const auto topics = load_topic_model(cfg.resolve(cfg.paths.topics));
  const auto planted = load_planted(planted_path(cfg.resolve(cfg.paths.corpus)));
  std::map<std::string, const PlantedSession*> by_id;
  for (const auto& p : planted) by_id[p.session_id] = &p;
  std::vector<ActionId> pred, truth;
  for (const auto& s : sessions) {
    const auto& pl = *by_id.at(s.session_id);
    for (const auto& tp : s.pairs) {
      pred.push_back(assign_topic(embed_turn_pair(tp, vectors), topics));
      truth.push_back(pl.topics.at(tp.index));
    }
  }
  const double recovery = best_relabeling(pred, truth, topics.k);

  o.note("DT mean r " + fmt("%.3f", dt_mean) + " vs BC " + fmt("%.3f", bc_mean) + " (gap " +
         fmt("%.3f", dt_mean - bc_mean) + "), topic recovery " + fmt("%.3f", recovery) + ", " + fmt("%.0f", secs) +
         " s");
  o.require(dt_mean - bc_mean >= kMinRGap, "DT - BC gap");
  o.require(recovery >= kMinRecovery, "topic recovery");
  o.require(secs < kE2eBudgetSec, "runtime");
  state.ok = true;
  return o;
}

Outcome ablation(const fs::path& work, const E2eState& e2e) {
  Outcome o;
  if (!e2e.ok) {
    o.require(false, "end-to-end data unavailable");
    return o;
  }
  const auto t0 = Clock::now();
  json j = json::parse(adt::testing::read_text(source_dir() + "/configs/desk.json"));
  j["opt"]["steps"] = kAblationSteps;
  j["ablation"]["seeds"] = kAblationSeeds;
  std::vector<std::string> tables;
  std::vector<std::string> records;
  for (const char* run : {"ablate_a", "ablate_b"}) {
    j["paths"]["out_dir"] = run;
    j["jobs"] = std::string(run) == "ablate_a" ? 1 : 2;
    const auto cfg_path = work / (std::string(run) + ".json");
    adt::testing::write_text(cfg_path, j.dump());
    std::string text;
    if (cli({"--config", cfg_path.string(), "--data-dir", work.string(), "ablate"}, &text) != 0) {
      o.require(false, std::string("ablate run ") + run);
      return o;
    }
    tables.push_back(text);
    records.push_back(adt::testing::read_text(work / run / "ablation.jsonl"));
  }
  const double secs = since(t0);

  // Shape: one row per scale, one column per K, one record per (scale, K, seed).
  const auto rows = read_jsonl(work / "ablate_a" / "ablation.jsonl");
  std::set<std::pair<std::string, std::size_t>> cells;
  for (const auto& r : rows) cells.insert({r["scale"].get<std::string>(), r["K"].get<std::size_t>()});
  std::size_t table_rows = 0, stars = 0;
  std::istringstream lines(tables[0]);
  for (std::string line; std::getline(lines, line);) {
    for (const auto s : kAllScales)
      if (line.rfind(std::string(scale_name(s)), 0) == 0) {
        ++table_rows;
        stars += std::count(line.begin(), line.end(), '*') > 0;
        std::istringstream cells_in(line);
        std::vector<std::string> tok{std::istream_iterator<std::string>(cells_in), {}};
        o.require(tok.size() == 5, "row with 4 entries");
      }
  }
  o.note("4x4 grid, " + std::to_string(rows.size()) + " runs, " + fmt("%.0f", secs) + " s for two runs");
  std::cout << tables[0];
  o.require(cells.size() == 16, "16 cells");
  for (const auto s : kAllScales)
    for (std::size_t K : {5, 10, 15, 20}) o.require(cells.count({std::string(scale_name(s)), K}) == 1, "missing cell");
  o.require(rows.size() == 16 * kAblationSeeds, "record count");
  o.require(table_rows == 4 && stars == 4, "table shape");
  o.require(tables[0] == tables[1] && records[0] == records[1], "rerun determinism");
  return o;
}

Outcome attention(const fs::path& work, const E2eState& e2e) {
  Outcome o;
  // Hand-built fixture: a K=2 window, query rows at steps 1 and 0. Key order
  // per step is (return, state, action); the last entry of row A is the
  // future action key of step 1.
  const auto keys_for = [](std::size_t q) {
    std::vector<AttentionKey> k;
    for (std::size_t j = 0; j < 6; ++j) {
      const std::size_t s = j / 3;
      k.push_back({static_cast<Modality>(j % 3), static_cast<std::uint32_t>(s),
                   static_cast<std::int64_t>(q) - static_cast<std::int64_t>(s), false, j > 3 * q + 1});
    }
    return k;
  };
  const std::vector<AttentionRow> rows = {{0, 1, {0.125, 0.25, 0.125, 0.25, 0.25, 0.0}, keys_for(1)},
                                          {0, 0, {0.5, 0.5, 0.0, 0.0, 0.0, 0.0}, keys_for(0)}};
  using Scores = std::map<std::int64_t, double>;
  // Manual sums: return keys carry 0.125 + 0.5 at step 0 and 0.25 at step 1.
  const double r0 = 0.125 + 0.5, r1 = 0.25, s0 = 0.25 + 0.5, s1 = 0.25, a0 = 0.125;
  const double all = r0 + r1 + s0 + s1 + a0;
  const std::map<Modality, Scores> want_abs = {
      {Modality::kReturn, {{0, r0 / (r0 + r1)}, {1, r1 / (r0 + r1)}}},
      {Modality::kState, {{0, s0 / (s0 + s1)}, {1, s1 / (s0 + s1)}}},
      {Modality::kAction, {{0, 1.0}}},
      {Modality::kAll, {{0, (r0 + s0 + a0) / all}, {1, (r1 + s1) / all}}},
  };
  // By offset (query step - key step): row A's step-0 keys sit at offset 1.
  const double ro0 = 0.25 + 0.5, ro1 = 0.125, so0 = 0.25 + 0.5, so1 = 0.25;
  const std::map<Modality, Scores> want_rel = {
      {Modality::kReturn, {{0, ro0 / (ro0 + ro1)}, {1, ro1 / (ro0 + ro1)}}},
      {Modality::kState, {{0, so0 / (so0 + so1)}, {1, so1 / (so0 + so1)}}},
      {Modality::kAction, {{1, 1.0}}},
      {Modality::kAll, {{0, (ro0 + so0) / all}, {1, (ro1 + so1 + a0) / all}}},
  };
  std::size_t exact = 0;
  for (const auto& r : aggregate_absolute(rows)) exact += want_abs.at(r.modality) == r.scores;
  for (const auto& r : aggregate_relative(rows)) exact += want_rel.at(r.modality) == r.scores;
  o.require(exact == 8, "hand fixture (" + std::to_string(exact) + "/8 reports exact)");

  if (!e2e.ok) {
    o.require(false, "end-to-end checkpoint unavailable");
    return o;
  }
  const auto& cfg = e2e.cfg;
  if (cli({"--config", source_dir() + "/configs/desk.json", "--data-dir", work.string(), "attn"}) != 0) {
    o.require(false, "attn stage");
    return o;
  }
  // Reports written by the CLI: each sums to one; relative keys never point ahead.
  std::map<std::string, double> sums;
  std::size_t negative_offsets = 0;
  {
    std::ifstream in(cfg.resolve(cfg.paths.out_dir) / "attention.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string mode, modality, key, score;
      std::getline(ss, mode, ',');
      std::getline(ss, modality, ',');
      std::getline(ss, key, ',');
      std::getline(ss, score, ',');
      sums[mode + "/" + modality] += std::stod(score);
      if (mode == "relative" && std::stoll(key) < 0) ++negative_offsets;
    }
  }
  double worst = 0;
  for (const auto& [k, v] : sums) worst = std::max(worst, std::abs(v - 1.0));
  // Row level: no weight on future keys in the trained model.
  const auto ckpt = load_checkpoint(cfg.resolve(cfg.paths.checkpoint));
  const auto trajs = load_trajectories(cfg.resolve(cfg.paths.trajectories));
  std::vector<SessionTrajectory> few(trajs.begin(), trajs.begin() + 10);
  const auto& mc = ckpt.model.config();
  const auto windows = make_all_windows(few, mc.K, RewardScale::kFull, mc.return_scale);
  double future = 0;
  for (const auto& row : collect_attention(ckpt.model, std::span<const TrainingWindow>(windows)))
    for (std::size_t k = 0; k < row.keys.size(); ++k)
      if (row.keys[k].future) future += row.weights[k];
  o.note("hand fixture exact, " + std::to_string(sums.size()) + " model reports, max |sum - 1| " +
         fmt("%.1e", worst) + ", future mass " + fmt("%g", future));
  o.require(sums.size() == 8, "eight model reports");
  o.require(worst <= kReportSumTol, "report sums");
  o.require(future == 0.0 && negative_offsets == 0, "future mass");
  return o;
}

Outcome splits_labelgen(const fs::path& work, const E2eState& e2e) {
  Outcome o;
  std::size_t checked = 0;
  for (const auto& fr : std::vector<std::vector<double>>{{0.95, 0.05}, {0.4, 0.4, 0.2}})
    for (std::size_t n : {5, 20, 57, 200, 1001})
      for (std::uint64_t seed : {1, 2, 99}) {
        const auto parts = split_indices(n, fr, seed);
        ++checked;
        o.require(parts == split_indices(n, fr, seed), "reproducible");
        o.require(parts.size() == fr.size(), "partition count");
        std::vector<std::size_t> all;
        for (std::size_t i = 0; i < parts.size(); ++i) {
          all.insert(all.end(), parts[i].begin(), parts[i].end());
          const double want = fr[i] * static_cast<double>(n);
          o.require(std::abs(static_cast<double>(parts[i].size()) - want) <= 1.0, "size within one session");
        }
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(n);
        std::iota(expect.begin(), expect.end(), 0);
        o.require(all == expect, "disjoint and exhaustive");
      }
  o.note(std::to_string(checked) + " splits checked");

  if (!e2e.ok) {
    o.require(false, "end-to-end data unavailable");
    return o;
  }
  const auto& cfg = e2e.cfg;
  if (cli({"--config", source_dir() + "/configs/desk.json", "--data-dir", work.string(), "labelgen"}) != 0) {
    o.require(false, "labelgen stage");
    return o;
  }
  // Expected middle partition, from the split alone.
  const auto trajs = load_trajectories(cfg.resolve(cfg.paths.trajectories));
  const auto mid = split_indices(trajs.size(), {0.4, 0.4, 0.2}, cfg.experiment.base_seed)[1];
  std::set<std::pair<std::string, std::size_t>> want;
  for (std::size_t i : mid)
    for (std::size_t t = 0; t < trajs[i].steps.size(); ++t) want.insert({trajs[i].session_id, t});
  const auto recs = read_jsonl(cfg.resolve(cfg.paths.out_dir) / "labels_synthetic.jsonl");
  std::set<std::pair<std::string, std::size_t>> got;
  for (const auto& r : recs) got.insert({r["session_id"].get<std::string>(), r["step_index"].get<std::size_t>()});
  o.note(std::to_string(recs.size()) + " labels for " + std::to_string(want.size()) + " middle turn-pairs");
  o.require(recs.size() == want.size() && got == want, "one record per middle turn-pair");
  return o;
}

Outcome service_parity(const E2eState& e2e) {
  Outcome o;
  if (!e2e.ok) {
    o.require(false, "end-to-end data unavailable");
    return o;
  }
  const auto& cfg = e2e.cfg;
  auto assets = std::make_shared<ServiceAssets>();
  assets->vectors = load_vectors(cfg.resolve(cfg.paths.vectors));
  assets->topics = load_topic_model(cfg.resolve(cfg.paths.topics));
  assets->inventory = load_inventory(cfg.resolve(cfg.paths.inventory), assets->vectors);
  assets->top_words = topic_top_words(assets->topics, assets->vectors, 5);
  assets->checkpoints = load_checkpoint_dir(cfg.resolve(cfg.paths.checkpoint).parent_path());
  const auto& ck = assets->checkpoints.begin()->second;
  const auto& mc = ck.model.config();

  const auto trajs = load_trajectories(cfg.resolve(cfg.paths.trajectories));
  const auto pairs = load_session_pairs(cfg.resolve(cfg.paths.pairs));
  const auto held = split_indices(trajs.size(), cfg.experiment.fractions, cfg.experiment.base_seed)[1];
  o.require(held.size() >= 2, "held-out sessions");

  SessionManager manager(assets);
  const double target = ck.target_p90;
  std::size_t compared = 0, mismatched = 0;
  // Offline oracle: the stored trajectory prefix with the last action unknown,
  // returns-to-go from the target minus the rewards already observed.
  const auto offline = [&](const SessionTrajectory& traj, std::size_t t) {
    SessionTrajectory prefix{traj.session_id, traj.condition, traj.n_actions,
                             {traj.steps.begin(), traj.steps.begin() + static_cast<std::ptrdiff_t>(t + 1)}};
    prefix.steps.back().action = static_cast<ActionId>(traj.n_actions);
    const auto rewards = scale_rewards(prefix, ck.scale);
    std::vector<double> rtg(t + 1);
    for (std::size_t i = 0; i <= t; ++i) {
      rtg[i] = target;
      for (std::size_t j = 0; j < i; ++j) rtg[i] -= rewards[j];
    }
    const auto w = window_at(prefix, t, mc.K, rtg, mc.return_scale);
    const auto tr = ck.model.forward(std::span<const TrainingWindow>(&w, 1));
    const auto z = tr.logits(0, mc.K - 1);
    double mx = z[0];
    for (float v : z) mx = std::max(mx, static_cast<double>(v));
    std::vector<double> p;
    double sum = 0;
    for (float v : z) sum += p.emplace_back(std::exp(static_cast<double>(v) - mx));
    for (auto& v : p) v /= sum;
    return p;
  };
  const auto replay = [&](std::size_t idx) {
    const auto& traj = trajs[idx];
    const auto& sp = pairs[idx];
    const auto id = manager.create(ck.id, std::nullopt, std::nullopt).id;
    std::vector<std::vector<double>> recs;
    for (const auto& tp : sp.pairs) recs.push_back(manager.ingest(id, tp.patient_text, tp.therapist_text).recommendation);
    if (sp.session_id != traj.session_id) throw ValidationError("pairs and trajectories out of order");
    return std::make_pair(id, recs);
  };

  // Sequential replay of two held-out sessions against the oracle.
  const std::size_t ia = held[0], ib = held[1];
  const auto [id_a, seq_a] = replay(ia);
  const auto [id_b, seq_b] = replay(ib);
  for (const auto& [idx, recs] : {std::pair{ia, seq_a}, std::pair{ib, seq_b}})
    for (std::size_t t = 0; t < recs.size(); ++t) {
      ++compared;
      if (recs[t] != offline(trajs[idx], t)) ++mismatched;
    }

  // Two sessions interleaved from two threads, turn by turn.
  const auto sa = manager.create(ck.id, std::nullopt, std::nullopt).id;
  const auto sb = manager.create(ck.id, std::nullopt, std::nullopt).id;
  const auto worker = [&](const std::string& id, std::size_t idx) {
    for (const auto& tp : pairs[idx].pairs) {
      manager.ingest(id, tp.patient_text, tp.therapist_text);
      std::this_thread::yield();
    }
  };
  std::thread ta(worker, sa, ia), tb(worker, sb, ib);
  ta.join();
  tb.join();
  const auto live_a = manager.get(sa), live_b = manager.get(sb);
  const bool isolated = live_a.recommendations == seq_a && live_b.recommendations == seq_b &&
                        live_a.trajectory.steps.size() == pairs[ia].pairs.size() &&
                        live_b.trajectory.steps.size() == pairs[ib].pairs.size();
  o.note(std::to_string(compared) + " live recommendations vs offline, " + std::to_string(mismatched) +
         " differ; interleaved sessions " + (isolated ? "match" : "diverge from") + " sequential replays");
  o.require(compared > 0 && mismatched == 0, "bit-identical parity");
  o.require(isolated, "session isolation");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work_dir;
  std::vector<std::string> only;
  app.add_option("--work-dir", work_dir, "keep artifacts here instead of a temporary directory");
  app.add_option("--only", only, "run only these checks");
  CLI11_PARSE(app, argc, argv);

  std::optional<adt::testing::TempDir> tmp;
  fs::path work;
  if (work_dir.empty()) {
    tmp.emplace();
    work = tmp->path();
  } else {
    work = work_dir;
    fs::create_directories(work);
  }

  E2eState e2e;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"gradient_oracle", gradient_oracle},
      {"causality_padding", causality_padding},
      {"overfit", overfit},
      {"oracle_equivalences", [&] { return oracle_equivalences(work); }},
      {"end_to_end", [&] { return end_to_end(work, e2e); }},
      {"ablation", [&] { return ablation(work, e2e); }},
      {"attention_reports", [&] { return attention(work, e2e); }},
      {"splits_labelgen", [&] { return splits_labelgen(work, e2e); }},
      {"service_parity", [&] { return service_parity(e2e); }},
  };
  const auto wanted = [&](const std::string& name) {
    if (only.empty()) return true;
    // Later checks reuse the end-to-end artifacts.
    if (name == "end_to_end")
      return std::any_of(only.begin(), only.end(), [](const std::string& s) {
        return s == "end_to_end" || s == "ablation" || s == "attention_reports" || s == "splits_labelgen" ||
               s == "service_parity";
      });
    return std::find(only.begin(), only.end(), name) != only.end();
  };

  std::size_t failed = 0, ran = 0;
  std::vector<std::string> summary;
  for (const auto& [name, fn] : checks) {
    if (!wanted(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    ++ran;
    failed += !o.pass;
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + "  " + name + ": " + o.detail;
    std::cout << line << std::endl;
    summary.push_back(line);
  }
  std::cout << "\nsummary\n";
  for (const auto& l : summary) std::cout << l << "\n";
  std::cout << (ran - failed) << "/" << ran << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
