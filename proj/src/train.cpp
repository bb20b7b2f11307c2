#include "adt/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "adt/error.hpp"
#include "adt/rng.hpp"
#include "json.hpp"

namespace adt {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename T>
std::vector<std::uint8_t> decay_mask(const ParamLayout& layout) {
  std::vector<std::uint8_t> mask(layout.total(), 0);
  for (const auto& s : layout.specs())
    if (s.decay) std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, std::uint8_t{1});
  return mask;
}

}  // namespace

template <typename T>
TrainLog train_dt(DecisionTransformer<T>& model, const std::vector<TrainingWindow>& windows, const OptConfig& opt,
                  std::uint64_t seed) {
  opt.validate();
  const std::size_t A = model.config().n_actions;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < windows.size(); ++i)
    if (count_targets(std::span<const TrainingWindow>(&windows[i], 1), A) > 0) usable.push_back(i);
  if (usable.empty()) throw ValidationError("no training windows with target positions");

  AdamW<T> adam(model.params().size(), opt, decay_mask<T>(model.layout()));
  Rng rng(seed);
  rng.shuffle(usable);
  std::size_t pos = 0;
  TrainLog log;
  log.loss.reserve(opt.steps);
  std::vector<TrainingWindow> batch;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    if (pos >= usable.size()) {
      rng.shuffle(usable);
      pos = 0;
    }
    const std::size_t take = std::min(opt.batch_size, usable.size() - pos);
    batch.clear();
    for (std::size_t i = 0; i < take; ++i) batch.push_back(windows[usable[pos + i]]);
    pos += take;
    const std::span<const TrainingWindow> b(batch);
    const auto trace = model.forward(b, true, mix(seed, step));
    const double l = static_cast<double>(loss(trace, b));
    if (!std::isfinite(l)) {
      char msg[96];
      std::snprintf(msg, sizeof msg, "non-finite loss at step %zu: %g", step, l);
      throw NumericError(msg);
    }
    log.loss.push_back(l);
    auto grads = model.backward(trace, b);
    clip_global_norm(std::span<T>(grads.params), opt.clip_norm);
    adam.step(model.params(), grads.params, opt.rate_at(step));
  }
  return log;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  if (x.size() < 2) throw NumericError("pearson: need at least 2 values");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw NumericError("undefined correlation: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

EvalResult score_predictions(std::vector<ActionId> predicted, std::vector<ActionId> truth) {
  EvalResult r;
  r.n_positions = predicted.size();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == truth[i];
  r.accuracy = predicted.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(predicted.size());
  std::vector<double> px(predicted.begin(), predicted.end()), ty(truth.begin(), truth.end());
  try {
    r.pearson_r = pearson(px, ty);
  } catch (const Error& e) {
    r.error = e.what();
  }
  r.predicted = std::move(predicted);
  r.truth = std::move(truth);
  return r;
}

template <typename T>
std::vector<ActionId> predict_actions(const DecisionTransformer<T>& model, const SessionTrajectory& traj,
                                      RewardScale scale, bool labeled_only) {
  const auto& cfg = model.config();
  const auto rtg = returns_to_go(scale_rewards(traj, scale));
  std::vector<ActionId> out;
  std::vector<TrainingWindow> batch;
  const auto flush = [&] {
    if (batch.empty()) return;
    const auto tr = model.forward(std::span<const TrainingWindow>(batch));
    for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(static_cast<ActionId>(argmax(tr.logits(b, cfg.K - 1))));
    batch.clear();
  };
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    if (labeled_only && !traj.labeled(t)) continue;
    batch.push_back(window_at(traj, t, cfg.K, rtg, cfg.return_scale));
    if (batch.size() == kEvalBatch) flush();
  }
  flush();
  return out;
}

template <typename T>
EvalResult evaluate_pearson(const DecisionTransformer<T>& model, const std::vector<SessionTrajectory>& test,
                            RewardScale scale) {
  std::vector<ActionId> predicted, truth;
  for (const auto& traj : test) {
    const auto p = predict_actions(model, traj, scale, true);
    predicted.insert(predicted.end(), p.begin(), p.end());
    for (std::size_t t = 0; t < traj.steps.size(); ++t)
      if (traj.labeled(t)) truth.push_back(traj.steps[t].action);
  }
  return score_predictions(std::move(predicted), std::move(truth));
}

// ---------------------------------------------------------------------------

BehaviorCloning::BehaviorCloning(std::size_t d_state, std::size_t n_actions)
    : d_state_(d_state), n_actions_(n_actions), params_((d_state + 1) * n_actions, 0.0) {}

std::vector<double> BehaviorCloning::logits(std::span<const double> state) const {
  std::vector<double> z(params_.begin() + static_cast<std::ptrdiff_t>(d_state_ * n_actions_), params_.end());
  for (std::size_t i = 0; i < d_state_; ++i)
    for (std::size_t a = 0; a < n_actions_; ++a) z[a] += state[i] * params_[i * n_actions_ + a];
  return z;
}

std::size_t BehaviorCloning::predict(std::span<const double> state) const {
  const auto z = logits(state);
  return argmax(std::span<const double>(z));
}

std::vector<double> BehaviorCloning::train(const std::vector<SessionTrajectory>& trajs, const OptConfig& opt,
                                           std::uint64_t seed) {
  opt.validate();
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    for (std::size_t t = 0; t < trajs[i].steps.size(); ++t)
      if (trajs[i].labeled(t)) samples.emplace_back(i, t);
  if (samples.empty()) throw ValidationError("no labeled steps for the behavior-cloning baseline");

  std::vector<std::uint8_t> mask(params_.size(), 0);
  std::fill_n(mask.begin(), d_state_ * n_actions_, std::uint8_t{1});
  AdamW<double> adam(params_.size(), opt, mask);
  Rng rng(seed);
  rng.shuffle(samples);
  std::size_t pos = 0;
  std::vector<double> grads(params_.size()), losses;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    if (pos >= samples.size()) {
      rng.shuffle(samples);
      pos = 0;
    }
    const std::size_t take = std::min(opt.batch_size, samples.size() - pos);
    std::fill(grads.begin(), grads.end(), 0.0);
    double l = 0;
    for (std::size_t s = 0; s < take; ++s) {
      const auto [i, t] = samples[pos + s];
      const auto& step_ref = trajs[i].steps[t];
      auto z = logits(step_ref.state);
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (double& v : z) sum += (v = std::exp(v - mx));
      l += std::log(sum) - std::log(z[step_ref.action]);
      for (std::size_t a = 0; a < n_actions_; ++a) {
        const double g = (z[a] / sum - (a == step_ref.action ? 1.0 : 0.0)) / static_cast<double>(take);
        for (std::size_t k = 0; k < d_state_; ++k) grads[k * n_actions_ + a] += g * step_ref.state[k];
        grads[d_state_ * n_actions_ + a] += g;
      }
    }
    pos += take;
    losses.push_back(l / static_cast<double>(take));
    clip_global_norm(std::span<double>(grads), opt.clip_norm);
    adam.step(params_, grads, opt.rate_at(step));
  }
  return losses;
}

EvalResult BehaviorCloning::evaluate(const std::vector<SessionTrajectory>& test) const {
  std::vector<ActionId> predicted, truth;
  for (const auto& traj : test)
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      if (!traj.labeled(t)) continue;
      predicted.push_back(static_cast<ActionId>(predict(traj.steps[t].state)));
      truth.push_back(traj.steps[t].action);
    }
  return score_predictions(std::move(predicted), std::move(truth));
}

// ---------------------------------------------------------------------------

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

namespace {

template <typename T>
SeedResult run_typed(const std::vector<SessionTrajectory>& train, const std::vector<SessionTrajectory>& test,
                     const ExperimentConfig& cfg, std::uint64_t seed, DecisionTransformer<float>* trained) {
  DTConfig mc = cfg.model;
  mc.K = cfg.K;
  mc.d_state = train.front().steps.front().state.size();
  mc.n_actions = train.front().n_actions;
  mc.return_scale = default_return_scale(train, cfg.scale);
  auto model = DecisionTransformer<T>::init(mc, seed);
  const auto windows = make_all_windows(train, mc.K, cfg.scale, mc.return_scale);
  const auto log = train_dt(model, windows, cfg.opt, seed);
  SeedResult r;
  r.seed = seed;
  r.final_loss = log.loss.empty() ? 0.0 : log.loss.back();
  r.dt = evaluate_pearson(model, test, cfg.scale);
  if (trained) {
    if constexpr (std::is_same_v<T, float>) {
      *trained = std::move(model);
    } else {
      *trained = model.template cast<float>();
    }
  }
  return r;
}

}  // namespace

SeedResult run_single(const std::vector<SessionTrajectory>& trajs, const ExperimentConfig& cfg, std::uint64_t seed,
                      DecisionTransformer<float>* trained) {
  const auto pool = filter_condition(trajs, cfg.condition);
  const auto parts = split_sessions(pool, cfg.fractions, seed);
  const auto& train = parts.at(0);
  const auto& test = parts.at(1);
  if (train.empty() || test.empty()) throw ValidationError("split produced an empty train or test partition");
  SeedResult r = cfg.f64 ? run_typed<double>(train, test, cfg, seed, trained)
                         : run_typed<float>(train, test, cfg, seed, trained);
  if (cfg.with_baseline) {
    BehaviorCloning bc(train.front().steps.front().state.size(), train.front().n_actions);
    bc.train(train, cfg.bc_opt, seed);
    r.bc = bc.evaluate(test);
  }
  return r;
}

SeedRunSummary run_seeds(const std::vector<SessionTrajectory>& trajs, const ExperimentConfig& cfg, std::size_t n) {
  if (n == 0) throw ValidationError("need at least one run");
  SeedRunSummary s;
  std::vector<double> dt_r, dt_acc, bc_r, bc_acc;
  for (std::size_t i = 0; i < n; ++i) {
    s.runs.push_back(run_single(trajs, cfg, cfg.base_seed + i));
    const auto& r = s.runs.back();
    if (r.dt.pearson_r) dt_r.push_back(*r.dt.pearson_r);
    dt_acc.push_back(r.dt.accuracy);
    if (r.bc) {
      if (r.bc->pearson_r) bc_r.push_back(*r.bc->pearson_r);
      bc_acc.push_back(r.bc->accuracy);
    }
  }
  s.dt_r = mean_std(dt_r);
  s.dt_acc = mean_std(dt_acc);
  s.bc_r = mean_std(bc_r);
  s.bc_acc = mean_std(bc_acc);
  return s;
}

const AblationCell& AblationTable::at(RewardScale s, std::size_t K) const {
  for (const auto& c : cells)
    if (c.scale == s && c.K == K) return c;
  throw NotFoundError("no ablation cell for K=" + std::to_string(K));
}

AblationTable ablate_context(const std::vector<SessionTrajectory>& trajs, const ExperimentConfig& cfg,
                             std::vector<std::size_t> lengths, std::vector<RewardScale> scales, std::size_t n_seeds,
                             std::size_t jobs) {
  AblationTable table{std::move(lengths), std::move(scales), {}};
  for (auto s : table.scales)
    for (auto k : table.lengths) table.cells.push_back({s, k, {}, false});

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(table.cells.size());
  const auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < table.cells.size();) {
      try {
        ExperimentConfig c = cfg;
        c.K = table.cells[i].K;
        c.scale = table.cells[i].scale;
        table.cells[i].summary = run_seeds(trajs, c, n_seeds);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, table.cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto s : table.scales) {
    AblationCell* best = nullptr;
    for (auto& c : table.cells)
      if (c.scale == s && c.summary.dt_r.n > 0 && (!best || c.summary.dt_r.mean > best->summary.dt_r.mean)) best = &c;
    if (best) best->best = true;
  }
  return table;
}

std::string format_ablation_table(const AblationTable& t) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "reward");
  out << buf;
  for (auto k : t.lengths) {
    std::snprintf(buf, sizeof buf, " %16s", ("K=" + std::to_string(k)).c_str());
    out << buf;
  }
  out << '\n';
  for (auto s : t.scales) {
    std::snprintf(buf, sizeof buf, "%-8s", std::string(scale_name(s)).c_str());
    out << buf;
    for (auto k : t.lengths) {
      const auto& c = t.at(s, k);
      std::string cell = "n/a";
      if (c.summary.dt_r.n > 0) {
        std::snprintf(buf, sizeof buf, "%.3f+-%.3f%s", c.summary.dt_r.mean, c.summary.dt_r.std, c.best ? "*" : "");
        cell = buf;
      }
      std::snprintf(buf, sizeof buf, " %16s", cell.c_str());
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

namespace {

nlohmann::json run_record(const SeedResult& r, RewardScale scale, std::size_t K) {
  nlohmann::json j = {{"scale", std::string(scale_name(scale))},
                      {"K", K},
                      {"seed", r.seed},
                      {"r", r.dt.pearson_r ? nlohmann::json(*r.dt.pearson_r) : nlohmann::json(nullptr)},
                      {"accuracy", r.dt.accuracy},
                      {"n_positions", r.dt.n_positions}};
  if (!r.dt.error.empty()) j["error"] = r.dt.error;
  if (r.bc) {
    j["bc_r"] = r.bc->pearson_r ? nlohmann::json(*r.bc->pearson_r) : nlohmann::json(nullptr);
    j["bc_accuracy"] = r.bc->accuracy;
  }
  return j;
}

}  // namespace

std::string summary_records(const SeedRunSummary& s, RewardScale scale, std::size_t K) {
  std::string out;
  for (const auto& r : s.runs) out += run_record(r, scale, K).dump() + "\n";
  return out;
}

std::string ablation_records(const AblationTable& t) {
  std::string out;
  for (const auto& c : t.cells) out += summary_records(c.summary, c.scale, c.K);
  return out;
}

template TrainLog train_dt(DecisionTransformer<float>&, const std::vector<TrainingWindow>&, const OptConfig&,
                           std::uint64_t);
template TrainLog train_dt(DecisionTransformer<double>&, const std::vector<TrainingWindow>&, const OptConfig&,
                           std::uint64_t);
template std::vector<ActionId> predict_actions(const DecisionTransformer<float>&, const SessionTrajectory&,
                                               RewardScale, bool);
template std::vector<ActionId> predict_actions(const DecisionTransformer<double>&, const SessionTrajectory&,
                                               RewardScale, bool);
template EvalResult evaluate_pearson(const DecisionTransformer<float>&, const std::vector<SessionTrajectory>&,
                                     RewardScale);
template EvalResult evaluate_pearson(const DecisionTransformer<double>&, const std::vector<SessionTrajectory>&,
                                     RewardScale);

}  // namespace adt
