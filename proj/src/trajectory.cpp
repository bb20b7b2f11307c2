#include "adt/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "adt/error.hpp"
#include "adt/rng.hpp"
#include "json.hpp"

namespace adt {

using nlohmann::json;

std::size_t SessionTrajectory::labeled_count() const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < steps.size(); ++t) n += labeled(t);
  return n;
}

std::size_t TrainingWindow::real_steps() const {
  return static_cast<std::size_t>(std::count(pad_mask.begin(), pad_mask.end(), std::uint8_t{1}));
}

std::vector<SessionTrajectory> build_trajectories(const std::vector<SessionPairs>& sessions,
                                                  const VocabEmbedding& v, const TopicModel& m,
                                                  const Inventory& inv, EmbedStats* stats,
                                                  std::vector<std::string>* warnings) {
  std::vector<SessionTrajectory> out;
  for (const auto& s : sessions) {
    if (s.pairs.empty()) {
      std::string msg = "session '" + s.session_id + "' has no turn-pairs; dropped";
      if (warnings) {
        warnings->push_back(std::move(msg));
      } else {
        std::cerr << "warning: " << msg << '\n';
      }
      continue;
    }
    SessionTrajectory traj{s.session_id, s.condition, m.k, {}};
    std::vector<ActionId> topics;
    for (const auto& p : s.pairs) {
      Step step;
      step.state = embed_turn_pair(p, v, stats);
      step.rewards = score_turn_pair(step.state, inv);
      topics.push_back(assign_topic(step.state, m));
      traj.steps.push_back(std::move(step));
    }
    for (std::size_t t = 0; t < traj.steps.size(); ++t)
      traj.steps[t].action = t + 1 < topics.size() ? topics[t + 1] : static_cast<ActionId>(m.k);
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<double> returns_to_go(const std::vector<double>& rewards) {
  std::vector<double> out(rewards.size());
  double acc = 0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    out[i] = acc;
  }
  return out;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const std::vector<double>& fractions,
                                                    std::uint64_t seed) {
  if (fractions.empty()) throw ValidationError("no split fractions");
  double sum = 0;
  for (double f : fractions) {
    if (!(f > 0)) throw ValidationError("split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
  if (fractions.size() > n)
    throw ValidationError("cannot split " + std::to_string(n) + " sessions into " +
                          std::to_string(fractions.size()) + " partitions");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> parts;
  double cum = 0;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    cum += fractions[i];
    std::size_t end = i + 1 == fractions.size()
                          ? n
                          : std::min(n, static_cast<std::size_t>(std::llround(cum * static_cast<double>(n))));
    end = std::max(end, begin);
    parts.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
    begin = end;
  }
  return parts;
}

std::vector<double> scale_rewards(const SessionTrajectory& traj, RewardScale scale) {
  std::vector<double> r;
  r.reserve(traj.steps.size());
  for (const auto& s : traj.steps) r.push_back(s.rewards.get(scale));
  return r;
}

TrainingWindow window_at(const SessionTrajectory& traj, std::size_t t, std::size_t K,
                         const std::vector<double>& rtg, double return_scale) {
  if (K == 0) throw ValidationError("context length must be >= 1");
  if (!(return_scale > 0)) throw ValidationError("return scale must be positive");
  const std::size_t d = traj.steps.empty() ? 0 : traj.steps.front().state.size();
  TrainingWindow w;
  w.K = K;
  w.d_state = d;
  w.returns_to_go.assign(K, 0.0);
  w.states.assign(K * d, 0.0);
  w.actions.assign(K, static_cast<ActionId>(traj.n_actions));
  w.timesteps.assign(K, 0);
  w.pad_mask.assign(K, 0);
  const std::size_t real = std::min(t + 1, K);
  const std::size_t first = t + 1 - real;
  for (std::size_t j = 0; j < real; ++j) {
    const std::size_t slot = K - real + j;
    const std::size_t step = first + j;
    const Step& s = traj.steps[step];
    w.returns_to_go[slot] = rtg[step] / return_scale;
    std::copy(s.state.begin(), s.state.end(), w.states.begin() + static_cast<std::ptrdiff_t>(slot * d));
    w.actions[slot] = s.action;
    w.timesteps[slot] = static_cast<std::uint32_t>(step);
    w.pad_mask[slot] = 1;
  }
  return w;
}

std::vector<TrainingWindow> make_windows(const SessionTrajectory& traj, std::size_t K, RewardScale scale,
                                         double return_scale, std::size_t stride) {
  if (stride == 0) throw ValidationError("stride must be >= 1");
  const auto rtg = returns_to_go(scale_rewards(traj, scale));
  std::vector<TrainingWindow> out;
  for (std::size_t t = 0; t < traj.steps.size(); t += stride) out.push_back(window_at(traj, t, K, rtg, return_scale));
  return out;
}

std::vector<TrainingWindow> make_all_windows(const std::vector<SessionTrajectory>& trajs, std::size_t K,
                                             RewardScale scale, double return_scale, std::size_t stride) {
  std::vector<TrainingWindow> out;
  for (const auto& t : trajs) {
    auto w = make_windows(t, K, scale, return_scale, stride);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

double episode_return(const SessionTrajectory& traj, RewardScale scale) {
  double s = 0;
  for (const auto& step : traj.steps) s += step.rewards.get(scale);
  return s;
}

double default_return_scale(const std::vector<SessionTrajectory>& trajs, RewardScale scale) {
  double m = 0;
  for (const auto& t : trajs) m = std::max(m, std::abs(episode_return(t, scale)));
  return m > 0 ? m : 1.0;
}

double return_percentile(const std::vector<SessionTrajectory>& trajs, RewardScale scale, double q) {
  if (trajs.empty()) throw ValidationError("percentile of an empty set");
  std::vector<double> r;
  for (const auto& t : trajs) r.push_back(episode_return(t, scale));
  std::sort(r.begin(), r.end());
  const double pos = q / 100.0 * static_cast<double>(r.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, r.size() - 1);
  return r[lo] + (pos - static_cast<double>(lo)) * (r[hi] - r[lo]);
}

std::vector<SessionTrajectory> filter_condition(const std::vector<SessionTrajectory>& trajs,
                                                std::optional<Condition> condition) {
  if (!condition) return trajs;
  std::vector<SessionTrajectory> out;
  for (const auto& t : trajs)
    if (t.condition == *condition) out.push_back(t);
  return out;
}

void write_trajectories(const std::vector<SessionTrajectory>& trajs, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& t : trajs) {
    json steps = json::array();
    for (const auto& s : t.steps) {
      steps.push_back({{"action", s.action},
                       {"rewards", {s.rewards.full, s.rewards.task, s.rewards.bond, s.rewards.goal}},
                       {"state", s.state}});
    }
    json j = {{"session_id", t.session_id},
              {"condition", std::string(condition_name(t.condition))},
              {"n_actions", t.n_actions},
              {"steps", std::move(steps)}};
    f << j.dump() << '\n';
  }
}

std::vector<SessionTrajectory> load_trajectories(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<SessionTrajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      SessionTrajectory t;
      t.session_id = j.at("session_id").get<std::string>();
      t.condition = parse_condition(j.value("condition", std::string("other")));
      t.n_actions = j.at("n_actions").get<std::size_t>();
      for (const auto& s : j.at("steps")) {
        Step step;
        step.action = s.at("action").get<ActionId>();
        if (step.action > t.n_actions) throw ParseError("action id out of range", line_no);
        const auto& r = s.at("rewards");
        step.rewards = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()};
        step.state = s.at("state").get<std::vector<double>>();
        t.steps.push_back(std::move(step));
      }
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

}  // namespace adt
