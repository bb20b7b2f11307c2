#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adt/alliance.hpp"
#include "adt/corpus.hpp"
#include "adt/embed.hpp"
#include "adt/topics.hpp"

namespace adt {

// One (reward, state, action) step. `action` is the topic the counselor moved
// to next, i.e. the topic of the following turn-pair. The last step of a
// session has no observed next topic and carries the reserved id n_actions;
// such steps are conditioning context only, never a prediction target.
struct Step {
  StateVector state;
  ActionId action = 0;
  RewardVector rewards;
};

struct SessionTrajectory {
  std::string session_id;
  Condition condition = Condition::kOther;
  std::size_t n_actions = 0;
  std::vector<Step> steps;

  bool labeled(std::size_t t) const { return steps[t].action < n_actions; }
  std::size_t labeled_count() const;
};

// Left-padded context of K steps. Padded slots hold zeros, the reserved
// action id and timestep 0.
struct TrainingWindow {
  std::size_t K = 0;
  std::size_t d_state = 0;
  std::vector<double> returns_to_go;  // K, already divided by the return scale
  std::vector<double> states;         // K x d_state
  std::vector<ActionId> actions;      // K
  std::vector<std::uint32_t> timesteps;
  std::vector<std::uint8_t> pad_mask;  // 1 = real step

  std::size_t real_steps() const;
};

std::vector<SessionTrajectory> build_trajectories(const std::vector<SessionPairs>& sessions,
                                                  const VocabEmbedding& v, const TopicModel& m,
                                                  const Inventory& inv, EmbedStats* stats = nullptr,
                                                  std::vector<std::string>* warnings = nullptr);

// output[t] = rewards[t] + ... + rewards[end].
std::vector<double> returns_to_go(const std::vector<double>& rewards);

// Seeded shuffle of 0..n-1, cut at the rounded cumulative fractions.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const std::vector<double>& fractions,
                                                    std::uint64_t seed);

template <typename T>
std::vector<std::vector<T>> split_sessions(const std::vector<T>& items, const std::vector<double>& fractions,
                                           std::uint64_t seed) {
  std::vector<std::vector<T>> parts;
  for (const auto& idx : split_indices(items.size(), fractions, seed)) {
    auto& p = parts.emplace_back();
    p.reserve(idx.size());
    for (std::size_t i : idx) p.push_back(items[i]);
  }
  return parts;
}

std::vector<double> scale_rewards(const SessionTrajectory& traj, RewardScale scale);

// The window whose last real slot is step `t`. `rtg` holds the unscaled
// returns-to-go of the whole episode.
TrainingWindow window_at(const SessionTrajectory& traj, std::size_t t, std::size_t K,
                         const std::vector<double>& rtg, double return_scale);

// Windows ending at steps 0, stride, 2*stride, ...
std::vector<TrainingWindow> make_windows(const SessionTrajectory& traj, std::size_t K, RewardScale scale,
                                         double return_scale, std::size_t stride = 1);
std::vector<TrainingWindow> make_all_windows(const std::vector<SessionTrajectory>& trajs, std::size_t K,
                                             RewardScale scale, double return_scale, std::size_t stride = 1);

double episode_return(const SessionTrajectory& traj, RewardScale scale);
// Largest |episode return| over the set; 1 when every return is zero.
double default_return_scale(const std::vector<SessionTrajectory>& trajs, RewardScale scale);
// Linear-interpolated percentile (q in [0, 100]) of episode returns.
double return_percentile(const std::vector<SessionTrajectory>& trajs, RewardScale scale, double q);

std::vector<SessionTrajectory> filter_condition(const std::vector<SessionTrajectory>& trajs,
                                                std::optional<Condition> condition);

void write_trajectories(const std::vector<SessionTrajectory>& trajs, const std::filesystem::path& path);
std::vector<SessionTrajectory> load_trajectories(const std::filesystem::path& path);

}  // namespace adt
