#include <algorithm>
#include <cmath>
#include <set>

#include "adt/error.hpp"
#include "adt/rng.hpp"
#include "adt/trajectory.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace adt;
using adt::testing::random_trajectory;

TEST_CASE("returns_to_go examples") {
  CHECK(returns_to_go({1, 2, 3}) == std::vector<double>{6, 5, 3});
  CHECK(returns_to_go({}).empty());
  CHECK(returns_to_go({-1, 1}) == std::vector<double>{0, 1});
}

TEST_CASE("returns_to_go matches a brute-force double loop") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(1 + rng.below(60));
    for (auto& x : r) x = rng.normal();
    const auto got = returns_to_go(r);
    for (std::size_t t = 0; t < r.size(); ++t) {
      double want = 0;
      for (std::size_t j = t; j < r.size(); ++j) want += r[j];
      CHECK(std::abs(got[t] - want) <= 1e-12);
    }
  }
}

TEST_CASE("split sizes follow rounded cumulative cuts") {
  auto sizes = [](std::size_t n, std::vector<double> f) {
    std::vector<std::size_t> s;
    for (const auto& p : split_indices(n, f, 3)) s.push_back(p.size());
    return s;
  };
  CHECK(sizes(20, {0.95, 0.05}) == std::vector<std::size_t>{19, 1});
  CHECK(sizes(10, {0.4, 0.4, 0.2}) == std::vector<std::size_t>{4, 4, 2});
  CHECK(sizes(200, {0.95, 0.05}) == std::vector<std::size_t>{190, 10});
  CHECK_THROWS_AS(split_indices(1, {0.5, 0.5}, 1), ValidationError);
  CHECK_THROWS_AS(split_indices(10, {0.5, 0.6}, 1), ValidationError);
}

TEST_CASE("splits are disjoint, exhaustive, size-accurate and seed-reproducible") {
  for (std::size_t n : {7, 20, 57, 200, 333})
    for (const auto& f : {std::vector<double>{0.95, 0.05}, std::vector<double>{0.4, 0.4, 0.2}}) {
      const auto a = split_indices(n, f, 42);
      CHECK(a == split_indices(n, f, 42));
      std::multiset<std::size_t> all;
      for (std::size_t p = 0; p < a.size(); ++p) {
        all.insert(a[p].begin(), a[p].end());
        CHECK(std::abs(static_cast<double>(a[p].size()) - f[p] * static_cast<double>(n)) <= 1.0);
      }
      CHECK(all.size() == n);
      CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == n);
      CHECK(*all.rbegin() == n - 1);
    }
  CHECK(split_indices(100, {0.5, 0.5}, 1) != split_indices(100, {0.5, 0.5}, 2));
}

TEST_CASE("windows are left-padded") {
  Rng rng(1);
  const auto traj = random_trajectory(rng, 3, 2, 4);
  const auto w5 = make_windows(traj, 5, RewardScale::kFull, 1.0);
  REQUIRE(w5.size() == 3);
  CHECK(w5[0].real_steps() == 1);
  CHECK(w5[1].real_steps() == 2);
  CHECK(w5[2].real_steps() == 3);
  CHECK(std::count(w5[0].pad_mask.begin(), w5[0].pad_mask.end(), 0) == 4);
  CHECK(w5[0].actions[0] == 4);  // reserved padding id
  CHECK(w5[0].timesteps[4] == 0);
  CHECK(w5[2].timesteps[4] == 2);

  const auto w2 = make_windows(traj, 2, RewardScale::kFull, 1.0);
  CHECK(w2[0].real_steps() == 1);
  CHECK(w2[1].real_steps() == 2);
  CHECK(w2[2].real_steps() == 2);
  CHECK(w2[2].states[0] == traj.steps[1].state[0]);
  CHECK(w2[2].states[2 + 1] == traj.steps[2].state[1]);
}

TEST_CASE("window returns-to-go are scaled suffix sums of the chosen scale") {
  Rng rng(2);
  auto traj = random_trajectory(rng, 6, 2, 3);
  const auto w = window_at(traj, 4, 3, returns_to_go(scale_rewards(traj, RewardScale::kBond)), 2.5);
  for (std::size_t slot = 0; slot < 3; ++slot) {
    const std::size_t t = 2 + slot;
    double want = 0;
    for (std::size_t j = t; j < traj.steps.size(); ++j) want += traj.steps[j].rewards.bond;
    CHECK(w.returns_to_go[slot] == doctest::Approx(want / 2.5).epsilon(1e-12));
  }
  for (auto& s : traj.steps) s.rewards = {};
  for (double scale : {0.1, 1.0, 7.0})
    for (const auto& win : make_windows(traj, 4, RewardScale::kFull, scale))
      for (double r : win.returns_to_go) CHECK(r == 0.0);
  CHECK_THROWS_AS(window_at(traj, 0, 0, std::vector<double>(6), 1.0), ValidationError);
}

TEST_CASE("build_trajectories recomputes each component independently") {
  VocabEmbedding v(2);
  v.set("a", StateVector{1, 0});
  v.set("b", StateVector{0, 1});
  v.set("c", StateVector{1, 1});
  const TopicModel m{2, 2, 0, {{1, 0}, {0, 1}}};
  const auto inv = make_inventory({{"a", Subscale::kTask, 1}, {"b", Subscale::kBond, 1}, {"c", Subscale::kGoal, 1}}, v);
  SessionPairs s{"s1", Condition::kAnxiety, {{"s1", 0, "a", "a"}, {"s1", 1, "b", "c b"}, {"s1", 2, "c", "a"}}};
  const auto trajs = build_trajectories({s}, v, m, inv);
  REQUIRE(trajs.size() == 1);
  const auto& t = trajs[0];
  CHECK(t.session_id == "s1");
  CHECK(t.condition == Condition::kAnxiety);
  REQUIRE(t.steps.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto state = embed_turn_pair(s.pairs[i], v);
    CHECK(t.steps[i].state == state);
    const auto r = score_turn_pair(state, inv);
    CHECK(t.steps[i].rewards.full == r.full);
    CHECK(t.steps[i].rewards.goal == r.goal);
    // Each step's action is the topic of the following turn-pair.
    if (i + 1 < 3) CHECK(t.steps[i].action == assign_topic(embed_turn_pair(s.pairs[i + 1], v), m));
  }
  CHECK(t.steps[2].action == 2);
  CHECK_FALSE(t.labeled(2));
  CHECK(t.labeled_count() == 2);
  CHECK(build_trajectories({}, v, m, inv).empty());
  std::vector<std::string> warnings;
  CHECK(build_trajectories({SessionPairs{"e", Condition::kOther, {}}}, v, m, inv, nullptr, &warnings).empty());
  CHECK(warnings.size() == 1);
}

TEST_CASE("episode returns, scales and percentiles") {
  SessionTrajectory a{"a", Condition::kDepression, 2, {}}, b{"b", Condition::kAnxiety, 2, {}};
  for (double r : {1.0, 2.0}) a.steps.push_back({{0}, 0, {r, 0, 0, -r}});
  for (double r : {-6.0}) b.steps.push_back({{0}, 2, {r, 0, 0, 0}});
  CHECK(episode_return(a, RewardScale::kFull) == 3.0);
  CHECK(episode_return(a, RewardScale::kGoal) == -3.0);
  CHECK(default_return_scale({a, b}, RewardScale::kFull) == 6.0);
  CHECK(default_return_scale({a, b}, RewardScale::kTask) == 1.0);
  // Returns {3, -6}: sorted {-6, 3}; p90 = -6 + 0.9 * 9.
  CHECK(return_percentile({a, b}, RewardScale::kFull, 90) == doctest::Approx(2.1));
  CHECK(return_percentile({a, b}, RewardScale::kFull, 0) == -6.0);
  CHECK(return_percentile({a, b}, RewardScale::kFull, 100) == 3.0);
  CHECK(filter_condition({a, b}, Condition::kAnxiety).size() == 1);
  CHECK(filter_condition({a, b}, std::nullopt).size() == 2);
}

TEST_CASE("trajectories round-trip bit-exactly") {
  adt::testing::TempDir dir;
  Rng rng(4);
  std::vector<SessionTrajectory> ts{random_trajectory(rng, 5, 3, 8, "x"), random_trajectory(rng, 1, 3, 8, "y")};
  ts[1].condition = Condition::kSuicidal;
  write_trajectories(ts, dir / "t.jsonl");
  const auto back = load_trajectories(dir / "t.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].condition == Condition::kSuicidal);
  CHECK(back[0].n_actions == 8);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < ts[i].steps.size(); ++t) {
      CHECK(back[i].steps[t].state == ts[i].steps[t].state);
      CHECK(back[i].steps[t].action == ts[i].steps[t].action);
      CHECK(back[i].steps[t].rewards.bond == ts[i].steps[t].rewards.bond);
    }
}
