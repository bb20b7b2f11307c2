#pragma once
// Small random trajectories and windows shared by the unit tests.

#include <string>
#include <vector>

#include "adt/rng.hpp"
#include "adt/trajectory.hpp"

namespace adt::testing {

inline SessionTrajectory random_trajectory(Rng& rng, std::size_t steps, std::size_t d_state, std::size_t n_actions,
                                           const std::string& id = "s") {
  SessionTrajectory t{id, Condition::kOther, n_actions, {}};
  for (std::size_t i = 0; i < steps; ++i) {
    Step s;
    s.state.resize(d_state);
    for (auto& x : s.state) x = rng.normal();
    s.action = i + 1 < steps ? static_cast<ActionId>(rng.below(n_actions)) : static_cast<ActionId>(n_actions);
    s.rewards = {rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5};
    t.steps.push_back(std::move(s));
  }
  return t;
}

}  // namespace adt::testing

#include <atomic>
#include <filesystem>
#include <fstream>
#include <unistd.h>

namespace adt::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("adt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace adt::testing
