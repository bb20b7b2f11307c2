#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adt/dtmodel.hpp"
#include "adt/optim.hpp"
#include "adt/trajectory.hpp"

namespace adt {

struct TrainLog {
  std::vector<double> loss;  // per optimizer step (training batch loss)
};

// Minibatch AdamW over `windows`, reshuffled every epoch. Throws NumericError
// on a non-finite loss.
template <typename T>
TrainLog train_dt(DecisionTransformer<T>& model, const std::vector<TrainingWindow>& windows, const OptConfig& opt,
                  std::uint64_t seed);

// Population Pearson correlation. Throws NumericError when undefined.
double pearson(std::span<const double> x, std::span<const double> y);

struct EvalResult {
  std::optional<double> pearson_r;  // empty when the correlation is undefined
  std::string error;
  std::size_t n_positions = 0;
  double accuracy = 0;
  std::vector<ActionId> predicted;
  std::vector<ActionId> truth;
};

EvalResult score_predictions(std::vector<ActionId> predicted, std::vector<ActionId> truth);

// Teacher-forced: one prediction per labeled step, read at the last state
// token of the window ending at that step. Returns-to-go come from the
// trajectory's own rewards.
template <typename T>
std::vector<ActionId> predict_actions(const DecisionTransformer<T>& model, const SessionTrajectory& traj,
                                      RewardScale scale, bool labeled_only = true);

template <typename T>
EvalResult evaluate_pearson(const DecisionTransformer<T>& model, const std::vector<SessionTrajectory>& test,
                            RewardScale scale);

// Context-free multinomial logistic regression state -> next action.
class BehaviorCloning {
 public:
  BehaviorCloning(std::size_t d_state, std::size_t n_actions);

  std::size_t predict(std::span<const double> state) const;
  std::vector<double> logits(std::span<const double> state) const;
  std::span<const double> params() const { return params_; }

  // Returns per-step training loss.
  std::vector<double> train(const std::vector<SessionTrajectory>& trajs, const OptConfig& opt, std::uint64_t seed);
  EvalResult evaluate(const std::vector<SessionTrajectory>& test) const;

 private:
  std::size_t d_state_, n_actions_;
  std::vector<double> params_;  // d_state x n_actions weights, then n_actions biases
};

struct ExperimentConfig {
  DTConfig model;  // K, d_state, n_actions and return_scale are filled per run
  OptConfig opt;
  OptConfig bc_opt;
  RewardScale scale = RewardScale::kFull;
  std::size_t K = 20;
  std::vector<double> fractions{0.95, 0.05};
  std::uint64_t base_seed = 1;
  std::optional<Condition> condition;
  bool with_baseline = true;
  bool f64 = false;  // train in 64-bit arithmetic
};

struct SeedResult {
  std::uint64_t seed = 0;
  EvalResult dt;
  std::optional<EvalResult> bc;
  double final_loss = 0;
};

struct MeanStd {
  double mean = 0, std = 0;
  std::size_t n = 0;  // number of defined values
};
MeanStd mean_std(const std::vector<double>& v);

struct SeedRunSummary {
  std::vector<SeedResult> runs;
  MeanStd dt_r, dt_acc, bc_r, bc_acc;
};

// Trains and evaluates one model for seed `seed` (split seed and model seed).
SeedResult run_single(const std::vector<SessionTrajectory>& trajs, const ExperimentConfig& cfg, std::uint64_t seed,
                      DecisionTransformer<float>* trained = nullptr);
// Seeds base_seed .. base_seed + n - 1.
SeedRunSummary run_seeds(const std::vector<SessionTrajectory>& trajs, const ExperimentConfig& cfg, std::size_t n = 5);

struct AblationCell {
  RewardScale scale;
  std::size_t K;
  SeedRunSummary summary;
  bool best = false;  // highest mean r for its scale
};

struct AblationTable {
  std::vector<std::size_t> lengths;
  std::vector<RewardScale> scales;
  std::vector<AblationCell> cells;  // scale-major

  const AblationCell& at(RewardScale s, std::size_t K) const;
};

AblationTable ablate_context(const std::vector<SessionTrajectory>& trajs, const ExperimentConfig& cfg,
                             std::vector<std::size_t> lengths = {5, 10, 15, 20},
                             std::vector<RewardScale> scales = {RewardScale::kFull, RewardScale::kTask,
                                                                RewardScale::kBond, RewardScale::kGoal},
                             std::size_t n_seeds = 5, std::size_t jobs = 1);

// Scale rows by K columns, mean r with std; best K per scale marked '*'.
std::string format_ablation_table(const AblationTable& t);
// One JSON record per (scale, K, seed).
std::string ablation_records(const AblationTable& t);
std::string summary_records(const SeedRunSummary& s, RewardScale scale, std::size_t K);

}  // namespace adt
